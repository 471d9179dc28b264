//! Annealed Kac-Rice landscape analysis for Gaussian single-index models.
//!
//! The crate evaluates scalar variational formulas for the complexity of
//! local minima, sub-extensive-index saddles, and generic critical points of
//! the empirical risk of a single-index model, together with the induced
//! label laws, Hessian spectral densities, BBP instability thresholds, and
//! `(alpha, q)` phase diagrams. A finite-dimensional gradient-descent
//! simulator provides the experimental counterpart for validation.

pub mod bbp;
pub mod critical;
pub mod error;
pub mod gd;
pub mod loss;
pub mod measure;
pub mod minima;
pub mod mp;
pub mod quad;
pub mod report;
pub mod scan;

pub use error::{GdError, MpError, QuadError, SolveError};
pub use loss::{DerivedFunctions, LabelPoint, PhaseRetrievalLoss, SingleIndexLoss};
pub use measure::{FrozenLabelLaw, MomentBundle, Multipliers, TiltedMeasure};
pub use minima::{ComplexitySolution, EnergyBand, MinimaMode, OuterPoint};
pub use mp::{EdgeInfo, SpectrumResult, WeightLaw};
pub use quad::{BaseGaussian, QuadOptions};
