//! Exponentially tilted label laws and their moment bundles.
//!
//! The minima/saddle solver works with a tilted bivariate Gaussian whose
//! exponent collects the Lagrange multipliers of the scalar variational
//! principle; the critical-point solver uses the same machinery with a
//! complex Stieltjes variable. Converged laws can be frozen into a discrete
//! node set for fast downstream expectations (spectra, BBP functionals,
//! comparison reports).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::QuadError;
use crate::loss::SingleIndexLoss;
use crate::quad::{self, BaseGaussian, Integrand, QuadOptions};

/// Lagrange multipliers of the minima/saddle variational principle.
///
/// `h` and `star` are KKT multipliers and stay non-negative; `star` is
/// identically zero in sub-extensive-saddle mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub c: f64,
    pub a: f64,
    pub e: f64,
    pub t: f64,
    pub h: f64,
    pub star: f64,
}

/// Relative margin below which `alpha + g F` counts as the domain boundary.
const DOMAIN_MARGIN: f64 = 1e-13;

/// The nine expectations (plus the log-normalization) under a normalized
/// tilted law that drive all gradients of the variational solvers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentBundle {
    pub log_z: f64,
    /// E[A(u)]
    pub e_a: f64,
    /// E[c_q(u)]
    pub e_c: f64,
    /// E[l(u)]
    pub e_l: f64,
    /// E[t(u)]
    pub e_t: f64,
    /// E[K_q(u)]
    pub e_k: f64,
    /// E[F / (alpha + g F)]
    pub e_r1: f64,
    /// E[(g F / (alpha + g F))^2]
    pub e_r2: f64,
    /// E[F^2 / (alpha + g F)^2]
    pub e_r3: f64,
    /// E[F^2 / (alpha + g F)^3]
    pub e_r4: f64,
}

/// An exponentially tilted bivariate Gaussian law on `B_g`.
#[derive(Debug, Clone)]
pub struct TiltedMeasure<L: SingleIndexLoss> {
    pub loss: L,
    pub q: f64,
    pub alpha: f64,
    pub g: f64,
    pub m: Multipliers,
}

impl<L: SingleIndexLoss> TiltedMeasure<L> {
    pub fn new(loss: L, q: f64, alpha: f64, g: f64, m: Multipliers) -> Result<Self, QuadError> {
        if !(q.abs() < 1.0) {
            return Err(QuadError::BadInput(format!("|q| = {} >= 1", q.abs())));
        }
        if !(alpha > 1.0) {
            return Err(QuadError::BadInput(format!("alpha = {alpha} <= 1")));
        }
        if !(g > 0.0) {
            return Err(QuadError::BadInput(format!("g = {g} <= 0")));
        }
        if m.h < 0.0 || m.star < 0.0 {
            return Err(QuadError::BadInput(
                "KKT multipliers lambda_h, lambda_star must be >= 0".into(),
            ));
        }
        Ok(Self {
            loss,
            q,
            alpha,
            g,
            m,
        })
    }

    pub fn base(&self) -> BaseGaussian {
        BaseGaussian::new(self.q).expect("validated on construction")
    }

    /// Whether `B_g` covers the whole plane for this `g`.
    pub fn b_g_is_plane(&self) -> bool {
        self.alpha + self.g * self.loss.f_inf() > 0.0
    }

    /// Normalized log-density of the tilted law against Lebesgue measure.
    pub fn log_density(&self, y: f64, ys: f64, log_z: f64) -> f64 {
        let q = self.q;
        let one_m_q2 = 1.0 - q * q;
        let gauss = -(y * y - 2.0 * q * y * ys + ys * ys) / (2.0 * one_m_q2)
            - (2.0 * std::f64::consts::PI * one_m_q2.sqrt()).ln();
        gauss + self.log_weight(y, ys) - log_z
    }

    /// Tilt exponent at one label pair; `-inf` outside `B_g`.
    pub fn log_weight(&self, y: f64, ys: f64) -> f64 {
        let d = self.loss.derived(y, ys, self.q);
        let l = self.loss.value(y, ys);
        let denom = self.alpha + self.g * d.f;
        if denom <= DOMAIN_MARGIN * self.alpha {
            return f64::NEG_INFINITY;
        }
        let r1 = d.f / denom;
        let gf = self.g * d.f / denom;
        -self.m.c * d.c_q - self.m.a * d.a_sq - self.m.e * l + denom.ln()
            - (self.g + self.m.t) / self.alpha * d.t
            + self.m.t * r1
            - self.m.h * gf * gf
            + self.m.star / self.alpha * d.k_q
    }

    /// Log of the partition function `log int_{B_g} mu_q(du) exp(Phi)`.
    pub fn log_partition(&self, opts: &QuadOptions) -> Result<f64, QuadError> {
        let pass = PartitionPass { tm: self };
        let res = quad::integrate(&self.base(), &pass, opts)?;
        Ok(res.log_value0())
    }

    /// All moment-bundle expectations in one adaptive pass.
    pub fn moments(&self, opts: &QuadOptions) -> Result<MomentBundle, QuadError> {
        let pass = MomentsPass { tm: self };
        let res = quad::integrate(&self.base(), &pass, opts)?;
        Ok(bundle_from_values(&res.values, res.log_value0()))
    }

    /// Moments plus the covariance statistics of the active sufficient
    /// statistics, for Newton steps of the inner dual minimization.
    ///
    /// Component order of the statistics vector: `(c, a, e, t, h, star)`.
    pub fn newton_stats(&self, opts: &QuadOptions) -> Result<NewtonStats, QuadError> {
        let pass = NewtonPass { tm: self };
        let res = quad::integrate(&self.base(), &pass, opts)?;
        let bundle = bundle_from_values(&res.values[..10], res.log_value0());
        let mean = s_vector(&bundle, self.alpha);
        let mut cov = [[0.0; 6]; 6];
        let mut idx = 10;
        for i in 0..6 {
            for j in i..6 {
                let second = res.values[idx] / res.values[0];
                let c = second - mean[i] * mean[j];
                cov[i][j] = c;
                cov[j][i] = c;
                idx += 1;
            }
        }
        Ok(NewtonStats { bundle, mean, cov })
    }

    /// Expectation of an arbitrary function under the normalized law.
    pub fn expect(
        &self,
        f: impl Fn(f64, f64) -> f64 + Sync,
        opts: &QuadOptions,
    ) -> Result<f64, QuadError> {
        let pass = CustomPass { tm: self, f };
        let res = quad::integrate(&self.base(), &pass, opts)?;
        Ok(res.moment(1))
    }

    /// Freeze the law into a discrete node set adapted to the full moment
    /// structure (including the near-boundary spectral weights).
    pub fn frozen(&self, opts: &QuadOptions) -> Result<FrozenLabelLaw, QuadError> {
        let pass = MomentsPass { tm: self };
        let (raw_nodes, res) = quad::collect_nodes(&self.base(), &pass, opts)?;
        let z = res.values[0];
        let e_t = res.values[4] / z;
        let mut nodes = Vec::with_capacity(raw_nodes.len());
        for (y, ys, w) in raw_nodes {
            let f = self.loss.d11(y, ys);
            nodes.push(LawNode {
                y,
                ys,
                w: w / z,
                f,
            });
        }
        let f_inf = if self.b_g_is_plane() {
            self.loss.f_inf()
        } else {
            -self.alpha / self.g
        };
        Ok(FrozenLabelLaw {
            nodes,
            t_shift: e_t,
            f_inf,
            q: self.q,
        })
    }
}

/// Moments plus sufficient-statistic covariance for one Newton step.
#[derive(Debug, Clone)]
pub struct NewtonStats {
    pub bundle: MomentBundle,
    /// E[S_j] for S = (-c_q, -A, -l, -t/alpha + r1, -(gF/(alpha+gF))^2, K_q/alpha).
    pub mean: [f64; 6],
    /// Covariance of S.
    pub cov: [[f64; 6]; 6],
}

fn bundle_from_values(values: &[f64], log_z: f64) -> MomentBundle {
    let z = values[0];
    MomentBundle {
        log_z,
        e_a: values[1] / z,
        e_c: values[2] / z,
        e_l: values[3] / z,
        e_t: values[4] / z,
        e_k: values[5] / z,
        e_r1: values[6] / z,
        e_r2: values[7] / z,
        e_r3: values[8] / z,
        e_r4: values[9] / z,
    }
}

/// Mean of the sufficient statistics implied by a moment bundle.
pub fn s_vector(b: &MomentBundle, alpha: f64) -> [f64; 6] {
    [
        -b.e_c,
        -b.e_a,
        -b.e_l,
        -b.e_t / alpha + b.e_r1,
        -b.e_r2,
        b.e_k / alpha,
    ]
}

struct PartitionPass<'a, L: SingleIndexLoss> {
    tm: &'a TiltedMeasure<L>,
}

impl<L: SingleIndexLoss> Integrand for PartitionPass<'_, L> {
    fn dim(&self) -> usize {
        1
    }
    fn log_weight(&self, y: f64, ys: f64) -> f64 {
        self.tm.log_weight(y, ys)
    }
    fn components(&self, _y: f64, _ys: f64, out: &mut [f64]) {
        out[0] = 1.0;
    }
}

struct MomentsPass<'a, L: SingleIndexLoss> {
    tm: &'a TiltedMeasure<L>,
}

#[inline]
fn raw_components<L: SingleIndexLoss>(tm: &TiltedMeasure<L>, y: f64, ys: f64, out: &mut [f64]) {
    let d = tm.loss.derived(y, ys, tm.q);
    let l = tm.loss.value(y, ys);
    let denom = tm.alpha + tm.g * d.f;
    let r1 = d.f / denom;
    let gf = tm.g * r1;
    out[0] = 1.0;
    out[1] = d.a_sq;
    out[2] = d.c_q;
    out[3] = l;
    out[4] = d.t;
    out[5] = d.k_q;
    out[6] = r1;
    out[7] = gf * gf;
    out[8] = r1 * r1;
    out[9] = r1 * r1 / denom;
}

impl<L: SingleIndexLoss> Integrand for MomentsPass<'_, L> {
    fn dim(&self) -> usize {
        10
    }
    fn log_weight(&self, y: f64, ys: f64) -> f64 {
        self.tm.log_weight(y, ys)
    }
    fn components(&self, y: f64, ys: f64, out: &mut [f64]) {
        raw_components(self.tm, y, ys, out);
    }
}

struct NewtonPass<'a, L: SingleIndexLoss> {
    tm: &'a TiltedMeasure<L>,
}

impl<L: SingleIndexLoss> Integrand for NewtonPass<'_, L> {
    fn dim(&self) -> usize {
        31
    }
    fn adapt_dim(&self) -> usize {
        10
    }
    fn log_weight(&self, y: f64, ys: f64) -> f64 {
        self.tm.log_weight(y, ys)
    }
    fn components(&self, y: f64, ys: f64, out: &mut [f64]) {
        raw_components(self.tm, y, ys, out);
        let alpha = self.tm.alpha;
        let s = [
            -out[2],
            -out[1],
            -out[3],
            -out[4] / alpha + out[6],
            -out[7],
            out[5] / alpha,
        ];
        let mut idx = 10;
        for i in 0..6 {
            for j in i..6 {
                out[idx] = s[i] * s[j];
                idx += 1;
            }
        }
    }
}

struct CustomPass<'a, L: SingleIndexLoss, F: Fn(f64, f64) -> f64 + Sync> {
    tm: &'a TiltedMeasure<L>,
    f: F,
}

impl<L: SingleIndexLoss, F: Fn(f64, f64) -> f64 + Sync> Integrand for CustomPass<'_, L, F> {
    fn dim(&self) -> usize {
        2
    }
    fn log_weight(&self, y: f64, ys: f64) -> f64 {
        self.tm.log_weight(y, ys)
    }
    fn components(&self, y: f64, ys: f64, out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = (self.f)(y, ys);
    }
}

/// The critical-point tilt: complex Stieltjes variable, whole-plane domain.
#[derive(Debug, Clone)]
pub struct TcMeasure<L: SingleIndexLoss> {
    pub loss: L,
    pub q: f64,
    pub alpha: f64,
    pub g: Complex64,
    pub lambda_c: f64,
    pub lambda_a: f64,
    pub lambda_e: f64,
}

impl<L: SingleIndexLoss> TcMeasure<L> {
    pub fn base(&self) -> BaseGaussian {
        BaseGaussian::new(self.q).expect("validated upstream")
    }

    /// Normalized log-density of the tilted law against Lebesgue measure.
    pub fn log_density(&self, y: f64, ys: f64, log_z: f64) -> f64 {
        let q = self.q;
        let one_m_q2 = 1.0 - q * q;
        let gauss = -(y * y - 2.0 * q * y * ys + ys * ys) / (2.0 * one_m_q2)
            - (2.0 * std::f64::consts::PI * one_m_q2.sqrt()).ln();
        gauss + self.log_weight(y, ys) - log_z
    }

    pub fn log_weight(&self, y: f64, ys: f64) -> f64 {
        let d = self.loss.derived(y, ys, self.q);
        let l = self.loss.value(y, ys);
        let re = self.alpha + self.g.re * d.f;
        let im = self.g.im * d.f;
        let mod2 = re * re + im * im;
        -self.lambda_c * d.c_q - self.lambda_a * d.a_sq - self.lambda_e * l + 0.5 * mod2.ln()
            - self.g.re / self.alpha * d.t
    }

    /// One pass returning the TC moment set.
    pub fn moments(&self, opts: &QuadOptions) -> Result<TcMoments, QuadError> {
        let pass = TcPass { tm: self };
        let res = quad::integrate(&self.base(), &pass, opts)?;
        let z = res.values[0];
        let m = |i: usize| res.values[i] / z;
        let e_c = m(2);
        let e_l = m(3);
        Ok(TcMoments {
            log_z: res.log_value0(),
            e_a: m(1),
            e_c,
            e_l,
            e_t: m(4),
            e_r1: Complex64::new(m(5), m(6)),
            cov_cc: m(7) - e_c * e_c,
            cov_cl: m(8) - e_c * e_l,
            cov_ll: m(9) - e_l * e_l,
        })
    }

    /// Expectation of an arbitrary function under the normalized law.
    pub fn expect(
        &self,
        f: impl Fn(f64, f64) -> f64 + Sync,
        opts: &QuadOptions,
    ) -> Result<f64, QuadError> {
        let pass = TcCustomPass { tm: self, f };
        let res = quad::integrate(&self.base(), &pass, opts)?;
        Ok(res.moment(1))
    }

    /// Freeze into a discrete node-set law (used for the Hessian density at
    /// the fixed point).
    pub fn frozen(&self, opts: &QuadOptions) -> Result<FrozenLabelLaw, QuadError> {
        let pass = TcPass { tm: self };
        let (raw_nodes, res) = quad::collect_nodes(&self.base(), &pass, opts)?;
        let z = res.values[0];
        let e_t = res.values[4] / z;
        let nodes = raw_nodes
            .into_iter()
            .map(|(y, ys, w)| LawNode {
                y,
                ys,
                w: w / z,
                f: self.loss.d11(y, ys),
            })
            .collect();
        Ok(FrozenLabelLaw {
            nodes,
            t_shift: e_t,
            f_inf: self.loss.f_inf(),
            q: self.q,
        })
    }
}

struct TcPass<'a, L: SingleIndexLoss> {
    tm: &'a TcMeasure<L>,
}

impl<L: SingleIndexLoss> Integrand for TcPass<'_, L> {
    fn dim(&self) -> usize {
        10
    }
    fn log_weight(&self, y: f64, ys: f64) -> f64 {
        self.tm.log_weight(y, ys)
    }
    fn components(&self, y: f64, ys: f64, out: &mut [f64]) {
        let tm = self.tm;
        let d = tm.loss.derived(y, ys, tm.q);
        let l = tm.loss.value(y, ys);
        let re = tm.alpha + tm.g.re * d.f;
        let im = tm.g.im * d.f;
        let mod2 = re * re + im * im;
        out[0] = 1.0;
        out[1] = d.a_sq;
        out[2] = d.c_q;
        out[3] = l;
        out[4] = d.t;
        // F / (alpha + g F) = F * conj(alpha + g F) / |alpha + g F|^2
        out[5] = d.f * re / mod2;
        out[6] = -d.f * im / mod2;
        out[7] = d.c_q * d.c_q;
        out[8] = d.c_q * l;
        out[9] = l * l;
    }
}

struct TcCustomPass<'a, L: SingleIndexLoss, F: Fn(f64, f64) -> f64 + Sync> {
    tm: &'a TcMeasure<L>,
    f: F,
}

impl<L: SingleIndexLoss, F: Fn(f64, f64) -> f64 + Sync> Integrand for TcCustomPass<'_, L, F> {
    fn dim(&self) -> usize {
        2
    }
    fn log_weight(&self, y: f64, ys: f64) -> f64 {
        self.tm.log_weight(y, ys)
    }
    fn components(&self, y: f64, ys: f64, out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = (self.f)(y, ys);
    }
}

/// TC-mode moment set (complex resolvent average plus the 2x2 covariance of
/// `(c_q, l)` used by the multiplier sub-solve).
#[derive(Debug, Clone, Copy)]
pub struct TcMoments {
    pub log_z: f64,
    pub e_a: f64,
    pub e_c: f64,
    pub e_l: f64,
    pub e_t: f64,
    pub e_r1: Complex64,
    pub cov_cc: f64,
    pub cov_cl: f64,
    pub cov_ll: f64,
}

/// One atom of a frozen label law.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LawNode {
    pub y: f64,
    pub ys: f64,
    pub w: f64,
    /// Cached Hessian weight `d11(y, y*)`.
    pub f: f64,
}

/// A label law frozen into quadrature nodes: fast, deterministic
/// expectations for the spectral and BBP modules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrozenLabelLaw {
    pub nodes: Vec<LawNode>,
    /// Spherical shift t(nu) = E[y d1 l].
    pub t_shift: f64,
    /// Essential infimum of the Hessian weight on the support.
    pub f_inf: f64,
    pub q: f64,
}

impl FrozenLabelLaw {
    /// Build directly from explicit atoms (empirical samples, test laws).
    pub fn from_atoms(nodes: Vec<LawNode>, t_shift: f64, f_inf: f64, q: f64) -> Self {
        Self {
            nodes,
            t_shift,
            f_inf,
            q,
        }
    }

    /// The plain base Gaussian `mu_q` as a frozen law, with Hessian weights
    /// supplied by `weight` (decoupled from any loss).
    pub fn plain_gaussian(
        q: f64,
        weight: impl Fn(f64, f64) -> f64 + Sync,
        f_inf: f64,
        opts: &QuadOptions,
    ) -> Result<Self, QuadError> {
        let base = BaseGaussian::new(q)?;
        let pass = quad::Plain(|_y: f64, _ys: f64| 1.0);
        let (raw_nodes, res) = quad::collect_nodes(&base, &pass, opts)?;
        let z = res.values[0];
        let nodes: Vec<LawNode> = raw_nodes
            .into_iter()
            .map(|(y, ys, w)| LawNode {
                y,
                ys,
                w: w / z,
                f: weight(y, ys),
            })
            .collect();
        Ok(Self {
            nodes,
            t_shift: 0.0,
            f_inf,
            q,
        })
    }

    pub fn expect(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.nodes.iter().map(|n| n.w * f(n.y, n.ys)).sum()
    }

    pub fn expect_f(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().map(|n| n.w * h(n.f)).sum()
    }

    pub fn expect_fc(&self, h: impl Fn(f64) -> Complex64) -> Complex64 {
        self.nodes
            .iter()
            .map(|n| h(n.f) * n.w)
            .fold(Complex64::new(0.0, 0.0), |a, b| a + b)
    }

    /// Expectation weighted by the squared signal component
    /// `(y* - q y)^2 / (1 - q^2)`, as used by the BBP edge functional.
    pub fn expect_signal_weighted(&self, h: impl Fn(f64) -> f64) -> f64 {
        let one_m_q2 = 1.0 - self.q * self.q;
        self.nodes
            .iter()
            .map(|n| {
                let b = n.ys - self.q * n.y;
                n.w * b * b / one_m_q2 * h(n.f)
            })
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.iter().map(|n| n.w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::PhaseRetrievalLoss;

    fn opts() -> QuadOptions {
        QuadOptions::default()
    }

    #[test]
    fn log_partition_g_to_zero_limit_is_log_alpha() {
        let tm = TiltedMeasure::new(
            PhaseRetrievalLoss::new(0.01),
            0.0,
            4.0,
            1e-8,
            Multipliers::default(),
        )
        .unwrap();
        let lp = tm.log_partition(&opts()).unwrap();
        assert!(
            (lp - 4.0f64.ln()).abs() < 1e-4,
            "log Z = {lp}, expected ~ log 4"
        );
    }

    #[test]
    fn untilted_moments_match_plain_gaussian() {
        // g -> 0 with zero multipliers reduces to mu_q up to the constant
        // log(alpha) factor which normalizes away.
        let tm = TiltedMeasure::new(
            PhaseRetrievalLoss::new(0.01),
            0.0,
            4.0,
            1e-10,
            Multipliers::default(),
        )
        .unwrap();
        let b = tm.moments(&opts()).unwrap();
        // E[c_q] = 0 by odd symmetry at q = 0.
        assert!(b.e_c.abs() < 1e-8, "E[c_q] = {}", b.e_c);
        // E[(gF/(alpha+gF))^2] >= 0 trivially.
        assert!(b.e_r2 >= 0.0);
    }

    #[test]
    fn newton_covariance_is_psd_on_diagonal() {
        let loss = PhaseRetrievalLoss::new(0.01);
        let m = Multipliers {
            a: 1e-4,
            ..Default::default()
        };
        let tm = TiltedMeasure::new(loss, 0.0, 6.0, 0.05, m).unwrap();
        let stats = tm.newton_stats(&opts()).unwrap();
        for i in 0..6 {
            assert!(
                stats.cov[i][i] >= -1e-9,
                "diagonal covariance {i} = {}",
                stats.cov[i][i]
            );
        }
    }

    #[test]
    fn frozen_law_reproduces_moments() {
        let loss = PhaseRetrievalLoss::new(0.01);
        let m = Multipliers {
            a: 1e-4,
            ..Default::default()
        };
        let tm = TiltedMeasure::new(loss, 0.0, 6.0, 0.05, m).unwrap();
        let bundle = tm.moments(&opts()).unwrap();
        let law = tm.frozen(&opts()).unwrap();
        assert!((law.total_mass() - 1.0).abs() < 1e-10);
        let e_t = law.expect(|y, ys| y * loss.d1(y, ys));
        assert!(
            (e_t - bundle.e_t).abs() < 1e-6 * bundle.e_t.abs().max(1.0),
            "frozen E[t] = {e_t} vs pass {}",
            bundle.e_t
        );
    }
}
