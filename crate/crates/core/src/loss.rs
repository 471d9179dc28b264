//! Loss interface and the scalar functions of the label pair that enter the
//! variational formulas.
//!
//! Everything downstream consumes the loss only through [`SingleIndexLoss`],
//! so other single-index losses can be plugged in; the phase-retrieval
//! instance [`PhaseRetrievalLoss`] is the one that ships.

use serde::{Deserialize, Serialize};

/// A label pair `(y, y*) = (x . theta, x . theta*)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelPoint {
    pub y: f64,
    pub y_star: f64,
}

impl LabelPoint {
    pub fn new(y: f64, y_star: f64) -> Self {
        Self { y, y_star }
    }
}

/// Scalar functions of the label pair used by every variational formula.
///
/// `a_sq` is the squared first derivative, `c_q` the gradient weight along
/// the signal, `f` the Hessian weight (second derivative), `t` the spherical
/// shift weight, and `k_q` the signal-curvature weight.
#[derive(Debug, Clone, Copy)]
pub struct DerivedFunctions {
    pub a_sq: f64,
    pub c_q: f64,
    pub f: f64,
    pub t: f64,
    pub k_q: f64,
}

/// A smooth loss `l(y, y*)` with closed-form first and second partial
/// derivatives in its first argument.
///
/// Derivatives are hand-coded rather than obtained by automatic
/// differentiation: they sit in the quadrature hot loop. The test suite
/// cross-checks them against central finite differences.
pub trait SingleIndexLoss: Sync + Send {
    fn value(&self, y: f64, y_star: f64) -> f64;
    /// First partial derivative with respect to `y`.
    fn d1(&self, y: f64, y_star: f64) -> f64;
    /// Second partial derivative with respect to `y`.
    fn d11(&self, y: f64, y_star: f64) -> f64;

    /// Essential infimum of the Hessian weight `d11` over the plane.
    ///
    /// Controls when the domain `B_g = {alpha + g * d11 > 0}` stops being
    /// the whole plane.
    fn f_inf(&self) -> f64;

    /// Stable identifier for serialized records.
    fn name(&self) -> &'static str;

    /// Loss parameters for serialized records, as ordered key/value pairs.
    fn params(&self) -> Vec<(&'static str, f64)>;

    /// All derived scalar functions at one point, for overlap `q`.
    fn derived(&self, y: f64, y_star: f64, q: f64) -> DerivedFunctions {
        assert!(q.abs() < 1.0, "derived() requires |q| < 1");
        let d1 = self.d1(y, y_star);
        let f = self.d11(y, y_star);
        let one_m_q2 = 1.0 - q * q;
        let b = (y_star - q * y) / one_m_q2.sqrt();
        let t = y * d1;
        DerivedFunctions {
            a_sq: d1 * d1,
            c_q: b * d1,
            f,
            t,
            k_q: f * b * b - t,
        }
    }
}

/// The phase-retrieval loss `(y^2 - y*^2)^2 / (a + y*^2)`.
///
/// The denominator makes the loss a relative error and bounds the second
/// derivative from below by `-4`, which keeps the Hessian spectral density
/// bounded from below.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PhaseRetrievalLoss {
    pub a: f64,
}

impl PhaseRetrievalLoss {
    pub fn new(a: f64) -> Self {
        assert!(a > 0.0, "normalization parameter a must be positive");
        Self { a }
    }
}

impl SingleIndexLoss for PhaseRetrievalLoss {
    fn value(&self, y: f64, y_star: f64) -> f64 {
        let r = y * y - y_star * y_star;
        r * r / (self.a + y_star * y_star)
    }

    fn d1(&self, y: f64, y_star: f64) -> f64 {
        4.0 * y * (y * y - y_star * y_star) / (self.a + y_star * y_star)
    }

    fn d11(&self, y: f64, y_star: f64) -> f64 {
        (12.0 * y * y - 4.0 * y_star * y_star) / (self.a + y_star * y_star)
    }

    fn f_inf(&self) -> f64 {
        // d11(0, y*) = -4 y*^2 / (a + y*^2) decreases to -4 as |y*| grows.
        -4.0
    }

    fn name(&self) -> &'static str {
        "phase_retrieval"
    }

    fn params(&self) -> Vec<(&'static str, f64)> {
        vec![("a", self.a)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pl(a: f64) -> PhaseRetrievalLoss {
        PhaseRetrievalLoss::new(a)
    }

    #[test]
    fn loss_values_by_substitution() {
        assert_eq!(pl(1.0).value(1.0, 1.0), 0.0);
        assert_eq!(pl(0.37).value(1.0, 1.0), 0.0);
        assert_relative_eq!(pl(0.01).value(1.0, 0.0), 100.0, max_relative = 1e-15);
        assert_relative_eq!(pl(1.0).value(2.0, 1.0), 4.5, max_relative = 1e-15);
    }

    #[test]
    fn first_derivative_values() {
        assert_eq!(pl(1.0).d1(1.0, 1.0), 0.0);
        assert_eq!(pl(0.01).d1(0.0, 3.7), 0.0);
        assert_relative_eq!(pl(0.01).d1(1.0, 0.0), 400.0, max_relative = 1e-15);
    }

    #[test]
    fn second_derivative_values() {
        assert_relative_eq!(pl(0.01).d11(0.0, 1.0), -4.0 / 1.01, max_relative = 1e-14);
        assert_relative_eq!(pl(1.0).d11(1.0, 1.0), 4.0, max_relative = 1e-15);
        assert_eq!(pl(0.5).d11(0.0, 0.0), 0.0);
    }

    #[test]
    fn derived_functions_q0() {
        let d = pl(1.0).derived(1.0, 1.0, 0.0);
        assert_eq!(d.a_sq, 0.0);
        assert_eq!(d.c_q, 0.0);
        assert_eq!(d.t, 0.0);
        assert_relative_eq!(d.k_q, 4.0, max_relative = 1e-15);

        let d = pl(0.01).derived(1.0, 0.0, 0.0);
        assert_relative_eq!(d.a_sq, 160_000.0, max_relative = 1e-14);
        assert_eq!(d.c_q, 0.0);
        assert_relative_eq!(d.t, 400.0, max_relative = 1e-15);
    }

    #[test]
    fn derived_k_q_with_overlap() {
        let d = pl(0.01).derived(0.0, 1.0, 0.5);
        // d1 = 0 so K_q = F * (y*)^2 / (1 - q^2) = (-4/1.01) / 0.75.
        assert_relative_eq!(d.k_q, (-4.0 / 1.01) / 0.75, max_relative = 1e-14);
        assert_eq!(d.t, 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences_on_grid() {
        let loss = pl(0.01);
        let h = 1e-5;
        let n = 101;
        for i in 0..n {
            for j in 0..n {
                let y = -4.0 + 8.0 * i as f64 / (n - 1) as f64;
                let ys = -4.0 + 8.0 * j as f64 / (n - 1) as f64;
                let fd1 = (loss.value(y + h, ys) - loss.value(y - h, ys)) / (2.0 * h);
                let fd2 = (loss.d1(y + h, ys) - loss.d1(y - h, ys)) / (2.0 * h);
                let d1 = loss.d1(y, ys);
                let d2 = loss.d11(y, ys);
                let scale1 = d1.abs().max(1.0);
                let scale2 = d2.abs().max(1.0);
                assert!(
                    (fd1 - d1).abs() / scale1 < 1e-5,
                    "d1 mismatch at ({y}, {ys}): {fd1} vs {d1}"
                );
                assert!(
                    (fd2 - d2).abs() / scale2 < 1e-5,
                    "d11 mismatch at ({y}, {ys}): {fd2} vs {d2}"
                );
            }
        }
    }

    #[test]
    fn second_derivative_bounded_below_on_grid() {
        for &a in &[0.01, 0.1, 1.0] {
            let loss = pl(a);
            let mut min_f = f64::INFINITY;
            for i in 0..201 {
                for j in 0..201 {
                    let y = -8.0 + 16.0 * i as f64 / 200.0;
                    let ys = -8.0 + 16.0 * j as f64 / 200.0;
                    min_f = min_f.min(loss.d11(y, ys));
                }
            }
            assert!(min_f >= -4.0, "a = {a}: grid min {min_f} below -4");
            assert!(min_f >= loss.f_inf());
        }
    }

    #[test]
    fn even_symmetry() {
        let loss = pl(0.37);
        for &(y, ys) in &[(0.3, 1.7), (2.2, 0.1), (1.0, 1.0), (0.0, 2.0)] {
            assert_eq!(loss.value(y, ys), loss.value(-y, ys));
            assert_eq!(loss.value(y, ys), loss.value(y, -ys));
        }
    }

    #[test]
    fn a_sq_nonnegative_everywhere_sampled() {
        let loss = pl(0.1);
        for i in 0..500 {
            let y = -6.0 + 12.0 * (i as f64 / 499.0);
            let ys = 6.0 - 12.0 * ((i * 7 % 500) as f64 / 499.0);
            assert!(loss.derived(y, ys, 0.3).a_sq >= 0.0);
        }
    }

    #[test]
    #[should_panic]
    fn rejects_nonpositive_a() {
        PhaseRetrievalLoss::new(0.0);
    }
}
