//! BBP instability test for the Hessian at critical points: decides whether
//! a signal-aligned outlier detaches below the spectral bulk, locates it,
//! and finds instability thresholds in `alpha` by sign change of the edge
//! functional difference `d(alpha) = x_min - x_2`.

use serde::{Deserialize, Serialize};

use crate::error::{MpError, SolveError};
use crate::measure::FrozenLabelLaw;
use crate::mp::{self, EdgeInfo};

/// Edge functionals of the BBP test, in both unshifted (`x_*`) and shifted
/// (`w_* = x_* - t(nu)`) coordinates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BBPResult {
    pub g_min: f64,
    pub x_min: f64,
    /// Signal-direction edge functional.
    pub x2: f64,
    /// `x_min - x2`; an outlier exists when this is positive.
    pub d_alpha: f64,
    pub x_star: Option<f64>,
    pub t_nu: f64,
    pub w_min: f64,
    pub w2: f64,
    pub w_star: Option<f64>,
    /// Whether the left-edge scan hit the support bound.
    pub edge_saturated: bool,
}

impl BBPResult {
    /// CSV row matching the documented column order.
    pub fn csv_row(&self, alpha: f64, q: f64, e_tag: &str) -> String {
        use crate::mp::fmt17 as f;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            f(alpha),
            f(q),
            e_tag,
            f(self.g_min),
            f(self.x_min),
            f(self.x2),
            f(self.d_alpha),
            self.x_star.map(f).unwrap_or_else(|| "nan".into()),
            self.w_star.map(f).unwrap_or_else(|| "nan".into()),
        )
    }

    pub fn csv_header() -> &'static str {
        "alpha,q,e_tag,g_min,x_min,x2,d_alpha,x_star,w_star"
    }
}

/// The signal-direction edge functional
/// `x2(s) = alpha / (1 - q^2) E[(y* - q y)^2 F / (alpha + s F)]`.
fn x2_at(law: &FrozenLabelLaw, alpha: f64, s: f64) -> f64 {
    alpha * law.expect_signal_weighted(|f| f / (alpha + s * f))
}

/// Evaluate both edge functionals under the same law and `g_min`.
pub fn edge_functionals(law: &FrozenLabelLaw, alpha: f64) -> Result<BBPResult, MpError> {
    let edge: EdgeInfo = mp::left_edge(law, alpha)?;
    let x2 = x2_at(law, alpha, edge.g_min);
    let t = law.t_shift;
    Ok(BBPResult {
        g_min: edge.g_min,
        x_min: edge.x_min,
        x2,
        d_alpha: edge.x_min - x2,
        x_star: None,
        t_nu: t,
        w_min: edge.x_min - t,
        w2: x2 - t,
        w_star: None,
        edge_saturated: edge.saturated,
    })
}

/// Locate the outlier eigenvalue below the bulk, when present.
///
/// Solves `x = x2(g(x))` with the Stieltjes transform continued on the real
/// axis below the bulk; returns `None` when `d_alpha < 0` (no instability).
pub fn outlier_location(
    law: &FrozenLabelLaw,
    alpha: f64,
    result: &mut BBPResult,
) -> Result<Option<f64>, SolveError> {
    if result.d_alpha < 0.0 {
        return Ok(None);
    }
    let edge = EdgeInfo {
        g_min: result.g_min,
        x_min: result.x_min,
        saturated: result.edge_saturated,
    };
    let chi = |x: f64| -> Result<f64, SolveError> {
        let s = mp::real_branch_below(x, law, alpha, &edge)?;
        Ok(x2_at(law, alpha, s) - x)
    };
    // chi(x_min^-) = x2 - x_min <= 0; march down until chi > 0.
    let span = result.x_min.abs().max(1.0);
    let mut hi = result.x_min - 1e-12 * span;
    let chi_hi = chi(hi)?;
    if chi_hi > 0.0 {
        // Numerically at the threshold: the outlier sits at the edge.
        result.x_star = Some(result.x_min);
        result.w_star = Some(result.w_min);
        return Ok(Some(result.x_min));
    }
    let mut lo = hi;
    let mut found = false;
    for k in 0..60 {
        lo = result.x_min - span * 1e-6 * 2f64.powi(k);
        if chi(lo)? > 0.0 {
            found = true;
            break;
        }
        hi = lo;
    }
    if !found {
        return Err(SolveError::NoSolutionBelowEdge {
            detail: format!(
                "d_alpha = {:.3e} >= 0 but chi stays negative down to x = {lo:.6e}",
                result.d_alpha
            ),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < 1e-13 * span {
            break;
        }
    }
    let x_star = 0.5 * (lo + hi);
    let residual = chi(x_star)?.abs();
    if residual > 1e-8 * span.max(1.0) {
        return Err(SolveError::NoSolutionBelowEdge {
            detail: format!("outlier residual {residual:.3e} too large"),
        });
    }
    result.x_star = Some(x_star);
    result.w_star = Some(x_star - result.t_nu);
    Ok(Some(x_star))
}

/// Full BBP analysis: functionals plus outlier location.
pub fn analyze(law: &FrozenLabelLaw, alpha: f64) -> Result<BBPResult, SolveError> {
    let mut res = edge_functionals(law, alpha)?;
    outlier_location(law, alpha, &mut res)?;
    Ok(res)
}

/// Instability threshold in `alpha` by bisecting the sign change of
/// `d(alpha)`, regenerating the label law at every probe.
pub fn bbp_threshold(
    family: &mut dyn FnMut(f64) -> Result<FrozenLabelLaw, SolveError>,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64, SolveError> {
    let d_at = |family: &mut dyn FnMut(f64) -> Result<FrozenLabelLaw, SolveError>,
                alpha: f64|
     -> Result<f64, SolveError> {
        let law = family(alpha)?;
        Ok(edge_functionals(&law, alpha)?.d_alpha)
    };
    let (mut lo, mut hi) = bracket;
    let f_lo = d_at(family, lo)?;
    let f_hi = d_at(family, hi)?;
    if f_lo.signum() == f_hi.signum() {
        return Err(SolveError::NoSignChange {
            lo,
            hi,
            f_lo,
            f_hi,
        });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = d_at(family, mid)?;
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::QuadOptions;

    fn tight() -> QuadOptions {
        QuadOptions {
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            ..QuadOptions::default()
        }
    }

    #[test]
    fn wishart_identity_no_outlier() {
        // For unit weights under plain mu_q the alpha/(alpha+g) factors
        // cancel exactly: x_min - x2 = -1/g_min.
        for &(alpha, q) in &[(2.0, 0.0), (4.0, 0.4), (9.0, 0.0)] {
            let law = FrozenLabelLaw::plain_gaussian(q, |_, _| 1.0, 1.0, &tight()).unwrap();
            let res = edge_functionals(&law, alpha).unwrap();
            let expect = -1.0 / res.g_min;
            assert!(
                (res.d_alpha - expect).abs() < 1e-10,
                "alpha={alpha} q={q}: d={} vs {expect}",
                res.d_alpha
            );
            assert!(res.d_alpha < 0.0, "plain Wishart must be stable");
        }
    }

    #[test]
    fn stable_law_yields_no_outlier() {
        let law = FrozenLabelLaw::plain_gaussian(0.0, |_, _| 1.0, 1.0, &tight()).unwrap();
        let mut res = edge_functionals(&law, 4.0).unwrap();
        let out = outlier_location(&law, 4.0, &mut res).unwrap();
        assert!(out.is_none());
        assert!(res.x_star.is_none());
    }

    #[test]
    fn threshold_bisection_on_synthetic_family() {
        // Interpolate the weight towards a signal-heavy law as alpha grows;
        // d(alpha) then crosses zero somewhere inside the bracket.
        let mut family = |alpha: f64| -> Result<FrozenLabelLaw, SolveError> {
            let boost = 1.0 + 2.0 * (alpha - 2.0).max(0.0);
            Ok(FrozenLabelLaw::plain_gaussian(
                0.0,
                move |_y, ys| 1.0 + boost * ys * ys,
                1.0,
                &QuadOptions::default(),
            )?)
        };
        // Verify the bracket carries a sign change before bisecting.
        let d2 = edge_functionals(&family(2.0).unwrap(), 2.0).unwrap().d_alpha;
        let d9 = edge_functionals(&family(9.0).unwrap(), 9.0).unwrap().d_alpha;
        if d2.signum() != d9.signum() {
            let a = bbp_threshold(&mut family, (2.0, 9.0), 1e-2).unwrap();
            assert!(a > 2.0 && a < 9.0);
        }
    }
}
