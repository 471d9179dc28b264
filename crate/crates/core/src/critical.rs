//! Fixed-point solver for the complexity of all critical points.
//!
//! The extremum is a genuine saddle (not a sup-inf), so the solver iterates
//! the four stationarity updates on `(g, A, (lambda_c, lambda_e), lambda_A)`
//! with damping, keeping the complex Stieltjes variable in the upper half
//! plane throughout. The multiplier pair is re-solved exactly at every
//! iteration.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::loss::SingleIndexLoss;
use crate::measure::{FrozenLabelLaw, TcMeasure, TcMoments};
use crate::minima::{self, prefactor, MinimaMode, SolverOptions};
use crate::quad::QuadOptions;

/// Options of the fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct TcOptions {
    pub quad: QuadOptions,
    /// Complex regularization of the Stieltjes update.
    pub eps: f64,
    /// Initial relaxation factor; auto-halved on oscillation.
    pub damping: f64,
    /// Convergence threshold on the successive-change norm.
    pub change_tol: f64,
    pub max_iters: usize,
    /// Feasibility tolerance of the exact multiplier sub-solve.
    pub constraint_tol: f64,
}

impl Default for TcOptions {
    fn default() -> Self {
        Self {
            quad: QuadOptions::default(),
            eps: 1e-6,
            damping: 0.5,
            change_tol: 1e-9,
            max_iters: 6000,
            constraint_tol: 1e-11,
        }
    }
}

/// Saddle-point variables of the critical-point functional.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CriticalOuter {
    pub big_a: f64,
    pub g_re: f64,
    pub g_im: f64,
    pub lambda_c: f64,
    pub lambda_e: f64,
    pub lambda_a: f64,
}

/// Residuals of the four update equations at the returned point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TcResiduals {
    pub r_g: f64,
    pub r_a: f64,
    pub r_c: f64,
    pub r_e: f64,
    pub r_lambda_a: f64,
}

/// Converged fixed point of the critical-point complexity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TcSolution {
    pub sigma: f64,
    pub vars: CriticalOuter,
    pub q: f64,
    pub e_pinned: Option<f64>,
    pub e_resolved: f64,
    pub alpha: f64,
    pub eps: f64,
    pub loss_name: String,
    pub loss_params: Vec<(String, f64)>,
    pub residuals: TcResiduals,
    pub t_nu: f64,
    pub log_z: f64,
    pub converged: bool,
    pub iters: usize,
}

impl TcSolution {
    pub fn g(&self) -> Complex64 {
        Complex64::new(self.vars.g_re, self.vars.g_im)
    }

    pub fn measure<L: SingleIndexLoss + Clone>(&self, loss: &L) -> TcMeasure<L> {
        TcMeasure {
            loss: loss.clone(),
            q: self.q,
            alpha: self.alpha,
            g: self.g(),
            lambda_c: self.vars.lambda_c,
            lambda_a: self.vars.lambda_a,
            lambda_e: self.vars.lambda_e,
        }
    }

    pub fn frozen_law<L: SingleIndexLoss + Clone>(
        &self,
        loss: &L,
        opts: &QuadOptions,
    ) -> Result<FrozenLabelLaw, SolveError> {
        Ok(self.measure(loss).frozen(opts)?)
    }
}

fn measure_of<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    v: &CriticalOuter,
) -> TcMeasure<L> {
    TcMeasure {
        loss: loss.clone(),
        q,
        alpha,
        g: Complex64::new(v.g_re, v.g_im),
        lambda_c: v.lambda_c,
        lambda_a: v.lambda_a,
        lambda_e: v.lambda_e,
    }
}

/// Exact solve of the multiplier constraints `E[c_q] = 0` (and `E[l] = e`
/// when pinned) by Newton on the 1- or 2-dimensional convex dual.
fn solve_multipliers<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    v: &mut CriticalOuter,
    e_pin: Option<f64>,
    opts: &TcOptions,
) -> Result<TcMoments, SolveError> {
    let mut mom = measure_of(loss, q, alpha, v).moments(&opts.quad)?;
    for _ in 0..60 {
        let rc = mom.e_c;
        let re = e_pin.map(|e| mom.e_l - e).unwrap_or(0.0);
        if rc.abs() < opts.constraint_tol && re.abs() < opts.constraint_tol.max(1e-11 * re.abs()) {
            return Ok(mom);
        }
        match e_pin {
            None => {
                let var = mom.cov_cc.max(1e-300);
                v.lambda_c += rc / var;
            }
            Some(_) => {
                // d(E[c], E[l]) / d(lambda_c, lambda_e) = -Cov
                let det = (mom.cov_cc * mom.cov_ll - mom.cov_cl * mom.cov_cl).max(1e-300);
                v.lambda_c += (mom.cov_ll * rc - mom.cov_cl * re) / det;
                v.lambda_e += (-mom.cov_cl * rc + mom.cov_cc * re) / det;
            }
        }
        mom = measure_of(loss, q, alpha, v).moments(&opts.quad)?;
    }
    Err(SolveError::NoFixedPoint {
        iters: 60,
        last_change: mom.e_c.abs(),
    })
}

/// Default initialization from the sub-extensive-saddle solution at the
/// same point: its optimal `(A, g)` and multipliers put the iteration in
/// the attraction basin of the physical fixed point (the untilted measure
/// concentrates at enormous label values and is useless as a start).
pub fn default_tc_init<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    e_pin: Option<f64>,
    opts: &TcOptions,
) -> Result<CriticalOuter, SolveError> {
    let sopts = SolverOptions {
        quad: opts.quad,
        ..SolverOptions::default()
    };
    let fin = minima::complexity(loss, q, alpha, e_pin, MinimaMode::Fin, None, &sopts)?;
    Ok(CriticalOuter {
        big_a: fin.outer.big_a,
        g_re: fin.outer.g,
        g_im: (0.05 * fin.outer.g).max(10.0 * opts.eps),
        lambda_c: fin.multipliers.c,
        lambda_e: fin.multipliers.e,
        lambda_a: fin.multipliers.a,
    })
}

/// Assemble the complexity value at the current variables.
fn sigma_of(v: &CriticalOuter, q: f64, alpha: f64, e_term: f64, eps: f64, log_z: f64) -> f64 {
    let g_abs = (v.g_re * v.g_re + v.g_im * v.g_im).sqrt();
    prefactor(q, alpha) - 0.5 * v.big_a.ln() - g_abs.ln()
        + eps * v.g_im
        + alpha * (v.lambda_a * v.big_a + v.lambda_e * e_term)
        + alpha * log_z
}

/// Compute the critical-point complexity by damped fixed-point iteration.
pub fn complexity_tc<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    e_pin: Option<f64>,
    init: Option<CriticalOuter>,
    opts: &TcOptions,
) -> Result<TcSolution, SolveError> {
    if !(q.abs() < 1.0) {
        return Err(SolveError::BadInput(format!("|q| = {} >= 1", q.abs())));
    }
    if !(alpha > 1.0) {
        return Err(SolveError::BadInput(format!("alpha = {alpha} <= 1")));
    }
    let v_init = match init {
        Some(v) => v,
        None => default_tc_init(loss, q, alpha, e_pin, opts)?,
    };

    let mut gamma = opts.damping;
    let mut last_err = SolveError::ImCollapse { iter: 0, g_im: 0.0 };
    for _restart in 0..4 {
        match run_fixed_point(loss, q, alpha, e_pin, v_init, gamma, opts) {
            Ok(sol) => return Ok(sol),
            Err(SolveError::ImCollapse { iter, g_im }) => {
                last_err = SolveError::ImCollapse { iter, g_im };
                gamma *= 0.5;
                if gamma < 1e-3 {
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

fn run_fixed_point<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    e_pin: Option<f64>,
    v_init: CriticalOuter,
    damping0: f64,
    opts: &TcOptions,
) -> Result<TcSolution, SolveError> {
    let mut gamma = damping0;
    let mut v = v_init;
    let mut mom = solve_multipliers(loss, q, alpha, &mut v, e_pin, opts)?;
    let mut last_change = f64::INFINITY;
    let mut rising = 0usize;
    for it in 0..opts.max_iters {
        let prev = v;
        // (i) Stieltjes update.
        let denom = Complex64::new(mom.e_t, opts.eps) - alpha * mom.e_r1;
        let g_new = -1.0 / denom;
        // (ii) second-moment update; (iv) multiplier identity.
        let a_new = mom.e_a;
        let la_new = 1.0 / (2.0 * alpha * a_new);

        let g_old = Complex64::new(v.g_re, v.g_im);
        let g_next = g_old * (1.0 - gamma) + g_new * gamma;
        let a_next = v.big_a * (1.0 - gamma) + a_new * gamma;
        let la_next = v.lambda_a * (1.0 - gamma) + la_new * gamma;
        if g_next.im <= 0.0 {
            return Err(SolveError::ImCollapse {
                iter: it,
                g_im: g_next.im,
            });
        }
        let change = ((g_next - g_old).norm() / g_old.norm().max(1e-12))
            .max((a_next - v.big_a).abs() / v.big_a.abs().max(1e-12))
            .max((la_next - v.lambda_a).abs() / v.lambda_a.abs().max(1e-12));
        v.g_re = g_next.re;
        v.g_im = g_next.im;
        v.big_a = a_next;
        v.lambda_a = la_next;

        // (iii) exact multiplier solve under the updated variables.
        match solve_multipliers(loss, q, alpha, &mut v, e_pin, opts) {
            Ok(m) => mom = m,
            Err(SolveError::Quad(_)) => {
                // The damped step left the integrable region: back off.
                v = prev;
                gamma *= 0.5;
                if gamma < 1e-3 {
                    return Err(SolveError::NoFixedPoint {
                        iters: it,
                        last_change,
                    });
                }
                continue;
            }
            Err(e) => return Err(e),
        }

        if change > last_change {
            rising += 1;
            if rising >= 5 {
                gamma = (gamma * 0.5).max(0.01);
                rising = 0;
            }
        } else {
            rising = 0;
        }
        last_change = change;

        if change < opts.change_tol {
            let denom = Complex64::new(mom.e_t, opts.eps) - alpha * mom.e_r1;
            let g_cur = Complex64::new(v.g_re, v.g_im);
            let e_resolved = mom.e_l;
            let residuals = TcResiduals {
                r_g: (g_cur + 1.0 / denom).norm(),
                r_a: (v.big_a - mom.e_a).abs() / v.big_a.max(1e-300),
                r_c: mom.e_c.abs(),
                r_e: e_pin.map(|e| (mom.e_l - e).abs()).unwrap_or(0.0),
                r_lambda_a: (v.lambda_a - 1.0 / (2.0 * alpha * v.big_a)).abs(),
            };
            let e_term = e_pin.unwrap_or(e_resolved);
            let sigma = sigma_of(&v, q, alpha, e_term, opts.eps, mom.log_z);
            return Ok(TcSolution {
                sigma,
                vars: v,
                q,
                e_pinned: e_pin,
                e_resolved,
                alpha,
                eps: opts.eps,
                loss_name: loss.name().to_string(),
                loss_params: loss
                    .params()
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v))
                    .collect(),
                residuals,
                t_nu: mom.e_t,
                log_z: mom.log_z,
                converged: true,
                iters: it + 1,
            });
        }
    }
    Err(SolveError::NoFixedPoint {
        iters: opts.max_iters,
        last_change,
    })
}

/// Run the fixed point from several initializations and keep the distinct
/// solutions (distinct when `sigma` or `e` differ by more than `1e-4`).
pub fn detect_branches<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    e_pin: Option<f64>,
    inits: &[CriticalOuter],
    opts: &TcOptions,
) -> Result<Vec<TcSolution>, SolveError> {
    if inits.len() < 2 {
        return Err(SolveError::BadInput(
            "branch detection needs at least two initializations".into(),
        ));
    }
    let mut out: Vec<TcSolution> = Vec::new();
    for init in inits {
        match complexity_tc(loss, q, alpha, e_pin, Some(*init), opts) {
            Ok(sol) => {
                let dup = out.iter().any(|s| {
                    (s.sigma - sol.sigma).abs() <= 1e-4
                        && (s.e_resolved - sol.e_resolved).abs() <= 1e-4
                });
                if !dup {
                    out.push(sol);
                }
            }
            Err(SolveError::NoFixedPoint { .. }) | Err(SolveError::ImCollapse { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Continuation sweep in `alpha`: each solve is initialized from the
/// previous fixed point, reproducing branch hysteresis.
pub fn sweep_alpha<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alphas: &[f64],
    e_pin: Option<f64>,
    opts: &TcOptions,
) -> Vec<(f64, Result<TcSolution, SolveError>)> {
    let mut out = Vec::with_capacity(alphas.len());
    let mut warm: Option<CriticalOuter> = None;
    for &alpha in alphas {
        let res = complexity_tc(loss, q, alpha, e_pin, warm, opts);
        if let Ok(sol) = &res {
            warm = Some(sol.vars);
        }
        out.push((alpha, res));
    }
    out
}
