//! Nested max-min solver for the complexity of local minima (`tilde0` mode)
//! and of sub-extensive-index saddles (`fin` mode).
//!
//! The inner infimum over the Lagrange multipliers is convex and solved by a
//! projected Newton method whose Hessian is the covariance of the sufficient
//! statistics under the current tilted law (one quadrature pass per step).
//! The outer supremum runs BFGS in `(log A, log g)` with the envelope
//! gradient. KKT multipliers stay non-negative throughout, and the
//! stability guards `lambda_A >= 0` (always) and `lambda_t >= 0` (whenever
//! `B_g` is not the whole plane) are active during optimization.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{QuadError, SolveError};
use crate::loss::SingleIndexLoss;
use crate::measure::{s_vector, FrozenLabelLaw, MomentBundle, Multipliers, TiltedMeasure};
use crate::mp;
use crate::quad::QuadOptions;

/// Which complexity is being computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimaMode {
    /// Bound on local minima: signal-curvature constraint active.
    Tilde0,
    /// Sub-extensive-index saddles: `lambda_star` pinned to zero.
    Fin,
}

/// Outer variables of the variational principle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterPoint {
    /// Target second moment `A = E[A(u)]`.
    pub big_a: f64,
    /// Stieltjes transform of the Hessian bulk at its left-edge target.
    pub g: f64,
}

/// Solver tolerances and budgets.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub quad: QuadOptions,
    /// Scaled gradient-norm tolerance of the inner convex minimization.
    pub inner_tol: f64,
    /// Tolerance on the outer gradients `L_A`, `L_g`.
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Cell budget for the heavy covariance passes; infeasible points fail
    /// fast instead of exhausting the full budget.
    pub stats_max_cells: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quad: QuadOptions::default(),
            inner_tol: 1e-7,
            outer_tol: 1e-6,
            max_inner: 120,
            max_outer: 80,
            stats_max_cells: 8000,
        }
    }
}

/// Gradient components of the inner problem at the returned point, plus the
/// KKT identities that must hold at a converged optimum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    /// Relative residual `(A - E[A]) / A`.
    pub g_a: f64,
    /// `-alpha E[c_q]`.
    pub g_c: f64,
    /// `alpha (e - E[l])`; zero when `e` is free.
    pub g_e: f64,
    /// `-1/g - E[t] + alpha E[F/(alpha+gF)]`.
    pub g_t: f64,
    /// `1 - alpha E[(gF/(alpha+gF))^2]`.
    pub g_h: f64,
    /// `E[K_q]`.
    pub g_star: f64,
    /// Outer gradient `L_A = -1/(2A) + alpha lambda_A`.
    pub l_a: f64,
    /// Outer gradient `L_g`.
    pub l_g: f64,
    /// `|lambda_A - 1/(2 alpha A)|`.
    pub kkt_a: f64,
}

/// Converged value of a complexity formula plus its optimizers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexitySolution {
    pub sigma: f64,
    pub outer: OuterPoint,
    pub multipliers: Multipliers,
    pub mode: MinimaMode,
    pub q: f64,
    /// The pinned energy, when the solve was at fixed `e`.
    pub e_pinned: Option<f64>,
    /// `E[l]` under the optimal law (equals `e_pinned` when pinned).
    pub e_resolved: f64,
    pub alpha: f64,
    pub loss_name: String,
    pub loss_params: Vec<(String, f64)>,
    pub residuals: ConstraintResiduals,
    /// Spherical shift `t(nu)` of the optimal law.
    pub t_nu: f64,
    pub log_z: f64,
    pub bundle: MomentBundle,
    pub converged: bool,
    pub inner_iters: usize,
    pub outer_iters: usize,
}

impl ComplexitySolution {
    /// The induced label law as a tilted measure (requires convergence).
    pub fn label_law<L: SingleIndexLoss + Clone>(
        &self,
        loss: &L,
    ) -> Result<TiltedMeasure<L>, SolveError> {
        if !self.converged {
            return Err(SolveError::NotConverged);
        }
        Ok(TiltedMeasure::new(
            loss.clone(),
            self.q,
            self.alpha,
            self.outer.g,
            self.multipliers,
        )?)
    }

    /// Frozen node-set law for spectral and BBP consumers.
    pub fn frozen_law<L: SingleIndexLoss + Clone>(
        &self,
        loss: &L,
        opts: &QuadOptions,
    ) -> Result<FrozenLabelLaw, SolveError> {
        Ok(self.label_law(loss)?.frozen(opts)?)
    }
}

/// `(-1 + (1 - 2 alpha) log alpha)/2 + log(1 - q^2)/2`.
pub fn prefactor(q: f64, alpha: f64) -> f64 {
    0.5 * (-1.0 + (1.0 - 2.0 * alpha) * alpha.ln()) + 0.5 * (1.0 - q * q).ln()
}

// Index convention for the multiplier vector: (c, a, e, t, h, star).
const N_MULT: usize = 6;
const IDX_A: usize = 1;
const IDX_E: usize = 2;
const IDX_T: usize = 3;
const IDX_H: usize = 4;
const IDX_STAR: usize = 5;

fn mult_to_vec(m: &Multipliers) -> [f64; N_MULT] {
    [m.c, m.a, m.e, m.t, m.h, m.star]
}

fn vec_to_mult(v: &[f64; N_MULT]) -> Multipliers {
    Multipliers {
        c: v[0],
        a: v[IDX_A],
        e: v[IDX_E],
        t: v[IDX_T],
        h: v[IDX_H],
        star: v[IDX_STAR],
    }
}

/// Result of the inner convex minimization.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub m: Multipliers,
    pub bundle: MomentBundle,
    /// Value of the braces of the variational formula (including the
    /// `-log A / 2 - log g` terms).
    pub bracket: f64,
    pub pg_norm: f64,
    pub iters: usize,
}

struct InnerProblem<'a, L: SingleIndexLoss + Clone> {
    loss: &'a L,
    q: f64,
    alpha: f64,
    outer: OuterPoint,
    e_pin: Option<f64>,
    /// Lower bounds per multiplier (`-inf` = free).
    lb: [f64; N_MULT],
    /// Whether the variable participates at all.
    active: [bool; N_MULT],
    /// Gradient scale per component, for the scaled convergence test.
    scale: [f64; N_MULT],
}

impl<'a, L: SingleIndexLoss + Clone> InnerProblem<'a, L> {
    fn new(
        loss: &'a L,
        q: f64,
        alpha: f64,
        outer: OuterPoint,
        e_pin: Option<f64>,
        mode: MinimaMode,
    ) -> Self {
        let b_g_plane = alpha + outer.g * loss.f_inf() > 0.0;
        let mut lb = [f64::NEG_INFINITY; N_MULT];
        lb[IDX_A] = 0.0;
        lb[IDX_H] = 0.0;
        lb[IDX_STAR] = 0.0;
        if !b_g_plane {
            lb[IDX_T] = 0.0;
        }
        let mut active = [true; N_MULT];
        active[IDX_E] = e_pin.is_some();
        active[IDX_STAR] = mode == MinimaMode::Tilde0;
        let mut scale = [1.0; N_MULT];
        scale[IDX_A] = (alpha * outer.big_a).max(1.0);
        scale[IDX_E] = (alpha * e_pin.unwrap_or(0.0).abs()).max(1.0);
        scale[IDX_T] = (1.0 / outer.g).max(1.0);
        Self {
            loss,
            q,
            alpha,
            outer,
            e_pin,
            lb,
            active,
            scale,
        }
    }

    fn measure(&self, v: &[f64; N_MULT]) -> Result<TiltedMeasure<L>, QuadError> {
        TiltedMeasure::new(
            self.loss.clone(),
            self.q,
            self.alpha,
            self.outer.g,
            vec_to_mult(v),
        )
    }

    /// Linear part of the objective gradient per multiplier.
    fn linear(&self) -> [f64; N_MULT] {
        [
            0.0,
            self.alpha * self.outer.big_a,
            self.alpha * self.e_pin.unwrap_or(0.0),
            -1.0 / self.outer.g,
            1.0,
            0.0,
        ]
    }

    /// Objective value (the braces, without the `-log A/2 - log g` part).
    fn objective(&self, v: &[f64; N_MULT], log_z: f64) -> f64 {
        let lin = self.linear();
        let mut obj = self.alpha * log_z;
        for j in 0..N_MULT {
            obj += lin[j] * v[j];
        }
        obj
    }

    fn gradient(&self, bundle: &MomentBundle) -> [f64; N_MULT] {
        let s = s_vector(bundle, self.alpha);
        let lin = self.linear();
        let mut g = [0.0; N_MULT];
        for j in 0..N_MULT {
            g[j] = lin[j] + self.alpha * s[j];
        }
        g
    }

    fn projected_gradient_norm(&self, v: &[f64; N_MULT], grad: &[f64; N_MULT]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..N_MULT {
            if !self.active[j] {
                continue;
            }
            let pg = if v[j] <= self.lb[j] {
                grad[j].min(0.0)
            } else {
                grad[j]
            };
            worst = worst.max((pg / self.scale[j]).abs());
        }
        worst
    }

    fn clamp(&self, v: &mut [f64; N_MULT]) {
        for j in 0..N_MULT {
            if !self.active[j] {
                v[j] = 0.0;
            } else if v[j] < self.lb[j] {
                v[j] = self.lb[j];
            }
        }
    }
}

/// Inner convex minimization over the Lagrange multipliers at a fixed outer
/// point; projected Newton with the exact covariance Hessian.
pub fn inner_minimize<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    outer: OuterPoint,
    e_pin: Option<f64>,
    mode: MinimaMode,
    warm: Option<Multipliers>,
    opts: &SolverOptions,
) -> Result<InnerSolution, SolveError> {
    let prob = InnerProblem::new(loss, q, alpha, outer, e_pin, mode);
    let mut v = mult_to_vec(&warm.unwrap_or_default());
    prob.clamp(&mut v);
    // With a boundary in B_g the zero-tilt moments diverge; start strictly
    // inside the differentiable region.
    if prob.lb[IDX_T] == 0.0 && v[IDX_T] < 1e-2 {
        v[IDX_T] = 5e-2;
    }

    let diverged = || SolveError::InnerDiverged {
        big_a: outer.big_a,
        g: outer.g,
    };

    let stats_quad = QuadOptions {
        max_cells: opts.stats_max_cells,
        ..opts.quad
    };
    let mut stats = prob
        .measure(&v)?
        .newton_stats(&stats_quad)
        .map_err(|_| diverged())?;
    let mut obj = prob.objective(&v, stats.bundle.log_z);
    let mut iters = 0;

    let finish = |v: &[f64; N_MULT], obj: f64, bundle: MomentBundle, pg: f64, iters: usize| {
        InnerSolution {
            m: vec_to_mult(v),
            bracket: -0.5 * outer.big_a.ln() - outer.g.ln() + obj,
            bundle,
            pg_norm: pg,
            iters,
        }
    };

    for it in 0..opts.max_inner {
        iters = it + 1;
        let grad = prob.gradient(&stats.bundle);
        let pg = prob.projected_gradient_norm(&v, &grad);
        if pg < opts.inner_tol {
            return Ok(finish(&v, obj, stats.bundle, pg, iters));
        }

        // Free set: variables not clamped at a bound with an outward
        // gradient.
        let mut free = [false; N_MULT];
        for j in 0..N_MULT {
            free[j] = prob.active[j] && !(v[j] <= prob.lb[j] && grad[j] > 0.0);
        }

        // Newton direction on the free set, Jacobi-scaled for conditioning.
        let mut h = SMatrix::<f64, N_MULT, N_MULT>::identity();
        let mut b = SVector::<f64, N_MULT>::zeros();
        let mut d_scale = [1.0; N_MULT];
        for j in 0..N_MULT {
            if free[j] {
                d_scale[j] = stats.cov[j][j].max(1e-300).sqrt().max(1e-12);
            }
        }
        for i in 0..N_MULT {
            for j in 0..N_MULT {
                if free[i] && free[j] {
                    h[(i, j)] = prob.alpha * stats.cov[i][j] / (d_scale[i] * d_scale[j]);
                    if i == j {
                        h[(i, j)] += 1e-11;
                    }
                } else {
                    h[(i, j)] = if i == j { 1.0 } else { 0.0 };
                }
            }
            b[i] = if free[i] { -grad[i] / d_scale[i] } else { 0.0 };
        }
        let mut dir = [0.0; N_MULT];
        match h.lu().solve(&b) {
            Some(sol) => {
                for j in 0..N_MULT {
                    if free[j] {
                        dir[j] = sol[j] / d_scale[j];
                    }
                }
            }
            None => {
                for j in 0..N_MULT {
                    if free[j] {
                        dir[j] = -grad[j] / (prob.alpha * stats.cov[j][j].max(1e-12));
                    }
                }
            }
        }
        let mut slope: f64 = (0..N_MULT).map(|j| grad[j] * dir[j]).sum();
        if !(slope < 0.0) {
            for j in 0..N_MULT {
                dir[j] = if free[j] {
                    -grad[j] / (prob.alpha * stats.cov[j][j].max(1e-12))
                } else {
                    0.0
                };
            }
            slope = (0..N_MULT).map(|j| grad[j] * dir[j]).sum();
            if !(slope < 0.0) {
                // No descent direction left: numerical floor reached.
                return Ok(finish(&v, obj, stats.bundle, pg, iters));
            }
        }

        // Projected backtracking line search on the partition pass.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..45 {
            let mut trial = v;
            for j in 0..N_MULT {
                trial[j] += step * dir[j];
            }
            prob.clamp(&mut trial);
            let moved: f64 = (0..N_MULT).map(|j| grad[j] * (trial[j] - v[j])).sum();
            if trial == v {
                break;
            }
            match prob.measure(&trial)?.log_partition(&opts.quad) {
                Ok(log_z) => {
                    let obj_t = prob.objective(&trial, log_z);
                    if obj_t <= obj + 1e-4 * moved.min(0.0) {
                        accepted = Some((trial, obj_t));
                        break;
                    }
                }
                Err(QuadError::BadInput(msg)) => return Err(QuadError::BadInput(msg).into()),
                Err(_) => {}
            }
            step *= 0.5;
        }
        let Some((trial, obj_t)) = accepted else {
            // Line search could not make progress; report the best point.
            return Ok(finish(&v, obj, stats.bundle, pg, iters));
        };
        v = trial;
        obj = obj_t;
        if obj < -1e10 || v.iter().any(|x| x.abs() > 1e8) {
            return Err(diverged());
        }
        stats = prob
            .measure(&v)?
            .newton_stats(&stats_quad)
            .map_err(|_| diverged())?;
        obj = prob.objective(&v, stats.bundle.log_z);
    }

    let grad = prob.gradient(&stats.bundle);
    let pg = prob.projected_gradient_norm(&v, &grad);
    Ok(finish(&v, obj, stats.bundle, pg, iters))
}

/// Envelope gradients of the outer objective.
fn outer_gradients(
    m: &Multipliers,
    b: &MomentBundle,
    outer: &OuterPoint,
    alpha: f64,
) -> (f64, f64) {
    let l_a = -0.5 / outer.big_a + alpha * m.a;
    let g = outer.g;
    let l_g = -1.0 / g + m.t / (g * g) - b.e_t + alpha * b.e_r1
        - alpha * m.t * b.e_r3
        - 2.0 * alpha * alpha * g * m.h * b.e_r4;
    (l_a, l_g)
}

/// Default outer initialization: `A = E_{mu_q}[A(u)]` and `g` at 90% of the
/// untilted weight law's edge Stieltjes value.
pub fn default_outer_init<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    opts: &SolverOptions,
) -> Result<OuterPoint, SolveError> {
    let base = crate::quad::BaseGaussian::new(q)?;
    let big_a = crate::quad::expect_plain(&base, |y, ys| loss.derived(y, ys, q).a_sq, &opts.quad)?;
    let law = FrozenLabelLaw::plain_gaussian(q, |y, ys| loss.d11(y, ys), loss.f_inf(), &opts.quad)?;
    let edge = mp::left_edge(&law, alpha)?;
    Ok(OuterPoint {
        big_a,
        g: 0.9 * edge.g_min,
    })
}

/// Compute one complexity value via the nested max-min principle.
pub fn complexity<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    e_pin: Option<f64>,
    mode: MinimaMode,
    init: Option<OuterPoint>,
    opts: &SolverOptions,
) -> Result<ComplexitySolution, SolveError> {
    if !(q.abs() < 1.0) {
        return Err(SolveError::BadInput(format!("|q| = {} >= 1", q.abs())));
    }
    if !(alpha > 1.0) {
        return Err(SolveError::BadInput(format!("alpha = {alpha} <= 1")));
    }
    let outer0 = match init {
        Some(p) => p,
        None => default_outer_init(loss, q, alpha, opts)?,
    };

    // x = (log A, log g); maximize bracket(x).
    let mut x = [outer0.big_a.ln(), outer0.g.ln()];
    let mut warm: Option<Multipliers> = None;

    let eval = |x: &[f64; 2], warm: &Option<Multipliers>| -> Result<InnerSolution, SolveError> {
        let outer = OuterPoint {
            big_a: x[0].exp(),
            g: x[1].exp(),
        };
        inner_minimize(loss, q, alpha, outer, e_pin, mode, *warm, opts)
    };

    let mut sol = eval(&x, &warm)?;
    warm = Some(sol.m);
    let mut hinv = [[1.0, 0.0], [0.0, 1.0]];
    let mut converged = false;
    let mut outer_iters = 0;
    let grad_at = |x: &[f64; 2], s: &InnerSolution| -> [f64; 2] {
        let outer = OuterPoint {
            big_a: x[0].exp(),
            g: x[1].exp(),
        };
        let (l_a, l_g) = outer_gradients(&s.m, &s.bundle, &outer, alpha);
        [outer.big_a * l_a, outer.g * l_g]
    };
    let is_converged = |x: &[f64; 2], s: &InnerSolution, grad: &[f64; 2]| -> bool {
        let outer = OuterPoint {
            big_a: x[0].exp(),
            g: x[1].exp(),
        };
        let (l_a, l_g) = outer_gradients(&s.m, &s.bundle, &outer, alpha);
        l_a.abs() < opts.outer_tol
            && l_g.abs() < opts.outer_tol
            && grad[0].abs().max(grad[1].abs()) < 1e-5
    };
    let mut grad = grad_at(&x, &sol);

    // Phase 1: BFGS ascent in (log A, log g) until the gradient is small.
    for it in 0..opts.max_outer {
        outer_iters = it + 1;
        if is_converged(&x, &sol, &grad) {
            converged = true;
            break;
        }
        if grad[0].abs().max(grad[1].abs()) < 1e-3 {
            break; // close enough to switch to the root polish
        }

        // Ascent direction from the inverse-Hessian approximation.
        let mut dir = [
            hinv[0][0] * grad[0] + hinv[0][1] * grad[1],
            hinv[1][0] * grad[0] + hinv[1][1] * grad[1],
        ];
        if dir[0] * grad[0] + dir[1] * grad[1] <= 0.0 {
            hinv = [[1.0, 0.0], [0.0, 1.0]];
            dir = grad;
        }
        // Cap the log-space step length.
        let dnorm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        if dnorm > 3.0 {
            dir = [dir[0] * 3.0 / dnorm, dir[1] * 3.0 / dnorm];
        }

        let mut step = 1.0;
        let mut accepted: Option<([f64; 2], InnerSolution)> = None;
        let slope = dir[0] * grad[0] + dir[1] * grad[1];
        for _ in 0..28 {
            let xt = [x[0] + step * dir[0], x[1] + step * dir[1]];
            match eval(&xt, &warm) {
                Ok(s) => {
                    if s.bracket >= sol.bracket + 1e-4 * step * slope - 1e-13 {
                        accepted = Some((xt, s));
                        break;
                    }
                }
                Err(SolveError::InnerDiverged { .. }) | Err(SolveError::Quad(_)) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let Some((xt, st)) = accepted else {
            break; // stalled: hand over to the root polish
        };
        let new_grad = grad_at(&xt, &st);
        let s_vec = [xt[0] - x[0], xt[1] - x[1]];
        let y_vec = [grad[0] - new_grad[0], grad[1] - new_grad[1]];
        let sy = s_vec[0] * y_vec[0] + s_vec[1] * y_vec[1];
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let hy = [
                hinv[0][0] * y_vec[0] + hinv[0][1] * y_vec[1],
                hinv[1][0] * y_vec[0] + hinv[1][1] * y_vec[1],
            ];
            let yhy = y_vec[0] * hy[0] + y_vec[1] * hy[1];
            let mut hn = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    hn[i][j] = hinv[i][j] - (hy[i] * s_vec[j] + s_vec[i] * hy[j]) * rho
                        + s_vec[i] * s_vec[j] * rho * (1.0 + yhy * rho);
                }
            }
            hinv = hn;
        }
        x = xt;
        sol = st;
        warm = Some(sol.m);
        grad = new_grad;
    }

    // Phase 2: Broyden root polish on the stationarity system
    // (A L_A, g L_g) = 0; superlinear near the optimum where pure ascent
    // creeps (the saturated edge makes the landscape nearly flat along one
    // direction).
    if !converged {
        let mut jac: Option<[[f64; 2]; 2]> = None;
        for _ in 0..40 {
            outer_iters += 1;
            if is_converged(&x, &sol, &grad) {
                converged = true;
                break;
            }
            let j = match jac {
                Some(j) => j,
                None => {
                    let mut j = [[0.0; 2]; 2];
                    let mut ok = true;
                    for col in 0..2 {
                        let h = 1e-4;
                        let mut xp = x;
                        xp[col] += h;
                        match eval(&xp, &warm) {
                            Ok(sp) => {
                                let gp = grad_at(&xp, &sp);
                                j[0][col] = (gp[0] - grad[0]) / h;
                                j[1][col] = (gp[1] - grad[1]) / h;
                            }
                            Err(_) => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if !ok {
                        break;
                    }
                    jac = Some(j);
                    j
                }
            };
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-14 {
                jac = None;
                continue;
            }
            let mut d = [
                -(j[1][1] * grad[0] - j[0][1] * grad[1]) / det,
                -(-j[1][0] * grad[0] + j[0][0] * grad[1]) / det,
            ];
            let dn = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if dn > 0.5 {
                d = [d[0] * 0.5 / dn, d[1] * 0.5 / dn];
            }
            let mut step = 1.0;
            let mut taken: Option<([f64; 2], InnerSolution, [f64; 2])> = None;
            let gn0 = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
            for _ in 0..12 {
                let xt = [x[0] + step * d[0], x[1] + step * d[1]];
                if let Ok(st) = eval(&xt, &warm) {
                    let gt = grad_at(&xt, &st);
                    let gn = (gt[0] * gt[0] + gt[1] * gt[1]).sqrt();
                    if gn < gn0 * (1.0 - 1e-4 * step) || gn < opts.outer_tol * 1e-2 {
                        taken = Some((xt, st, gt));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((xt, st, gt)) = taken else {
                break;
            };
            // Broyden update of the Jacobian.
            if let Some(jm) = &mut jac {
                let dx = [xt[0] - x[0], xt[1] - x[1]];
                let dg = [gt[0] - grad[0], gt[1] - grad[1]];
                let dx2 = dx[0] * dx[0] + dx[1] * dx[1];
                if dx2 > 1e-30 {
                    let jd = [
                        jm[0][0] * dx[0] + jm[0][1] * dx[1],
                        jm[1][0] * dx[0] + jm[1][1] * dx[1],
                    ];
                    for r in 0..2 {
                        for c in 0..2 {
                            jm[r][c] += (dg[r] - jd[r]) * dx[c] / dx2;
                        }
                    }
                }
            }
            x = xt;
            sol = st;
            warm = Some(sol.m);
            grad = gt;
        }
        if !converged && is_converged(&x, &sol, &grad) {
            converged = true;
        }
    }

    let outer = OuterPoint {
        big_a: x[0].exp(),
        g: x[1].exp(),
    };
    let (l_a, l_g) = outer_gradients(&sol.m, &sol.bundle, &outer, alpha);
    let m = sol.m;
    let b = sol.bundle;
    let residuals = ConstraintResiduals {
        g_a: (outer.big_a - b.e_a) / outer.big_a.max(1e-300),
        g_c: -alpha * b.e_c,
        g_e: e_pin.map(|e| alpha * (e - b.e_l)).unwrap_or(0.0),
        g_t: -1.0 / outer.g - b.e_t + alpha * b.e_r1,
        g_h: 1.0 - alpha * b.e_r2,
        g_star: b.e_k,
        l_a,
        l_g,
        kkt_a: (m.a - 1.0 / (2.0 * alpha * outer.big_a)).abs(),
    };
    let sigma = prefactor(q, alpha) + sol.bracket;
    Ok(ComplexitySolution {
        sigma,
        outer,
        multipliers: m,
        mode,
        q,
        e_pinned: e_pin,
        e_resolved: b.e_l,
        alpha,
        loss_name: loss.name().to_string(),
        loss_params: loss
            .params()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        residuals,
        t_nu: b.e_t,
        log_z: b.log_z,
        bundle: b,
        converged: converged && sol.pg_norm < 10.0 * opts.inner_tol,
        inner_iters: sol.iters,
        outer_iters,
    })
}

/// Energy band of positive complexity at fixed `(q, alpha)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyBand {
    pub e_min: f64,
    pub e_star: f64,
    pub e_max: f64,
    pub sigma_at_star: f64,
    pub empty: bool,
}

/// Band options: zero-crossing tolerance in `e` and the marching budget.
#[derive(Debug, Clone, Copy)]
pub struct BandOptions {
    pub e_tol: f64,
    pub max_march: usize,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            e_tol: 1e-4,
            max_march: 10,
        }
    }
}

/// Compute `[e_min, e_max]` bracketing the zero crossings of
/// `sigma(q, e)` and the argmax `e_star`.
///
/// The free-`e` solve pins `lambda_e = 0`, which is the exact stationarity
/// condition in `e`, so its resolved energy is the argmax; the crossings are
/// then bracketed by marching and refined by bisection, warm-starting each
/// pinned solve from its neighbor.
pub fn energy_band<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    mode: MinimaMode,
    opts: &SolverOptions,
    band_opts: &BandOptions,
) -> Result<EnergyBand, SolveError> {
    let free = complexity(loss, q, alpha, None, mode, None, opts)?;
    if !(free.sigma > 0.0) {
        return Ok(EnergyBand {
            e_min: f64::NAN,
            e_star: free.e_resolved,
            e_max: f64::NAN,
            sigma_at_star: free.sigma,
            empty: true,
        });
    }
    let e_star = free.e_resolved;
    let sigma_star = free.sigma;

    let solve_at = |e: f64, init: OuterPoint| -> Result<(f64, OuterPoint), SolveError> {
        let sol = complexity(loss, q, alpha, Some(e), mode, Some(init), opts)?;
        Ok((sol.sigma, sol.outer))
    };

    let tol = band_opts.e_tol * e_star.abs().max(1.0);

    // March down from e_star until sigma < 0, then bisect the crossing.
    let mut bracket_low = None;
    let mut hi = (e_star, free.outer);
    for k in 1..=band_opts.max_march {
        let e = e_star * 0.5f64.powi(k as i32);
        match solve_at(e, hi.1) {
            Ok((s, outer)) => {
                if s < 0.0 {
                    bracket_low = Some(((e, outer), hi.0));
                    break;
                }
                hi = (e, outer);
            }
            Err(SolveError::InnerDiverged { .. }) => {
                bracket_low = Some(((e, hi.1), hi.0));
                break;
            }
            Err(err) => return Err(err),
        }
    }
    let e_min = match bracket_low {
        Some(((mut lo_e, mut lo_outer), mut hi_e)) => {
            while hi_e - lo_e > tol {
                let mid = 0.5 * (lo_e + hi_e);
                match solve_at(mid, lo_outer) {
                    Ok((s, outer)) => {
                        if s < 0.0 {
                            lo_e = mid;
                            lo_outer = outer;
                        } else {
                            hi_e = mid;
                        }
                    }
                    Err(SolveError::InnerDiverged { .. }) => lo_e = mid,
                    Err(err) => return Err(err),
                }
            }
            0.5 * (lo_e + hi_e)
        }
        None => f64::NAN,
    };

    // March up from e_star until sigma < 0, then bisect.
    let mut bracket_high = None;
    let mut lo = (e_star, free.outer);
    for k in 1..=band_opts.max_march {
        let e = e_star * 1.5f64.powi(k as i32);
        match solve_at(e, lo.1) {
            Ok((s, outer)) => {
                if s < 0.0 {
                    bracket_high = Some((lo, e));
                    break;
                }
                lo = (e, outer);
            }
            Err(SolveError::InnerDiverged { .. }) => {
                bracket_high = Some((lo, e));
                break;
            }
            Err(err) => return Err(err),
        }
    }
    let e_max = match bracket_high {
        Some(((mut lo_e, mut lo_outer), mut hi_e)) => {
            while hi_e - lo_e > tol {
                let mid = 0.5 * (lo_e + hi_e);
                match solve_at(mid, lo_outer) {
                    Ok((s, outer)) => {
                        if s >= 0.0 {
                            lo_e = mid;
                            lo_outer = outer;
                        } else {
                            hi_e = mid;
                        }
                    }
                    Err(SolveError::InnerDiverged { .. }) => hi_e = mid,
                    Err(err) => return Err(err),
                }
            }
            0.5 * (lo_e + hi_e)
        }
        None => f64::NAN,
    };

    Ok(EnergyBand {
        e_min,
        e_star,
        e_max,
        sigma_at_star: sigma_star,
        empty: false,
    })
}

/// Golden-section refinement of the band argmax; validates the free-`e`
/// stationarity shortcut used by [`energy_band`].
pub fn refine_e_star<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    mode: MinimaMode,
    e_lo: f64,
    e_hi: f64,
    opts: &SolverOptions,
    e_tol: f64,
) -> Result<(f64, f64), SolveError> {
    let phi = 0.5 * (3.0 - 5.0f64.sqrt());
    let mut a = e_lo;
    let mut b = e_hi;
    let sigma_at = |e: f64| -> Result<f64, SolveError> {
        Ok(complexity(loss, q, alpha, Some(e), mode, None, opts)?.sigma)
    };
    let mut x1 = a + phi * (b - a);
    let mut x2 = b - phi * (b - a);
    let mut f1 = sigma_at(x1)?;
    let mut f2 = sigma_at(x2)?;
    while b - a > e_tol {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = a + phi * (b - a);
            f1 = sigma_at(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = b - phi * (b - a);
            f2 = sigma_at(x2)?;
        }
    }
    let e = 0.5 * (a + b);
    Ok((e, sigma_at(e)?))
}
