//! Finite-dimensional gradient-descent simulator: instance generation,
//! overlap-pinned burn-in followed by free descent, success classification,
//! Hessian spectra at trapped minima, and empirical label laws.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::GdError;
use crate::loss::SingleIndexLoss;

/// Configuration of one simulated descent.
///
/// Paper-protocol defaults: `d = 512`, `eta = 2e-4`, `t_burn = 60_000`,
/// `t_free = 12_000 log2(d)`, success threshold `0.99`, latitude half-width
/// `0.05`, unit-normalized signal. The step budgets are maxima: with
/// `early_stop` the descent ends once the energy and overlap have been flat
/// for a full window, which cannot change the final classification.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GdConfig {
    pub d: usize,
    pub alpha: f64,
    pub a: f64,
    pub eta: f64,
    pub q0: f64,
    pub t_burn: usize,
    pub t_free: usize,
    pub seed: u64,
    pub success_threshold: f64,
    pub latitude_half_width: f64,
    pub normalize_signal: bool,
    pub early_stop: bool,
    pub record_every: usize,
}

impl GdConfig {
    /// Paper-protocol defaults at the given size and sampling ratio.
    pub fn paper_defaults(d: usize, alpha: f64, a: f64, q0: f64, seed: u64) -> Self {
        Self {
            d,
            alpha,
            a,
            eta: 2e-4,
            q0,
            t_burn: 60_000,
            t_free: (12_000.0 * (d as f64).log2()).round() as usize,
            seed,
            success_threshold: 0.99,
            latitude_half_width: 0.05,
            normalize_signal: true,
            early_stop: true,
            record_every: 100,
        }
    }

    pub fn n(&self) -> usize {
        (self.alpha * self.d as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), GdError> {
        if self.d < 2 {
            return Err(GdError::BadInput(format!("d = {} < 2", self.d)));
        }
        if !(self.alpha > 1.0) {
            return Err(GdError::BadInput(format!("alpha = {} <= 1", self.alpha)));
        }
        if !(self.a > 0.0 && self.eta > 0.0) {
            return Err(GdError::BadInput("a and eta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.q0) {
            return Err(GdError::BadInput(format!("q0 = {} outside [0, 1]", self.q0)));
        }
        Ok(())
    }
}

/// One dataset plus signal vector.
#[derive(Debug, Clone)]
pub struct Instance {
    /// Sensing matrix, one row per sample.
    pub x: DMatrix<f64>,
    /// Cached transpose for the gradient GEMV.
    xt: DMatrix<f64>,
    pub theta_star: DVector<f64>,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
}

/// Draw an instance: rows of `x` i.i.d. standard normal, signal
/// `theta* ~ N(0, I/d)` (unit-normalized by default). The generator is
/// ChaCha8 seeded with `seed`; byte-identical across runs and platforms.
pub fn generate_instance(d: usize, n: usize, seed: u64, normalize_signal: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::<f64>::from_fn(n, d, |_, _| rng.sample(StandardNormal));
    let scale = 1.0 / (d as f64).sqrt();
    let mut theta_star = DVector::<f64>::from_fn(d, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        g * scale
    });
    if normalize_signal {
        let norm = theta_star.norm();
        theta_star /= norm;
    }
    let xt = x.transpose();
    Instance {
        x,
        xt,
        theta_star,
        d,
        n,
        seed,
    }
}

/// Outcome of one descent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GdRunResult {
    pub success: bool,
    pub final_overlap: f64,
    pub final_energy: f64,
    /// `(step, overlap)` pairs, downsampled.
    pub overlap_trace: Vec<(usize, f64)>,
    /// `(step, energy)` pairs, downsampled.
    pub energy_trace: Vec<(usize, f64)>,
    pub wall_steps: usize,
    /// Steps where the energy increased by more than 1e-9 (gradient-flow
    /// proxy diagnostic).
    pub energy_increase_steps: usize,
    pub total_free_steps: usize,
    #[serde(skip)]
    pub terminal_theta: Option<DVector<f64>>,
}

/// Run the two-phase descent. Phase 1 pins the overlap to `q0` by exact
/// re-projection after every step; phase 2 is plain Euclidean descent.
pub fn run_gd<L: SingleIndexLoss>(
    loss: &L,
    cfg: &GdConfig,
    inst: &Instance,
) -> Result<GdRunResult, GdError> {
    cfg.validate()?;
    let d = inst.d;
    let n = inst.n;
    let theta_star = &inst.theta_star;
    let star_norm = theta_star.norm();

    // Precompute the ground-truth labels once.
    let y_star = &inst.x * theta_star;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let scale = 1.0 / (d as f64).sqrt();
    let mut theta = DVector::<f64>::from_fn(d, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        g * scale
    });

    let mut y = DVector::<f64>::zeros(n);
    let mut w = DVector::<f64>::zeros(n);
    let mut grad = DVector::<f64>::zeros(d);

    let overlap = |th: &DVector<f64>| th.dot(theta_star) / (th.norm() * star_norm);

    let project = |th: &mut DVector<f64>, step: usize| -> Result<(), GdError> {
        let along = th.dot(theta_star) / (star_norm * star_norm);
        let mut perp = th.clone();
        perp.axpy(-along, theta_star, 1.0);
        let pn = perp.norm();
        if pn < 1e-12 {
            return Err(GdError::DegenerateOrth { step, norm: pn });
        }
        let c = (1.0 - cfg.q0 * cfg.q0).sqrt() / pn;
        th.copy_from(theta_star);
        *th *= cfg.q0 / star_norm;
        th.axpy(c, &perp, 1.0);
        Ok(())
    };

    let mut overlap_trace = Vec::new();
    let mut energy_trace = Vec::new();
    let mut wall_steps = 0usize;
    let mut energy_increase_steps = 0usize;
    let mut total_free_steps = 0usize;
    let mut prev_energy = f64::INFINITY;

    // q0 = 1 starts at the global minimum: the gradient vanishes there.
    let pinned_start = cfg.q0 >= 1.0 - 1e-15;
    if pinned_start {
        theta.copy_from(theta_star);
        theta /= star_norm;
    } else {
        project(&mut theta, 0)?;
    }

    let inv_n = 1.0 / n as f64;
    let eval = |theta: &DVector<f64>,
                    y: &mut DVector<f64>,
                    w: &mut DVector<f64>|
     -> (f64, bool) {
        y.gemv(1.0, &inst.x, theta, 0.0);
        let mut energy = 0.0;
        let mut bad = false;
        for i in 0..n {
            let yi = y[i];
            let ysi = y_star[i];
            energy += loss.value(yi, ysi);
            let g1 = loss.d1(yi, ysi);
            if !g1.is_finite() {
                bad = true;
            }
            w[i] = g1 * inv_n;
        }
        (energy * inv_n, bad)
    };

    // Early-stop window state.
    const WINDOW: usize = 1000;
    let mut win_energy = f64::INFINITY;
    let mut win_overlap = f64::INFINITY;

    let phases: [(usize, bool); 2] = [
        (if pinned_start { 0 } else { cfg.t_burn }, true),
        (cfg.t_free, false),
    ];
    for (budget, constrained) in phases {
        win_energy = f64::INFINITY;
        win_overlap = f64::INFINITY;
        for t in 0..budget {
            let (energy, bad) = eval(&theta, &mut y, &mut w);
            if bad || !energy.is_finite() {
                return Err(GdError::NaNEncountered { step: wall_steps });
            }
            if !constrained {
                if energy > prev_energy + 1e-9 {
                    energy_increase_steps += 1;
                }
                total_free_steps += 1;
            }
            prev_energy = energy;
            if wall_steps % cfg.record_every == 0 {
                overlap_trace.push((wall_steps, overlap(&theta)));
                energy_trace.push((wall_steps, energy));
            }
            grad.gemv(1.0, &inst.xt, &w, 0.0);
            theta.axpy(-cfg.eta, &grad, 1.0);
            if constrained {
                project(&mut theta, wall_steps)?;
            }
            wall_steps += 1;

            if cfg.early_stop && t % WINDOW == WINDOW - 1 {
                let q_now = overlap(&theta);
                let flat_e = (win_energy - energy).abs() <= 1e-12 * energy.abs().max(1e-30);
                let flat_q = (win_overlap - q_now).abs() <= 1e-7;
                if flat_e && flat_q && t > WINDOW {
                    break;
                }
                win_energy = energy;
                win_overlap = q_now;
            }
        }
    }
    let _ = (win_energy, win_overlap);

    let (final_energy, _) = eval(&theta, &mut y, &mut w);
    let final_overlap = overlap(&theta);
    overlap_trace.push((wall_steps, final_overlap));
    energy_trace.push((wall_steps, final_energy));
    Ok(GdRunResult {
        success: final_overlap.abs() > cfg.success_threshold,
        final_overlap,
        final_energy,
        overlap_trace,
        energy_trace,
        wall_steps,
        energy_increase_steps,
        total_free_steps,
        terminal_theta: Some(theta),
    })
}

/// Spectrum of the Riemannian Hessian at `theta` (normalized to the sphere),
/// with the spherical shift term included.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianAnalysis {
    /// The `d - 1` tangent eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    /// `|v_min . w_tilde|` with `w_tilde` the in-tangent signal direction.
    pub min_vec_overlap: f64,
    /// Spherical shift `(1/n) sum y_i d1(y_i, y*_i)`.
    pub shift: f64,
}

/// Dense eigendecomposition of the spherical Hessian at `theta`.
pub fn hessian_at<L: SingleIndexLoss>(
    loss: &L,
    inst: &Instance,
    theta: &DVector<f64>,
) -> Result<HessianAnalysis, GdError> {
    let d = inst.d;
    let n = inst.n;
    let mut th = theta.clone();
    let norm = th.norm();
    if !(norm > 0.0) {
        return Err(GdError::BadInput("zero iterate".into()));
    }
    th /= norm;

    let y = &inst.x * &th;
    let y_star = &inst.x * &inst.theta_star;
    let inv_n = 1.0 / n as f64;
    let mut shift = 0.0;
    let mut weights = DVector::<f64>::zeros(n);
    for i in 0..n {
        shift += y[i] * loss.d1(y[i], y_star[i]);
        weights[i] = loss.d11(y[i], y_star[i]) * inv_n;
    }
    shift *= inv_n;

    // Projected rows: P x_i = x_i - y_i theta.
    let mut xp = inst.x.clone();
    for i in 0..n {
        let yi = y[i];
        let mut row = xp.row_mut(i);
        for j in 0..d {
            row[j] -= yi * th[j];
        }
    }
    // H = Xp^T diag(w) Xp - shift * (I - theta theta^T)
    let mut wxp = xp.clone();
    for i in 0..n {
        let wi = weights[i];
        let mut row = wxp.row_mut(i);
        for j in 0..d {
            row[j] *= wi;
        }
    }
    let mut h = xp.transpose() * wxp;
    for i in 0..d {
        for j in 0..d {
            h[(i, j)] -= shift * (((i == j) as u8 as f64) - th[i] * th[j]);
        }
    }

    let eig = h.symmetric_eigen();
    // Identify the trivial radial eigenvector (closest to theta).
    let mut radial = 0usize;
    let mut best = -1.0;
    for k in 0..d {
        let ov = eig.eigenvectors.column(k).dot(&th).abs();
        if ov > best {
            best = ov;
            radial = k;
        }
    }
    let mut order: Vec<usize> = (0..d).filter(|&k| k != radial).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let min_idx = order[0];
    let q = th.dot(&inst.theta_star) / inst.theta_star.norm();
    let mut w_tilde = inst.theta_star.clone() / inst.theta_star.norm();
    w_tilde.axpy(-q, &th, 1.0);
    let wt_norm = w_tilde.norm();
    let min_vec_overlap = if wt_norm > 1e-12 {
        (eig.eigenvectors.column(min_idx).dot(&w_tilde) / wt_norm).abs()
    } else {
        0.0
    };
    Ok(HessianAnalysis {
        min_eigenvalue: eigenvalues[0],
        eigenvalues,
        min_vec_overlap,
        shift,
    })
}

/// Simple fixed-bin histogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        let edges = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        Self {
            edges,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, x: f64) {
        let bins = self.counts.len();
        let lo = self.edges[0];
        let hi = self.edges[bins];
        if x < lo || x >= hi {
            return;
        }
        let idx = ((x - lo) / (hi - lo) * bins as f64) as usize;
        self.counts[idx.min(bins - 1)] += 1;
    }
}

/// Two-dimensional histogram on a rectangular grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram2d {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// Row-major counts, `x` outer.
    pub counts: Vec<u64>,
}

impl Histogram2d {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        let edges: Vec<f64> = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        Self {
            x_edges: edges.clone(),
            y_edges: edges,
            counts: vec![0; bins * bins],
        }
    }

    pub fn add(&mut self, x: f64, y: f64) {
        let bx = self.x_edges.len() - 1;
        let by = self.y_edges.len() - 1;
        let (xlo, xhi) = (self.x_edges[0], self.x_edges[bx]);
        let (ylo, yhi) = (self.y_edges[0], self.y_edges[by]);
        if x < xlo || x >= xhi || y < ylo || y >= yhi {
            return;
        }
        let ix = (((x - xlo) / (xhi - xlo)) * bx as f64) as usize;
        let iy = (((y - ylo) / (yhi - ylo)) * by as f64) as usize;
        self.counts[ix.min(bx - 1) * by + iy.min(by - 1)] += 1;
    }
}

/// Empirical observables at one configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalLaws {
    pub labels: Vec<(f64, f64)>,
    pub f_values: Vec<f64>,
    pub label_hist: Histogram2d,
    pub f_hist: Histogram,
    pub energy: f64,
    pub overlap: f64,
}

/// Label pairs, Hessian weights, energy, and overlap at `theta`.
pub fn empirical_laws<L: SingleIndexLoss>(
    loss: &L,
    inst: &Instance,
    theta: &DVector<f64>,
    label_range: f64,
    label_bins: usize,
    f_range: (f64, f64),
    f_bins: usize,
) -> EmpiricalLaws {
    let mut th = theta.clone();
    th /= th.norm();
    let y = &inst.x * &th;
    let y_star = &inst.x * &inst.theta_star;
    let mut labels = Vec::with_capacity(inst.n);
    let mut f_values = Vec::with_capacity(inst.n);
    let mut label_hist = Histogram2d::new(-label_range, label_range, label_bins);
    let mut f_hist = Histogram::new(f_range.0, f_range.1, f_bins);
    let mut energy = 0.0;
    for i in 0..inst.n {
        let (yi, ysi) = (y[i], y_star[i]);
        labels.push((yi, ysi));
        let f = loss.d11(yi, ysi);
        f_values.push(f);
        label_hist.add(yi, ysi);
        f_hist.add(f);
        energy += loss.value(yi, ysi);
    }
    energy /= inst.n as f64;
    let overlap = th.dot(&inst.theta_star) / inst.theta_star.norm();
    EmpiricalLaws {
        labels,
        f_values,
        label_hist,
        f_hist,
        energy,
        overlap,
    }
}

/// Summary of one replicate inside a batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub alpha: f64,
    pub q0: f64,
    pub seed: u64,
    pub success: bool,
    pub final_overlap: f64,
    pub final_energy: f64,
    pub trapped_in_latitude: bool,
}

/// One row of the batch statistics table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchRow {
    pub alpha: f64,
    pub q0: f64,
    pub replicates: usize,
    pub success_rate: f64,
    /// Binomial standard error of the success rate.
    pub err: f64,
    /// Failure-conditioned mean final overlap.
    pub mean_q_t_fail: f64,
    /// Mean energy over trapped runs inside the latitude band.
    pub mean_energy: f64,
    pub err_energy: f64,
    pub n_trapped: usize,
}

/// Batch output: one row per `(alpha, q0)` plus per-run summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchTable {
    pub master_seed: u64,
    pub rows: Vec<BatchRow>,
    pub runs: Vec<RunSummary>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic replicate seed derived from the master seed.
pub fn replicate_seed(master: u64, combo: usize, rep: usize) -> u64 {
    splitmix64(master ^ splitmix64((combo as u64) << 32 | rep as u64))
}

/// Run a grid of `(alpha, q0)` combos with `replicates` runs each.
/// Replicates parallelize across the worker pool; reduction order is fixed.
pub fn batch_experiment<L: SingleIndexLoss + Sync>(
    loss: &L,
    template: &GdConfig,
    grid: &[(f64, f64)],
    replicates: usize,
    master_seed: u64,
) -> Result<BatchTable, GdError> {
    let mut rows = Vec::with_capacity(grid.len());
    let mut all_runs = Vec::new();
    for (combo, &(alpha, q0)) in grid.iter().enumerate() {
        let cfg0 = GdConfig {
            alpha,
            q0,
            ..*template
        };
        cfg0.validate()?;
        let summaries: Vec<Result<RunSummary, GdError>> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = replicate_seed(master_seed, combo, rep);
                let cfg = GdConfig { seed, ..cfg0 };
                let inst = generate_instance(cfg.d, cfg.n(), seed, cfg.normalize_signal);
                let run = run_gd(loss, &cfg, &inst)?;
                let trapped = !run.success
                    && (run.final_overlap.abs() - q0).abs() <= cfg.latitude_half_width;
                Ok(RunSummary {
                    alpha,
                    q0,
                    seed,
                    success: run.success,
                    final_overlap: run.final_overlap,
                    final_energy: run.final_energy,
                    trapped_in_latitude: trapped,
                })
            })
            .collect();
        let mut ok_runs = Vec::with_capacity(replicates);
        for s in summaries {
            ok_runs.push(s?);
        }
        let n = ok_runs.len();
        let successes = ok_runs.iter().filter(|r| r.success).count();
        let p = if n > 0 { successes as f64 / n as f64 } else { 0.0 };
        let err = if n > 0 {
            (p * (1.0 - p) / n as f64).sqrt()
        } else {
            0.0
        };
        let fails: Vec<&RunSummary> = ok_runs.iter().filter(|r| !r.success).collect();
        let mean_q_t_fail = if fails.is_empty() {
            f64::NAN
        } else {
            fails.iter().map(|r| r.final_overlap.abs()).sum::<f64>() / fails.len() as f64
        };
        let trapped: Vec<&RunSummary> = ok_runs.iter().filter(|r| r.trapped_in_latitude).collect();
        let (mean_energy, err_energy) = if trapped.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let m = trapped.iter().map(|r| r.final_energy).sum::<f64>() / trapped.len() as f64;
            let var = trapped
                .iter()
                .map(|r| (r.final_energy - m).powi(2))
                .sum::<f64>()
                / trapped.len() as f64;
            (m, (var / trapped.len() as f64).sqrt())
        };
        rows.push(BatchRow {
            alpha,
            q0,
            replicates: n,
            success_rate: p,
            err,
            mean_q_t_fail,
            mean_energy,
            err_energy,
            n_trapped: trapped.len(),
        });
        all_runs.extend(ok_runs);
    }
    Ok(BatchTable {
        master_seed,
        rows,
        runs: all_runs,
    })
}

/// Batch CSV with the documented column order; the master seed is recorded
/// in the header line.
pub fn batch_to_csv(table: &BatchTable) -> String {
    use crate::mp::fmt17 as f;
    let mut s = format!("# master_seed={}\n", table.master_seed);
    s.push_str("alpha,q0,replicates,success_rate,err,mean_qT_fail,mean_energy,err\n");
    for r in &table.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            f(r.alpha),
            f(r.q0),
            r.replicates,
            f(r.success_rate),
            f(r.err),
            f(r.mean_q_t_fail),
            f(r.mean_energy),
            f(r.err_energy),
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::PhaseRetrievalLoss;

    #[test]
    fn instance_is_deterministic() {
        let a = generate_instance(16, 64, 42, true);
        let b = generate_instance(16, 64, 42, true);
        assert_eq!(a.x, b.x);
        assert_eq!(a.theta_star, b.theta_star);
        assert!((a.theta_star.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn column_means_consistent_with_clt() {
        let inst = generate_instance(32, 4096, 7, true);
        for j in 0..32 {
            let mean = inst.x.column(j).sum() / 4096.0;
            assert!(
                mean.abs() < 4.0 / (4096.0f64).sqrt(),
                "column {j} mean {mean}"
            );
        }
    }

    #[test]
    fn q0_one_starts_at_global_minimum_and_stays() {
        let loss = PhaseRetrievalLoss::new(0.01);
        let mut cfg = GdConfig::paper_defaults(24, 4.0, 0.01, 1.0, 3);
        cfg.t_free = 500;
        cfg.record_every = 100;
        let inst = generate_instance(cfg.d, cfg.n(), cfg.seed, true);
        let run = run_gd(&loss, &cfg, &inst).unwrap();
        assert!(run.success);
        assert!(run.final_energy.abs() < 1e-20);
        assert!((run.final_overlap.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_keeps_constraints_exact() {
        let loss = PhaseRetrievalLoss::new(0.01);
        let mut cfg = GdConfig::paper_defaults(32, 3.0, 0.01, 0.3, 11);
        cfg.t_burn = 200;
        cfg.t_free = 0;
        cfg.early_stop = false;
        let inst = generate_instance(cfg.d, cfg.n(), cfg.seed, true);
        let run = run_gd(&loss, &cfg, &inst).unwrap();
        let th = run.terminal_theta.as_ref().unwrap();
        assert!((th.norm() - 1.0).abs() < 1e-12);
        assert!((th.dot(&inst.theta_star) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn run_is_seed_deterministic() {
        let loss = PhaseRetrievalLoss::new(0.01);
        let mut cfg = GdConfig::paper_defaults(16, 5.0, 0.01, 0.0, 5);
        cfg.t_burn = 300;
        cfg.t_free = 300;
        cfg.early_stop = false;
        let inst = generate_instance(cfg.d, cfg.n(), cfg.seed, true);
        let r1 = run_gd(&loss, &cfg, &inst).unwrap();
        let r2 = run_gd(&loss, &cfg, &inst).unwrap();
        assert_eq!(r1.final_overlap.to_bits(), r2.final_overlap.to_bits());
        assert_eq!(r1.final_energy.to_bits(), r2.final_energy.to_bits());
    }

    #[test]
    fn hessian_at_signal_is_psd() {
        let loss = PhaseRetrievalLoss::new(0.01);
        let inst = generate_instance(48, 480, 9, true);
        let h = hessian_at(&loss, &inst, &inst.theta_star.clone()).unwrap();
        assert_eq!(h.eigenvalues.len(), 47);
        assert!(
            h.min_eigenvalue > -1e-10,
            "min eigenvalue {} at the global minimum",
            h.min_eigenvalue
        );
    }

    #[test]
    fn empty_batch_grid_gives_empty_table() {
        let loss = PhaseRetrievalLoss::new(0.01);
        let cfg = GdConfig::paper_defaults(16, 4.0, 0.01, 0.0, 1);
        let table = batch_experiment(&loss, &cfg, &[], 0, 123).unwrap();
        assert!(table.rows.is_empty());
        assert!(table.runs.is_empty());
        let csv = batch_to_csv(&table);
        assert!(csv.starts_with("# master_seed=123\n"));
        assert!(csv.contains("alpha,q0,replicates"));
    }

    #[test]
    fn random_theta_labels_are_near_gaussian() {
        let loss = PhaseRetrievalLoss::new(0.01);
        let inst = generate_instance(64, 2048, 21, true);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut th = DVector::<f64>::from_fn(64, |_, _| rng.sample::<f64, _>(StandardNormal));
        th /= th.norm();
        let laws = empirical_laws(&loss, &inst, &th, 4.0, 16, (-4.0, 40.0), 32);
        // crude moment checks at 4 sigma
        let n = laws.labels.len() as f64;
        let mean_y = laws.labels.iter().map(|l| l.0).sum::<f64>() / n;
        let var_y = laws.labels.iter().map(|l| l.0 * l.0).sum::<f64>() / n;
        assert!(mean_y.abs() < 4.0 / n.sqrt());
        assert!((var_y - 1.0).abs() < 4.0 * (2.0f64 / n).sqrt());
    }
}
