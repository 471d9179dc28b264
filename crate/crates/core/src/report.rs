//! Serialized records and the theory-vs-experiment comparison report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbp;
use crate::error::SolveError;
use crate::gd::HessianAnalysis;
use crate::loss::SingleIndexLoss;
use crate::measure::FrozenLabelLaw;
use crate::minima::{self, ComplexitySolution, EnergyBand, MinimaMode};
use crate::mp::{self, fmt17, GridOptions};
use crate::scan::ScanOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Error, Debug, Clone)]
pub enum ReportError {
    #[error("unpaired comparison keys; theory-only: {theory_only:?}, experiment-only: {experiment_only:?}")]
    KeyMismatch {
        theory_only: Vec<String>,
        experiment_only: Vec<String>,
    },
    #[error("invalid report input: {0}")]
    BadInput(String),
}

/// Normalized two-dimensional probability table on a fixed grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbTable2d {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    /// Row-major probabilities, `y` outer, `y*` inner; sums to ~1.
    pub p: Vec<f64>,
}

impl ProbTable2d {
    pub fn from_law(law: &FrozenLabelLaw, lo: f64, hi: f64, bins: usize) -> Self {
        let mut p = vec![0.0; bins * bins];
        let width = hi - lo;
        for node in &law.nodes {
            if node.y < lo || node.y >= hi || node.ys < lo || node.ys >= hi {
                continue;
            }
            let ix = (((node.y - lo) / width) * bins as f64) as usize;
            let iy = (((node.ys - lo) / width) * bins as f64) as usize;
            p[ix.min(bins - 1) * bins + iy.min(bins - 1)] += node.w;
        }
        Self { lo, hi, bins, p }
    }

    pub fn from_samples(samples: &[(f64, f64)], lo: f64, hi: f64, bins: usize) -> Self {
        let mut p = vec![0.0; bins * bins];
        let width = hi - lo;
        let mut kept = 0usize;
        for &(y, ys) in samples {
            if y < lo || y >= hi || ys < lo || ys >= hi {
                continue;
            }
            let ix = (((y - lo) / width) * bins as f64) as usize;
            let iy = (((ys - lo) / width) * bins as f64) as usize;
            p[ix.min(bins - 1) * bins + iy.min(bins - 1)] += 1.0;
            kept += 1;
        }
        if kept > 0 {
            for v in &mut p {
                *v /= kept as f64;
            }
        }
        Self { lo, hi, bins, p }
    }

    /// Overlap score `sum_i min(p_i, q_i)`; 1 for identical tables.
    pub fn overlap(&self, other: &ProbTable2d) -> f64 {
        if self.bins != other.bins || self.lo != other.lo || self.hi != other.hi {
            return f64::NAN;
        }
        self.p
            .iter()
            .zip(other.p.iter())
            .map(|(a, b)| a.min(*b))
            .sum()
    }
}

/// Theory-side record for one `(a, alpha, q)` point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryRecord {
    pub schema_version: u32,
    pub a: f64,
    pub alpha: f64,
    pub q: f64,
    pub mode: MinimaMode,
    pub sigma: f64,
    pub band: EnergyBand,
    pub t_nu: f64,
    /// Shifted Hessian density `(w, rho)`.
    pub rho_grid: Vec<(f64, f64)>,
    /// CDF of the shifted Hessian density.
    pub rho_cdf: Vec<(f64, f64)>,
    /// CDF of the Hessian weight `F` under the label law.
    pub f_cdf: Vec<(f64, f64)>,
    /// Joint label-law probability table.
    pub nu_hist: ProbTable2d,
    /// BBP edge difference; an outlier exists when positive.
    pub d_alpha: f64,
    pub w_min: f64,
    pub w_star: Option<f64>,
    pub solution: ComplexitySolution,
}

/// Experiment-side record for one run (or a pooled set of runs).
///
/// Precomputed CDF fields take precedence over raw samples; they exist so
/// that comparison identities (theory vs itself) are exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub a: f64,
    pub alpha: f64,
    pub q0: f64,
    pub d: usize,
    pub seed: u64,
    pub success: bool,
    pub final_overlap: f64,
    pub final_energy: f64,
    #[serde(default)]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default)]
    pub min_vec_overlap: Option<f64>,
    #[serde(default)]
    pub labels: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub f_values: Option<Vec<f64>>,
    #[serde(default)]
    pub eig_cdf: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub f_cdf: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub label_hist: Option<ProbTable2d>,
}

/// Build the full theory record at one point (typical-energy minima).
pub fn theory_report<L: SingleIndexLoss + Clone>(
    loss: &L,
    a: f64,
    q: f64,
    alpha: f64,
    mode: MinimaMode,
    opts: &ScanOptions,
) -> Result<TheoryRecord, SolveError> {
    let sol = minima::complexity(loss, q, alpha, None, mode, None, &opts.solver)?;
    if !sol.converged {
        return Err(SolveError::NotConverged);
    }
    let band = minima::energy_band(loss, q, alpha, mode, &opts.solver, &opts.band)?;
    let law = sol.frozen_law(loss, &opts.solver.quad)?;
    let bbp_res = bbp::analyze(&law, alpha)?;

    let (w_lo, w_hi) = mp::auto_range(&law, alpha, 2e-3)?;
    let t = law.t_shift;
    let grid_opts = GridOptions::default();
    let rho = mp::hessian_density(&law, alpha, w_lo - t, w_hi - t, &grid_opts)?;
    let rho_cdf = rho.cdf();

    // CDF of F under the law, on the node set.
    let mut fw: Vec<(f64, f64)> = law.nodes.iter().map(|n| (n.f, n.w)).collect();
    fw.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut acc = 0.0;
    let mut f_cdf = Vec::with_capacity(512);
    let stride = (fw.len() / 512).max(1);
    for (i, (f, w)) in fw.iter().enumerate() {
        acc += w;
        if i % stride == 0 || i + 1 == fw.len() {
            f_cdf.push((*f, acc));
        }
    }

    let nu_hist = ProbTable2d::from_law(&law, -4.0, 4.0, 64);

    Ok(TheoryRecord {
        schema_version: SCHEMA_VERSION,
        a,
        alpha,
        q,
        mode,
        sigma: sol.sigma,
        band,
        t_nu: sol.t_nu,
        rho_grid: rho.grid.clone(),
        rho_cdf,
        f_cdf,
        nu_hist,
        d_alpha: bbp_res.d_alpha,
        w_min: bbp_res.w_min,
        w_star: bbp_res.w_star,
        solution: sol,
    })
}

/// Synthetic experiment record equal to the theory record (identity check).
pub fn experiment_from_theory(t: &TheoryRecord) -> ExperimentRecord {
    ExperimentRecord {
        schema_version: SCHEMA_VERSION,
        a: t.a,
        alpha: t.alpha,
        q0: t.q,
        d: 0,
        seed: 0,
        success: false,
        final_overlap: t.q,
        final_energy: t.band.e_star,
        eigenvalues: None,
        min_vec_overlap: None,
        labels: None,
        f_values: None,
        eig_cdf: Some(t.rho_cdf.clone()),
        f_cdf: Some(t.f_cdf.clone()),
        label_hist: Some(t.nu_hist.clone()),
    }
}

/// Experiment record from a finished run with optional Hessian analysis.
#[allow(clippy::too_many_arguments)]
pub fn experiment_record(
    a: f64,
    alpha: f64,
    q0: f64,
    d: usize,
    seed: u64,
    success: bool,
    final_overlap: f64,
    final_energy: f64,
    hessian: Option<&HessianAnalysis>,
    labels: Option<Vec<(f64, f64)>>,
    f_values: Option<Vec<f64>>,
) -> ExperimentRecord {
    ExperimentRecord {
        schema_version: SCHEMA_VERSION,
        a,
        alpha,
        q0,
        d,
        seed,
        success,
        final_overlap,
        final_energy,
        eigenvalues: hessian.map(|h| h.eigenvalues.clone()),
        min_vec_overlap: hessian.map(|h| h.min_vec_overlap),
        labels,
        f_values,
        eig_cdf: None,
        f_cdf: None,
        label_hist: None,
    }
}

/// One-sample Kolmogorov distance between sorted samples and a CDF curve
/// (linearly interpolated between grid points).
pub fn ks_distance(samples: &[f64], cdf: &[(f64, f64)]) -> f64 {
    if samples.is_empty() || cdf.is_empty() {
        return f64::NAN;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len() as f64;
    let total = cdf.last().unwrap().1.max(1e-300);
    let eval = |x: f64| -> f64 {
        // binary search on the grid
        if x <= cdf[0].0 {
            return 0.0;
        }
        if x >= cdf[cdf.len() - 1].0 {
            return 1.0;
        }
        let mut lo = 0;
        let mut hi = cdf.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if cdf[mid].0 <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (x0, c0) = cdf[lo];
        let (x1, c1) = cdf[hi];
        ((c0 + (c1 - c0) * (x - x0) / (x1 - x0)) / total).clamp(0.0, 1.0)
    };
    let mut worst: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let c = eval(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        worst = worst.max((c - lo).abs().max((hi - c).abs()));
    }
    worst
}

/// Sup distance between two CDF curves on the union of their grids.
fn cdf_sup_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let norm_a = a.last().map(|p| p.1).unwrap_or(1.0).max(1e-300);
    let norm_b = b.last().map(|p| p.1).unwrap_or(1.0).max(1e-300);
    let eval = |curve: &[(f64, f64)], norm: f64, x: f64| -> f64 {
        if x <= curve[0].0 {
            return 0.0;
        }
        if x >= curve[curve.len() - 1].0 {
            return 1.0;
        }
        let mut lo = 0;
        let mut hi = curve.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if curve[mid].0 <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (x0, c0) = curve[lo];
        let (x1, c1) = curve[hi];
        ((c0 + (c1 - c0) * (x - x0) / (x1 - x0)) / norm).clamp(0.0, 1.0)
    };
    let mut worst: f64 = 0.0;
    for &(x, _) in a.iter().chain(b.iter()) {
        worst = worst.max((eval(a, norm_a, x) - eval(b, norm_b, x)).abs());
    }
    worst
}

/// Comparison metrics for one matched `(a, alpha, q)` key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub a: f64,
    pub alpha: f64,
    pub q: f64,
    pub n_runs: usize,
    pub n_trapped: usize,
    pub mean_trapped_energy: f64,
    pub energy_in_band: bool,
    /// `e_mean - e_min` (negative means below the band).
    pub margin_low: f64,
    /// `e_max - e_mean` (negative means above the band).
    pub margin_high: f64,
    pub spectral_ks: f64,
    pub f_ks: f64,
    pub label_overlap: f64,
    pub bbp_theory: bool,
    pub bbp_experiment: Option<bool>,
    pub bbp_agree: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub rows: Vec<CompareRow>,
}

fn key_of(a: f64, alpha: f64, q: f64) -> String {
    format!("a={a:.6e},alpha={alpha:.6e},q={q:.6e}")
}

/// Compare theory records against experiment records grouped by
/// `(a, alpha, q)`. Every key must appear on both sides.
pub fn compare(
    theory: &[TheoryRecord],
    experiments: &[ExperimentRecord],
) -> Result<CompareReport, ReportError> {
    use std::collections::BTreeMap;
    let mut exp_by_key: BTreeMap<String, Vec<&ExperimentRecord>> = BTreeMap::new();
    for e in experiments {
        exp_by_key
            .entry(key_of(e.a, e.alpha, e.q0))
            .or_default()
            .push(e);
    }
    let theory_keys: Vec<String> = theory
        .iter()
        .map(|t| key_of(t.a, t.alpha, t.q))
        .collect();
    let theory_only: Vec<String> = theory_keys
        .iter()
        .filter(|k| !exp_by_key.contains_key(*k))
        .cloned()
        .collect();
    let experiment_only: Vec<String> = exp_by_key
        .keys()
        .filter(|k| !theory_keys.contains(k))
        .cloned()
        .collect();
    if !theory_only.is_empty() || !experiment_only.is_empty() {
        return Err(ReportError::KeyMismatch {
            theory_only,
            experiment_only,
        });
    }

    let mut rows = Vec::with_capacity(theory.len());
    for t in theory {
        let key = key_of(t.a, t.alpha, t.q);
        let runs = &exp_by_key[&key];
        let trapped: Vec<&&ExperimentRecord> = runs
            .iter()
            .filter(|r| !r.success && (r.final_overlap.abs() - t.q).abs() <= 0.05 + 1e-12)
            .collect();
        let n_trapped = trapped.len();
        let mean_energy = if n_trapped > 0 {
            trapped.iter().map(|r| r.final_energy).sum::<f64>() / n_trapped as f64
        } else {
            f64::NAN
        };
        let (in_band, margin_low, margin_high) = if t.band.empty || !mean_energy.is_finite() {
            (false, f64::NAN, f64::NAN)
        } else {
            (
                mean_energy >= t.band.e_min && mean_energy <= t.band.e_max,
                mean_energy - t.band.e_min,
                t.band.e_max - mean_energy,
            )
        };

        // Spectral distance: precomputed CDF wins, else pooled eigenvalues.
        let spectral_ks = {
            let pre: Vec<&Vec<(f64, f64)>> =
                runs.iter().filter_map(|r| r.eig_cdf.as_ref()).collect();
            if let Some(cdf) = pre.first() {
                cdf_sup_distance(cdf, &t.rho_cdf)
            } else {
                let pooled: Vec<f64> = trapped
                    .iter()
                    .filter_map(|r| r.eigenvalues.as_ref())
                    .flatten()
                    .copied()
                    .collect();
                if pooled.is_empty() {
                    f64::NAN
                } else {
                    ks_distance(&pooled, &t.rho_cdf)
                }
            }
        };
        let f_ks = {
            let pre: Vec<&Vec<(f64, f64)>> =
                runs.iter().filter_map(|r| r.f_cdf.as_ref()).collect();
            if let Some(cdf) = pre.first() {
                cdf_sup_distance(cdf, &t.f_cdf)
            } else {
                let pooled: Vec<f64> = trapped
                    .iter()
                    .filter_map(|r| r.f_values.as_ref())
                    .flatten()
                    .copied()
                    .collect();
                if pooled.is_empty() {
                    f64::NAN
                } else {
                    ks_distance(&pooled, &t.f_cdf)
                }
            }
        };
        let label_overlap = {
            let pre: Vec<&ProbTable2d> =
                runs.iter().filter_map(|r| r.label_hist.as_ref()).collect();
            if let Some(h) = pre.first() {
                h.overlap(&t.nu_hist)
            } else {
                let pooled: Vec<(f64, f64)> = trapped
                    .iter()
                    .filter_map(|r| r.labels.as_ref())
                    .flatten()
                    .copied()
                    .collect();
                if pooled.is_empty() {
                    f64::NAN
                } else {
                    ProbTable2d::from_samples(&pooled, t.nu_hist.lo, t.nu_hist.hi, t.nu_hist.bins)
                        .overlap(&t.nu_hist)
                }
            }
        };

        let bbp_theory = t.d_alpha >= 0.0;
        let bbp_experiment = {
            let with_spec: Vec<&ExperimentRecord> = trapped
                .iter()
                .filter(|r| r.eigenvalues.is_some() && r.min_vec_overlap.is_some())
                .map(|r| **r)
                .collect();
            if with_spec.is_empty() {
                None
            } else {
                let hits = with_spec
                    .iter()
                    .filter(|r| {
                        let min_eig = r.eigenvalues.as_ref().unwrap()[0];
                        min_eig < t.w_min - 0.02 * t.w_min.abs().max(1.0)
                            && r.min_vec_overlap.unwrap() > 0.1
                    })
                    .count();
                Some(2 * hits >= with_spec.len())
            }
        };
        let bbp_agree = bbp_experiment.map(|e| e == bbp_theory);

        rows.push(CompareRow {
            a: t.a,
            alpha: t.alpha,
            q: t.q,
            n_runs: runs.len(),
            n_trapped,
            mean_trapped_energy: mean_energy,
            energy_in_band: in_band,
            margin_low,
            margin_high,
            spectral_ks,
            f_ks,
            label_overlap,
            bbp_theory,
            bbp_experiment,
            bbp_agree,
        });
    }
    Ok(CompareReport {
        schema_version: SCHEMA_VERSION,
        rows,
    })
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "a,alpha,q,n_runs,n_trapped,mean_trapped_energy,energy_in_band,margin_low,margin_high,spectral_ks,f_ks,label_overlap,bbp_theory,bbp_experiment,bbp_agree\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                fmt17(r.a),
                fmt17(r.alpha),
                fmt17(r.q),
                r.n_runs,
                r.n_trapped,
                fmt17(r.mean_trapped_energy),
                r.energy_in_band,
                fmt17(r.margin_low),
                fmt17(r.margin_high),
                fmt17(r.spectral_ks),
                fmt17(r.f_ks),
                fmt17(r.label_overlap),
                r.bbp_theory,
                r.bbp_experiment.map(|b| b.to_string()).unwrap_or_else(|| "nan".into()),
                r.bbp_agree.map(|b| b.to_string()).unwrap_or_else(|| "nan".into()),
            ));
        }
        s
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&format!(
                "(a={}, alpha={}, q={}): runs={} trapped={} e_mean={:.5} in_band={} ks_spec={:.4} ks_F={:.4} nu_overlap={:.4} bbp(theory={}, exp={:?})\n",
                r.a, r.alpha, r.q, r.n_runs, r.n_trapped, r.mean_trapped_energy,
                r.energy_in_band, r.spectral_ks, r.f_ks, r.label_overlap,
                r.bbp_theory, r.bbp_experiment,
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_distance_of_exact_quantiles_is_small() {
        let cdf: Vec<(f64, f64)> = (0..=100)
            .map(|i| {
                let x = i as f64 / 100.0;
                (x, x)
            })
            .collect();
        let samples: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_distance(&samples, &cdf);
        assert!(d <= 0.5 / 1000.0 + 1e-12, "d = {d}");
    }

    #[test]
    fn cdf_self_distance_is_zero() {
        let cdf: Vec<(f64, f64)> = (0..=50).map(|i| (i as f64, i as f64 / 50.0)).collect();
        assert_eq!(cdf_sup_distance(&cdf, &cdf), 0.0);
    }

    #[test]
    fn prob_table_self_overlap_is_one() {
        let t = ProbTable2d {
            lo: -1.0,
            hi: 1.0,
            bins: 4,
            p: vec![1.0 / 16.0; 16],
        };
        assert!((t.overlap(&t) - 1.0).abs() < 1e-12);
    }
}
