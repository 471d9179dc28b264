//! Sweeps over `(alpha, q, e)`: energy bands, trivialization and BBP
//! threshold curves, and the full topological phase diagram.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbp;
use crate::critical::{self, TcOptions};
use crate::error::SolveError;
use crate::loss::SingleIndexLoss;
use crate::measure::FrozenLabelLaw;
use crate::minima::{self, BandOptions, MinimaMode, SolverOptions};
use crate::mp::fmt17;

/// Bundle of solver options used across a sweep.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScanOptions {
    pub solver: SolverOptions,
    pub tc: TcOptions,
    pub band: BandOptions,
}

/// Generic bisection on a scalar predicate of `alpha`.
pub fn threshold_bisect(
    predicate: &mut dyn FnMut(f64) -> Result<f64, SolveError>,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64, SolveError> {
    let (mut lo, mut hi) = bracket;
    let f_lo = predicate(lo)?;
    let f_hi = predicate(hi)?;
    if !(f_lo.is_finite() && f_hi.is_finite()) || f_lo.signum() == f_hi.signum() {
        return Err(SolveError::NoSignChange {
            lo,
            hi,
            f_lo,
            f_hi,
        });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = predicate(mid)?;
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which minima the BBP analysis targets within the energy band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyClass {
    Typical,
    Lowest,
    Highest,
}

impl EnergyClass {
    pub fn tag(&self) -> &'static str {
        match self {
            EnergyClass::Typical => "typ",
            EnergyClass::Lowest => "low",
            EnergyClass::Highest => "high",
        }
    }
}

/// Label law of minima of the given energy class at `(q, alpha)`.
///
/// Regenerated by fresh complexity solves: typical-energy minima use the
/// free-`e` solve; lowest/highest use a pinned solve at the band edge.
pub fn minima_law<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    alpha: f64,
    class: EnergyClass,
    opts: &ScanOptions,
) -> Result<FrozenLabelLaw, SolveError> {
    let sol = match class {
        EnergyClass::Typical => {
            minima::complexity(loss, q, alpha, None, MinimaMode::Tilde0, None, &opts.solver)?
        }
        EnergyClass::Lowest | EnergyClass::Highest => {
            let band = minima::energy_band(loss, q, alpha, MinimaMode::Tilde0, &opts.solver, &opts.band)?;
            if band.empty {
                return Err(SolveError::EmptyBand {
                    sigma_free: band.sigma_at_star,
                });
            }
            let e = match class {
                EnergyClass::Lowest => band.e_min,
                _ => band.e_max,
            };
            minima::complexity(loss, q, alpha, Some(e), MinimaMode::Tilde0, None, &opts.solver)?
        }
    };
    if !sol.converged {
        return Err(SolveError::NotConverged);
    }
    sol.frozen_law(loss, &opts.solver.quad)
}

/// BBP threshold for an energy class at fixed `q`.
pub fn bbp_threshold_for_class<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    class: EnergyClass,
    bracket: (f64, f64),
    tol: f64,
    opts: &ScanOptions,
) -> Result<f64, SolveError> {
    let mut family =
        |alpha: f64| -> Result<FrozenLabelLaw, SolveError> { minima_law(loss, q, alpha, class, opts) };
    bbp::bbp_threshold(&mut family, bracket, tol)
}

/// Onset of the signal-curvature multiplier: smallest `alpha` in the
/// bracket with `lambda_star > threshold` at the free-energy optimum.
pub fn lambda_star_onset<L: SingleIndexLoss + Clone>(
    loss: &L,
    q: f64,
    bracket: (f64, f64),
    threshold: f64,
    tol: f64,
    opts: &ScanOptions,
) -> Result<f64, SolveError> {
    let mut pred = |alpha: f64| -> Result<f64, SolveError> {
        let sol = minima::complexity(loss, q, alpha, None, MinimaMode::Tilde0, None, &opts.solver)?;
        Ok(sol.multipliers.star - threshold)
    };
    threshold_bisect(&mut pred, bracket, tol)
}

/// One cell of the phase diagram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseDiagramCell {
    pub a: f64,
    pub alpha: f64,
    pub q: f64,
    pub sigma_tilde0: f64,
    pub sigma_fin: f64,
    pub sigma_tc: f64,
    pub e_star: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub d_alpha_typ: f64,
    pub d_alpha_low: f64,
    pub d_alpha_high: f64,
    pub flags: String,
}

/// Per-`q` threshold curve entries (NaN where no crossing was found).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub a: f64,
    pub q: f64,
    pub alpha_triv_min: f64,
    pub alpha_triv_fin: f64,
    pub alpha_triv_tc: f64,
    pub alpha_bbp_typ: f64,
    pub alpha_bbp_low: f64,
    pub alpha_bbp_high: f64,
}

/// Sweep configuration.
#[derive(Debug, Clone)]
pub struct PhaseDiagramOptions {
    pub scan: ScanOptions,
    /// Compute BBP functionals per cell and BBP threshold curves.
    pub with_bbp: bool,
    /// Compute energy bands per cell.
    pub with_band: bool,
    /// Compute the critical-point complexity per cell.
    pub with_tc: bool,
    /// Bisection tolerance of the threshold curves, in `alpha`.
    pub bisect_tol: f64,
}

impl Default for PhaseDiagramOptions {
    fn default() -> Self {
        Self {
            scan: ScanOptions::default(),
            with_bbp: true,
            with_band: true,
            with_tc: true,
            bisect_tol: 1e-2,
        }
    }
}

/// Full phase-diagram sweep. Rows (fixed `q`) run in parallel; within a row
/// the `alpha` scan is warm-started left to right with a cold-start fallback.
/// Cell failures are recorded in the flags column and the sweep continues.
pub fn phase_diagram<L: SingleIndexLoss + Clone + Sync>(
    loss: &L,
    a_param: f64,
    alpha_grid: &[f64],
    q_grid: &[f64],
    opts: &PhaseDiagramOptions,
) -> (Vec<PhaseDiagramCell>, Vec<ThresholdRow>) {
    // The scalar formulas degrade as q -> 1; cap the scan.
    let qs: Vec<f64> = q_grid.iter().map(|&q| q.min(0.95)).collect();

    let rows: Vec<(Vec<PhaseDiagramCell>, ThresholdRow)> = qs
        .par_iter()
        .map(|&q| scan_row(loss, a_param, alpha_grid, q, opts))
        .collect();

    let mut cells = Vec::new();
    let mut thresholds = Vec::new();
    for (row_cells, row_thresh) in rows {
        cells.extend(row_cells);
        thresholds.push(row_thresh);
    }
    cells.sort_by(|x, y| {
        (x.q, x.alpha)
            .partial_cmp(&(y.q, y.alpha))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    thresholds.sort_by(|x, y| x.q.partial_cmp(&y.q).unwrap_or(std::cmp::Ordering::Equal));
    (cells, thresholds)
}

fn scan_row<L: SingleIndexLoss + Clone>(
    loss: &L,
    a_param: f64,
    alpha_grid: &[f64],
    q: f64,
    opts: &PhaseDiagramOptions,
) -> (Vec<PhaseDiagramCell>, ThresholdRow) {
    let sopts = &opts.scan.solver;
    let mut cells = Vec::with_capacity(alpha_grid.len());
    let mut warm_t0: Option<minima::OuterPoint> = None;
    let mut warm_fin: Option<minima::OuterPoint> = None;
    let mut warm_tc: Option<critical::CriticalOuter> = None;

    for &alpha in alpha_grid {
        let mut flags: Vec<&'static str> = Vec::new();
        // tilde0, warm-started with cold fallback.
        let t0 = minima::complexity(loss, q, alpha, None, MinimaMode::Tilde0, warm_t0, sopts)
            .or_else(|_| minima::complexity(loss, q, alpha, None, MinimaMode::Tilde0, None, sopts));
        let fin = minima::complexity(loss, q, alpha, None, MinimaMode::Fin, warm_fin, sopts)
            .or_else(|_| minima::complexity(loss, q, alpha, None, MinimaMode::Fin, None, sopts));
        let tc = if opts.with_tc {
            Some(
                critical::complexity_tc(loss, q, alpha, None, warm_tc, &opts.scan.tc).or_else(
                    |_| critical::complexity_tc(loss, q, alpha, None, None, &opts.scan.tc),
                ),
            )
        } else {
            None
        };

        let (sigma_tilde0, e_star) = match &t0 {
            Ok(s) => {
                warm_t0 = Some(s.outer);
                if !s.converged {
                    flags.push("tilde0_unconverged");
                }
                (s.sigma, s.e_resolved)
            }
            Err(_) => {
                flags.push("tilde0_failed");
                (f64::NAN, f64::NAN)
            }
        };
        let sigma_fin = match &fin {
            Ok(s) => {
                warm_fin = Some(s.outer);
                if !s.converged {
                    flags.push("fin_unconverged");
                }
                s.sigma
            }
            Err(_) => {
                flags.push("fin_failed");
                f64::NAN
            }
        };
        let sigma_tc = match &tc {
            Some(Ok(s)) => {
                warm_tc = Some(s.vars);
                s.sigma
            }
            Some(Err(_)) => {
                flags.push("tc_failed");
                f64::NAN
            }
            None => f64::NAN,
        };

        let (mut e_min, mut e_max) = (f64::NAN, f64::NAN);
        let (mut d_typ, mut d_low, mut d_high) = (f64::NAN, f64::NAN, f64::NAN);
        if opts.with_band && sigma_tilde0 > 0.0 {
            match minima::energy_band(loss, q, alpha, MinimaMode::Tilde0, sopts, &opts.scan.band) {
                Ok(band) if !band.empty => {
                    e_min = band.e_min;
                    e_max = band.e_max;
                    if opts.with_bbp {
                        for (class, slot) in [
                            (EnergyClass::Lowest, &mut d_low),
                            (EnergyClass::Highest, &mut d_high),
                        ] {
                            let e = match class {
                                EnergyClass::Lowest => e_min,
                                _ => e_max,
                            };
                            match minima::complexity(
                                loss,
                                q,
                                alpha,
                                Some(e),
                                MinimaMode::Tilde0,
                                warm_t0,
                                sopts,
                            )
                            .map_err(SolveError::from)
                            .and_then(|s| s.frozen_law(loss, &sopts.quad))
                            .and_then(|law| Ok(bbp::edge_functionals(&law, alpha)?))
                            {
                                Ok(r) => *slot = r.d_alpha,
                                Err(_) => flags.push("bbp_edge_failed"),
                            }
                        }
                    }
                }
                Ok(_) => {}
                Err(_) => flags.push("band_failed"),
            }
        }
        if opts.with_bbp {
            if let Ok(s) = &t0 {
                if s.converged {
                    match s
                        .frozen_law(loss, &sopts.quad)
                        .and_then(|law| Ok(bbp::edge_functionals(&law, alpha)?))
                    {
                        Ok(r) => d_typ = r.d_alpha,
                        Err(_) => flags.push("bbp_typ_failed"),
                    }
                }
            }
        }

        cells.push(PhaseDiagramCell {
            a: a_param,
            alpha,
            q,
            sigma_tilde0,
            sigma_fin,
            sigma_tc,
            e_star,
            e_min,
            e_max,
            d_alpha_typ: d_typ,
            d_alpha_low: d_low,
            d_alpha_high: d_high,
            flags: if flags.is_empty() {
                "ok".to_string()
            } else {
                flags.join("|")
            },
        });
    }

    // Threshold curves from sign changes along the row.
    let sigma_of = |cells: &[PhaseDiagramCell], pick: fn(&PhaseDiagramCell) -> f64| -> Vec<(f64, f64)> {
        cells
            .iter()
            .map(|c| (c.alpha, pick(c)))
            .filter(|(_, v)| v.is_finite())
            .collect()
    };
    let bisect_between = |mut pred: Box<dyn FnMut(f64) -> Result<f64, SolveError> + '_>,
                          series: &[(f64, f64)]|
     -> f64 {
        for w in series.windows(2) {
            let (a0, v0) = w[0];
            let (a1, v1) = w[1];
            if v0.signum() != v1.signum() {
                return threshold_bisect(&mut *pred, (a0, a1), opts.bisect_tol)
                    .unwrap_or(f64::NAN);
            }
        }
        f64::NAN
    };

    let alpha_triv_min = bisect_between(
        Box::new(|alpha| {
            Ok(minima::complexity(loss, q, alpha, None, MinimaMode::Tilde0, None, sopts)?.sigma)
        }),
        &sigma_of(&cells, |c| c.sigma_tilde0),
    );
    let alpha_triv_fin = bisect_between(
        Box::new(|alpha| {
            Ok(minima::complexity(loss, q, alpha, None, MinimaMode::Fin, None, sopts)?.sigma)
        }),
        &sigma_of(&cells, |c| c.sigma_fin),
    );
    let alpha_triv_tc = if opts.with_tc {
        bisect_between(
            Box::new(|alpha| {
                Ok(critical::complexity_tc(loss, q, alpha, None, None, &opts.scan.tc)?.sigma)
            }),
            &sigma_of(&cells, |c| c.sigma_tc),
        )
    } else {
        f64::NAN
    };
    let bbp_thresh = |class: EnergyClass, pick: fn(&PhaseDiagramCell) -> f64| -> f64 {
        if !opts.with_bbp {
            return f64::NAN;
        }
        bisect_between(
            Box::new(move |alpha| {
                let law = minima_law(loss, q, alpha, class, &opts.scan)?;
                Ok(bbp::edge_functionals(&law, alpha)?.d_alpha)
            }),
            &sigma_of(&cells, pick),
        )
    };
    let alpha_bbp_typ = bbp_thresh(EnergyClass::Typical, |c| c.d_alpha_typ);
    let alpha_bbp_low = bbp_thresh(EnergyClass::Lowest, |c| c.d_alpha_low);
    let alpha_bbp_high = bbp_thresh(EnergyClass::Highest, |c| c.d_alpha_high);

    (
        cells,
        ThresholdRow {
            a: a_param,
            q,
            alpha_triv_min,
            alpha_triv_fin,
            alpha_triv_tc,
            alpha_bbp_typ,
            alpha_bbp_low,
            alpha_bbp_high,
        },
    )
}

/// Fixed-energy overlap scan: `sigma_tilde0(q, e_fixed)` per `q`, plus the
/// interval of positive complexity.
pub fn high_overlap_band<L: SingleIndexLoss + Clone>(
    loss: &L,
    alpha: f64,
    e_fixed: f64,
    q_grid: &[f64],
    opts: &ScanOptions,
) -> (Vec<(f64, f64)>, Option<(f64, f64)>) {
    if !(e_fixed > 0.0) {
        return (Vec::new(), None);
    }
    let mut out = Vec::with_capacity(q_grid.len());
    let mut warm: Option<minima::OuterPoint> = None;
    for &q in q_grid {
        let q = q.min(0.95);
        let sigma = minima::complexity(
            loss,
            q,
            alpha,
            Some(e_fixed),
            MinimaMode::Tilde0,
            warm,
            &opts.solver,
        )
        .or_else(|_| {
            minima::complexity(loss, q, alpha, Some(e_fixed), MinimaMode::Tilde0, None, &opts.solver)
        });
        match sigma {
            Ok(s) => {
                warm = Some(s.outer);
                out.push((q, s.sigma));
            }
            Err(_) => out.push((q, f64::NAN)),
        }
    }
    let positive: Vec<f64> = out
        .iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(q, _)| *q)
        .collect();
    let interval = match (positive.first(), positive.last()) {
        (Some(&lo), Some(&hi)) => Some((lo, hi)),
        _ => None,
    };
    (out, interval)
}

/// Cells CSV with the documented column order.
pub fn cells_to_csv(cells: &[PhaseDiagramCell]) -> String {
    let mut s = String::from(
        "a,alpha,q,sigma_tilde0,sigma_fin,sigma_tc,e_star,e_min,e_max,d_alpha_typ,d_alpha_low,d_alpha_high,flags\n",
    );
    for c in cells {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt17(c.a),
            fmt17(c.alpha),
            fmt17(c.q),
            fmt17(c.sigma_tilde0),
            fmt17(c.sigma_fin),
            fmt17(c.sigma_tc),
            fmt17(c.e_star),
            fmt17(c.e_min),
            fmt17(c.e_max),
            fmt17(c.d_alpha_typ),
            fmt17(c.d_alpha_low),
            fmt17(c.d_alpha_high),
            c.flags
        ));
    }
    s
}

/// Threshold-curves CSV with the documented column order.
pub fn thresholds_to_csv(rows: &[ThresholdRow]) -> String {
    let mut s = String::from(
        "a,q,alpha_triv_min,alpha_triv_fin,alpha_triv_tc,alpha_bbp_typ,alpha_bbp_low,alpha_bbp_high\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt17(r.a),
            fmt17(r.q),
            fmt17(r.alpha_triv_min),
            fmt17(r.alpha_triv_fin),
            fmt17(r.alpha_triv_tc),
            fmt17(r.alpha_bbp_typ),
            fmt17(r.alpha_bbp_low),
            fmt17(r.alpha_bbp_high)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_linear_root() {
        let mut pred = |alpha: f64| -> Result<f64, SolveError> { Ok(alpha - 5.0) };
        let root = threshold_bisect(&mut pred, (0.0, 10.0), 1e-2).unwrap();
        assert!((root - 5.0).abs() <= 1e-2);
    }

    #[test]
    fn bisect_requires_sign_change() {
        let mut pred = |_alpha: f64| -> Result<f64, SolveError> { Ok(1.0) };
        assert!(matches!(
            threshold_bisect(&mut pred, (0.0, 1.0), 1e-3),
            Err(SolveError::NoSignChange { .. })
        ));
    }
}
