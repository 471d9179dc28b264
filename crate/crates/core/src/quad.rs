//! Adaptive two-dimensional quadrature for expectations under the base
//! Gaussian `mu_q` and under exponentially tilted laws restricted to `B_g`.
//!
//! Integration runs in standardized coordinates `(s, w)` with
//! `y = s`, `y* = q s + sqrt(1 - q^2) w`, so the reference weight is the
//! standard bivariate normal and the truncation box `[-R, R]^2` carries a
//! clean tail bound. Cells use a tensor Gauss-Kronrod 15(7) rule with an
//! embedded error estimate; the worst cell (deterministic tie-breaking) is
//! split until every component meets its tolerance. Evaluation order is
//! deterministic, so results are bit-reproducible at fixed tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::QuadError;

/// Correlated bivariate standard Gaussian base measure.
#[derive(Debug, Clone, Copy)]
pub struct BaseGaussian {
    q: f64,
}

impl BaseGaussian {
    pub fn new(q: f64) -> Result<Self, QuadError> {
        if !(q.is_finite() && q.abs() < 1.0) {
            return Err(QuadError::BadInput(format!(
                "correlation q = {q} outside (-1, 1)"
            )));
        }
        Ok(Self { q })
    }

    #[inline]
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Map standardized coordinates to the label pair `(y, y*)`.
    #[inline]
    pub fn to_labels(&self, s: f64, w: f64) -> (f64, f64) {
        (s, self.q * s + (1.0 - self.q * self.q).sqrt() * w)
    }
}

/// Vector-valued integrand against the tilted Gaussian.
///
/// The engine integrates `exp(log_weight(u)) * f_i(u)` against the base
/// Gaussian. `log_weight` is the tilt exponent (0 for plain expectations,
/// `-inf` outside the domain); `components` fills `f_i(u)`. Component 0
/// must be the constant 1, so that `values[i] / values[0]` is the
/// expectation of `f_i` under the normalized tilted law.
pub trait Integrand: Sync {
    fn dim(&self) -> usize;
    /// Number of leading components that drive mesh refinement; trailing
    /// components ride along on the adapted mesh. Defaults to all.
    fn adapt_dim(&self) -> usize {
        self.dim()
    }
    fn log_weight(&self, y: f64, y_star: f64) -> f64;
    fn components(&self, y: f64, y_star: f64, out: &mut [f64]);
}

/// Plain (untilted) scalar integrand.
pub struct Plain<F: Fn(f64, f64) -> f64 + Sync>(pub F);

impl<F: Fn(f64, f64) -> f64 + Sync> Integrand for Plain<F> {
    fn dim(&self) -> usize {
        2
    }
    fn log_weight(&self, _y: f64, _y_star: f64) -> f64 {
        0.0
    }
    fn components(&self, y: f64, y_star: f64, out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = (self.0)(y, y_star);
    }
}

/// Tolerances and budgets for one integration pass.
///
/// A component is converged when its summed cell error drops below
/// `max(abs_tol * scale0, rel_tol * |value|, floor * mass)`, where `scale0`
/// is the normalization component and `mass` the component's absolute cell
/// mass. The floor term is the rounding limit of cancelling integrands and
/// cannot be tightened past ~100 eps.
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    /// Absolute tolerance, relative to the normalization component scale.
    pub abs_tol: f64,
    /// Relative tolerance per component.
    pub rel_tol: f64,
    /// Rounding floor relative to the component's absolute mass.
    pub floor: f64,
    /// Subdivision budget; exceeding it raises `ToleranceNotMet`.
    pub max_cells: usize,
    /// Initial half-width of the truncation box in standardized coordinates.
    pub r_init: f64,
    /// Hard cap on the truncation half-width.
    pub r_max: f64,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            floor: 5e-14,
            max_cells: 20_000,
            r_init: 8.0,
            r_max: 40.0,
        }
    }
}

/// Result of one integration pass.
///
/// `values[i]` approximates the integral of `exp(log_weight - shift) * f_i`
/// against the base Gaussian; un-shift with `shift` where the absolute scale
/// matters (log-partition functions).
#[derive(Debug, Clone)]
pub struct QuadResult {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub shift: f64,
    pub cells: usize,
    pub radius: f64,
}

impl QuadResult {
    /// log of the integral of `exp(log_weight) * f_0` against the Gaussian.
    pub fn log_value0(&self) -> f64 {
        self.shift + self.values[0].ln()
    }

    /// Expectation of component `i` under the normalized tilted law.
    pub fn moment(&self, i: usize) -> f64 {
        self.values[i] / self.values[0]
    }
}

// Gauss-Kronrod 15-point nodes on [-1, 1] and weights; the odd indices form
// the embedded 7-point Gauss rule.
const GK_NODES: [f64; 15] = [
    -0.991455371120813,
    -0.949107912342759,
    -0.864864423359769,
    -0.741531185599394,
    -0.586087235467691,
    -0.405845151377397,
    -0.207784955007898,
    0.0,
    0.207784955007898,
    0.405845151377397,
    0.586087235467691,
    0.741531185599394,
    0.864864423359769,
    0.949107912342759,
    0.991455371120813,
];
const GK_WEIGHTS: [f64; 15] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
    0.204432940075298,
    0.190350578064785,
    0.169004726639267,
    0.140653259715525,
    0.104790010322250,
    0.063092092629979,
    0.022935322010529,
];
const G7_WEIGHTS: [f64; 7] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
    0.381830050505119,
    0.279705391489277,
    0.129484966168870,
];

const LN_2PI: f64 = 1.837_877_066_409_345_3;
// exp() underflows to zero strictly below this exponent.
const EXP_UNDERFLOW: f64 = -745.0;

struct Cell {
    id: u64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    hi: Vec<f64>,
    err: Vec<f64>,
    alive: bool,
}

#[derive(PartialEq)]
struct HeapEntry {
    key: f64,
    id: u64,
    slot: usize,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Larger key first; ties broken by smaller (older) id.
        self.key
            .partial_cmp(&other.key)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn eval_cell(
    base: &BaseGaussian,
    f: &dyn Integrand,
    shift: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    scratch: &mut [f64],
) -> Result<(Vec<f64>, Vec<f64>), QuadError> {
    let k = f.dim();
    let hx = 0.5 * (x1 - x0);
    let cx = 0.5 * (x1 + x0);
    let hy = 0.5 * (y1 - y0);
    let cy = 0.5 * (y1 + y0);
    let jac = hx * hy;

    let mut hi = vec![0.0; k];
    let mut lo = vec![0.0; k];
    for (ix, &nx) in GK_NODES.iter().enumerate() {
        let s = cx + hx * nx;
        let gauss_x = -0.5 * s * s;
        let gx = if ix % 2 == 1 { Some(ix / 2) } else { None };
        for (iy, &ny) in GK_NODES.iter().enumerate() {
            let w = cy + hy * ny;
            let (y, ys) = base.to_labels(s, w);
            let lw = f.log_weight(y, ys);
            let expo = lw + gauss_x - 0.5 * w * w - shift - LN_2PI;
            if !(expo > EXP_UNDERFLOW) {
                continue;
            }
            let weight = expo.exp();
            f.components(y, ys, &mut scratch[..k]);
            let wk = GK_WEIGHTS[ix] * GK_WEIGHTS[iy] * weight;
            for i in 0..k {
                hi[i] += wk * scratch[i];
            }
            if let (Some(gxi), true) = (gx, iy % 2 == 1) {
                let wg = G7_WEIGHTS[gxi] * G7_WEIGHTS[iy / 2] * weight;
                for i in 0..k {
                    lo[i] += wg * scratch[i];
                }
            }
        }
    }
    let mut err = vec![0.0; k];
    for i in 0..k {
        hi[i] *= jac;
        lo[i] *= jac;
        err[i] = (hi[i] - lo[i]).abs();
        if !hi[i].is_finite() {
            return Err(QuadError::BadInput(format!(
                "non-finite integrand component {i} on cell [{x0:.3}, {x1:.3}] x [{y0:.3}, {y1:.3}]"
            )));
        }
    }
    Ok((hi, err))
}

struct Prescan {
    radius: f64,
    shift: f64,
}

/// Coarse scan of the log-integrand (tilt + Gaussian density) on a 33x33
/// grid out to 1.5 R. Grows R while significant mass sits near the boundary
/// and raises `NonIntegrable` if the log-integrand increases outward along
/// any ray of the boundary ring at a level that matters.
fn prescan(
    base: &BaseGaussian,
    f: &dyn Integrand,
    opts: &QuadOptions,
) -> Result<Prescan, QuadError> {
    const N: usize = 33;
    let mut r = opts.r_init;
    loop {
        let scan_r = 1.5 * r;
        let mut vals = vec![[f64::NEG_INFINITY; N]; N];
        let mut max_all = f64::NEG_INFINITY;
        for (i, row) in vals.iter_mut().enumerate() {
            let s = -scan_r + 2.0 * scan_r * i as f64 / (N - 1) as f64;
            for (j, v) in row.iter_mut().enumerate() {
                let w = -scan_r + 2.0 * scan_r * j as f64 / (N - 1) as f64;
                let (y, ys) = base.to_labels(s, w);
                let lw = f.log_weight(y, ys);
                if lw.is_nan() {
                    return Err(QuadError::BadInput(format!(
                        "log-weight is NaN at (y, y*) = ({y}, {ys})"
                    )));
                }
                *v = lw - 0.5 * (s * s + w * w);
                if *v > max_all {
                    max_all = *v;
                }
            }
        }
        if !max_all.is_finite() {
            return Err(QuadError::BadInput(
                "log-integrand is -inf on the whole scan grid".into(),
            ));
        }

        let c = (N - 1) as isize / 2;
        for i in 0..N {
            for j in 0..N {
                if i != 0 && i != N - 1 && j != 0 && j != N - 1 {
                    continue;
                }
                let outer = vals[i][j];
                if outer <= max_all - 60.0 {
                    continue;
                }
                let di = (c - i as isize).signum();
                let dj = (c - j as isize).signum();
                let inner = vals[(i as isize + di) as usize][(j as isize + dj) as usize];
                if outer > inner + 1e-12 {
                    return Err(QuadError::NonIntegrable {
                        radius: scan_r,
                        boundary_log: outer,
                        interior_log: inner,
                    });
                }
            }
        }

        // Smallest radius outside of which the integrand is below
        // max - 38 nats (~3e-17 of the peak).
        let step = 2.0 * scan_r / (N - 1) as f64;
        let mut needed: f64 = 0.0;
        for (i, row) in vals.iter().enumerate() {
            let s = -scan_r + step * i as f64;
            for (j, &v) in row.iter().enumerate() {
                let w = -scan_r + step * j as f64;
                if v > max_all - 38.0 {
                    needed = needed.max(s.abs().max(w.abs()));
                }
            }
        }
        let r_eff = (needed + step).max(opts.r_init.min(8.0));
        if r_eff <= r || r >= opts.r_max {
            if needed + step > opts.r_max {
                return Err(QuadError::NonIntegrable {
                    radius: opts.r_max,
                    boundary_log: max_all - 38.0,
                    interior_log: max_all,
                });
            }
            return Ok(Prescan {
                radius: r_eff.min(opts.r_max),
                shift: max_all,
            });
        }
        r = (1.5 * r).min(opts.r_max);
    }
}

/// Run the adaptive subdivision to convergence; returns live cells.
fn adapt(
    base: &BaseGaussian,
    f: &dyn Integrand,
    opts: &QuadOptions,
    shift: f64,
    r: f64,
) -> Result<Vec<Cell>, QuadError> {
    let k = f.dim();
    let ka = f.adapt_dim().min(k).max(1);
    let mut scratch = vec![0.0; k];
    let mut cells: Vec<Cell> = Vec::with_capacity(256);
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
    let mut totals = vec![0.0; k];
    let mut errs = vec![0.0; k];
    let mut masses = vec![0.0; k];
    let mut next_id: u64 = 0;
    let mut live = 0usize;

    let mut push_cell = |x0: f64,
                         x1: f64,
                         y0: f64,
                         y1: f64,
                         cells: &mut Vec<Cell>,
                         heap: &mut BinaryHeap<HeapEntry>,
                         totals: &mut [f64],
                         errs: &mut [f64],
                         masses: &mut [f64],
                         scratch: &mut [f64]|
     -> Result<(), QuadError> {
        let (hi, err) = eval_cell(base, f, shift, x0, x1, y0, y1, scratch)?;
        let key = err[..ka].iter().copied().fold(0.0, f64::max);
        for i in 0..k {
            totals[i] += hi[i];
            errs[i] += err[i];
            masses[i] += hi[i].abs();
        }
        let slot = cells.len();
        cells.push(Cell {
            id: next_id,
            x0,
            x1,
            y0,
            y1,
            hi,
            err,
            alive: true,
        });
        heap.push(HeapEntry {
            key,
            id: next_id,
            slot,
        });
        next_id += 1;
        Ok(())
    };

    const INIT: usize = 8;
    for i in 0..INIT {
        for j in 0..INIT {
            let x0 = -r + 2.0 * r * i as f64 / INIT as f64;
            let x1 = -r + 2.0 * r * (i + 1) as f64 / INIT as f64;
            let y0 = -r + 2.0 * r * j as f64 / INIT as f64;
            let y1 = -r + 2.0 * r * (j + 1) as f64 / INIT as f64;
            push_cell(
                x0, x1, y0, y1, &mut cells, &mut heap, &mut totals, &mut errs, &mut masses,
                &mut scratch,
            )?;
            live += 1;
        }
    }

    loop {
        let scale0 = totals[0].abs().max(f64::MIN_POSITIVE);
        let mut converged = true;
        let mut worst_rel: f64 = 0.0;
        for i in 0..ka {
            let tol = (opts.abs_tol * scale0)
                .max(opts.rel_tol * totals[i].abs())
                .max(opts.floor * masses[i]);
            if errs[i] > tol {
                converged = false;
            }
            worst_rel = worst_rel.max(errs[i] / totals[i].abs().max(scale0));
        }
        if converged {
            cells.retain(|c| c.alive);
            return Ok(cells);
        }
        if live >= opts.max_cells {
            return Err(QuadError::ToleranceNotMet {
                cells: live,
                worst_rel,
            });
        }

        let entry = loop {
            match heap.pop() {
                Some(e) if cells[e.slot].alive && cells[e.slot].id == e.id => break Some(e),
                Some(_) => continue,
                None => break None,
            }
        };
        let Some(entry) = entry else {
            cells.retain(|c| c.alive);
            return Ok(cells);
        };
        let (x0, x1, y0, y1) = {
            let cell = &mut cells[entry.slot];
            cell.alive = false;
            for i in 0..k {
                totals[i] -= cell.hi[i];
                errs[i] -= cell.err[i];
                masses[i] -= cell.hi[i].abs();
            }
            (cell.x0, cell.x1, cell.y0, cell.y1)
        };
        live -= 1;
        let (a, b) = if (x1 - x0) >= (y1 - y0) {
            let xm = 0.5 * (x0 + x1);
            ((x0, xm, y0, y1), (xm, x1, y0, y1))
        } else {
            let ym = 0.5 * (y0 + y1);
            ((x0, x1, y0, ym), (x0, x1, ym, y1))
        };
        for &(cx0, cx1, cy0, cy1) in &[a, b] {
            push_cell(
                cx0, cx1, cy0, cy1, &mut cells, &mut heap, &mut totals, &mut errs, &mut masses,
                &mut scratch,
            )?;
            live += 1;
        }
    }
}

/// Integrate a vector integrand; see [`Integrand`] for conventions.
pub fn integrate(
    base: &BaseGaussian,
    f: &dyn Integrand,
    opts: &QuadOptions,
) -> Result<QuadResult, QuadError> {
    let k = f.dim();
    if k == 0 {
        return Err(QuadError::BadInput("integrand has zero components".into()));
    }
    let pre = prescan(base, f, opts)?;
    let mut cells = adapt(base, f, opts, pre.shift, pre.radius)?;
    // Deterministic reduction in creation order.
    cells.sort_by_key(|c| c.id);
    let mut values = vec![0.0; k];
    let mut errors = vec![0.0; k];
    for c in &cells {
        for i in 0..k {
            values[i] += c.hi[i];
            errors[i] += c.err[i];
        }
    }
    Ok(QuadResult {
        values,
        errors,
        shift: pre.shift,
        cells: cells.len(),
        radius: pre.radius,
    })
}

/// Expectation of `f` under the plain base Gaussian `mu_q`.
pub fn expect_plain(
    base: &BaseGaussian,
    f: impl Fn(f64, f64) -> f64 + Sync,
    opts: &QuadOptions,
) -> Result<f64, QuadError> {
    let res = integrate(base, &Plain(f), opts)?;
    Ok(res.moment(1))
}

/// One quadrature node of a converged mesh: `(y, y*, weight)`.
pub type Node = (f64, f64, f64);

/// Walk a converged adaptive mesh and emit every Kronrod node with its final
/// weight (cell map x rule weight x Gaussian density x tilt). The node set
/// behaves as an atomic approximation of the tilted law: `sum w_i f(u_i)`
/// reproduces the pass value of `f` component-wise.
pub fn collect_nodes(
    base: &BaseGaussian,
    f: &dyn Integrand,
    opts: &QuadOptions,
) -> Result<(Vec<Node>, QuadResult), QuadError> {
    let k = f.dim();
    let pre = prescan(base, f, opts)?;
    let mut cells = adapt(base, f, opts, pre.shift, pre.radius)?;
    cells.sort_by_key(|c| c.id);
    let mut values = vec![0.0; k];
    let mut errors = vec![0.0; k];
    let mut nodes = Vec::with_capacity(cells.len() * 225);
    for c in &cells {
        for i in 0..k {
            values[i] += c.hi[i];
            errors[i] += c.err[i];
        }
        let hx = 0.5 * (c.x1 - c.x0);
        let cx = 0.5 * (c.x1 + c.x0);
        let hy = 0.5 * (c.y1 - c.y0);
        let cy = 0.5 * (c.y1 + c.y0);
        let jac = hx * hy;
        for (ix, &nx) in GK_NODES.iter().enumerate() {
            let s = cx + hx * nx;
            for (iy, &ny) in GK_NODES.iter().enumerate() {
                let w = cy + hy * ny;
                let (y, ys) = base.to_labels(s, w);
                let lw = f.log_weight(y, ys);
                let expo = lw - 0.5 * (s * s + w * w) - pre.shift - LN_2PI;
                if !(expo > EXP_UNDERFLOW) {
                    continue;
                }
                let wt = jac * GK_WEIGHTS[ix] * GK_WEIGHTS[iy] * expo.exp();
                if wt > 0.0 {
                    nodes.push((y, ys, wt));
                }
            }
        }
    }
    Ok((
        nodes,
        QuadResult {
            values,
            errors,
            shift: pre.shift,
            cells: cells.len(),
            radius: pre.radius,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_moments() {
        let opts = QuadOptions::default();
        let base = BaseGaussian::new(0.3).unwrap();
        let m = expect_plain(&base, |y, ys| y * ys, &opts).unwrap();
        assert!((m - 0.3).abs() < 1e-9, "E[y y*] = {m}");
        let v = expect_plain(&base, |y, _| y * y, &opts).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "E[y^2] = {v}");
        let vs = expect_plain(&base, |_, ys| ys * ys, &opts).unwrap();
        assert!((vs - 1.0).abs() < 1e-9, "E[y*^2] = {vs}");
    }

    #[test]
    fn normalization_is_one() {
        for &q in &[0.0, -0.6, 0.9] {
            let base = BaseGaussian::new(q).unwrap();
            let res = integrate(&base, &Plain(|_, _| 1.0), &QuadOptions::default()).unwrap();
            assert!(
                (res.values[0] - 1.0).abs() < 1e-10,
                "q={q}: Z = {}",
                res.values[0]
            );
        }
    }

    #[test]
    fn rejects_bad_correlation() {
        assert!(BaseGaussian::new(1.0).is_err());
        assert!(BaseGaussian::new(f64::NAN).is_err());
    }

    #[test]
    fn monotone_refinement() {
        let base = BaseGaussian::new(0.2).unwrap();
        let coarse = QuadOptions {
            rel_tol: 1e-5,
            abs_tol: 1e-7,
            ..QuadOptions::default()
        };
        let fine = QuadOptions {
            rel_tol: 5e-6,
            abs_tol: 5e-8,
            ..QuadOptions::default()
        };
        let f = |y: f64, ys: f64| (y * y + 0.5 * ys).cos();
        let a = expect_plain(&base, f, &coarse).unwrap();
        let b = expect_plain(&base, f, &fine).unwrap();
        assert!((a - b).abs() <= 1e-5, "coarse {a} vs fine {b}");
    }

    #[test]
    fn deterministic_bit_for_bit() {
        let base = BaseGaussian::new(0.4).unwrap();
        let f = |y: f64, ys: f64| (y - ys).powi(4) * (0.3 * y).sin();
        let a = expect_plain(&base, f, &QuadOptions::default()).unwrap();
        let b = expect_plain(&base, f, &QuadOptions::default()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn collected_nodes_reproduce_pass_values() {
        let base = BaseGaussian::new(0.1).unwrap();
        let integrand = Plain(|y: f64, ys: f64| y * y + ys);
        let (nodes, res) = collect_nodes(&base, &integrand, &QuadOptions::default()).unwrap();
        let z: f64 = nodes.iter().map(|n| n.2).sum();
        let m: f64 = nodes.iter().map(|(y, ys, w)| w * (y * y + ys)).sum();
        assert!((z - res.values[0]).abs() < 1e-12);
        assert!((m - res.values[1]).abs() < 1e-10);
    }
}
