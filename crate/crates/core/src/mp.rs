//! Generalized Marchenko-Pastur solver: Stieltjes transforms of weighted
//! Wishart spectra, Stieltjes-Perron density grids, support edges via the
//! Silverstein conditions, and the shifted Hessian density.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::MpError;
use crate::measure::FrozenLabelLaw;

/// A law of Hessian weights `F`, queried through expectations.
///
/// Backed either by a converged tilted measure (frozen to quadrature nodes)
/// or by an empirical sample, plus simple test laws.
pub trait WeightLaw: Sync {
    fn expect_f(&self, h: &dyn Fn(f64) -> f64) -> f64;
    fn expect_fc(&self, h: &dyn Fn(f64) -> Complex64) -> Complex64;
    /// Essential infimum of the weight on the support.
    fn f_inf(&self) -> f64;
    /// Finite essential supremum when known (enables right-edge detection).
    fn f_sup(&self) -> Option<f64>;
    /// Spherical shift `t(nu) = E[y d1 l]`; zero when inapplicable.
    fn shift_t(&self) -> f64;
}

impl WeightLaw for FrozenLabelLaw {
    fn expect_f(&self, h: &dyn Fn(f64) -> f64) -> f64 {
        FrozenLabelLaw::expect_f(self, h)
    }
    fn expect_fc(&self, h: &dyn Fn(f64) -> Complex64) -> Complex64 {
        FrozenLabelLaw::expect_fc(self, h)
    }
    fn f_inf(&self) -> f64 {
        self.f_inf
    }
    fn f_sup(&self) -> Option<f64> {
        None
    }
    fn shift_t(&self) -> f64 {
        self.t_shift
    }
}

/// Constant weight `F = f0` (classical Marchenko-Pastur for `f0 = 1`).
#[derive(Debug, Clone, Copy)]
pub struct ConstWeight(pub f64);

impl WeightLaw for ConstWeight {
    fn expect_f(&self, h: &dyn Fn(f64) -> f64) -> f64 {
        h(self.0)
    }
    fn expect_fc(&self, h: &dyn Fn(f64) -> Complex64) -> Complex64 {
        h(self.0)
    }
    fn f_inf(&self) -> f64 {
        self.0
    }
    fn f_sup(&self) -> Option<f64> {
        Some(self.0)
    }
    fn shift_t(&self) -> f64 {
        0.0
    }
}

/// Finitely supported weight law.
#[derive(Debug, Clone)]
pub struct DiscreteWeight {
    pub atoms: Vec<(f64, f64)>,
}

impl DiscreteWeight {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self, MpError> {
        let mass: f64 = atoms.iter().map(|a| a.1).sum();
        if atoms.is_empty() || (mass - 1.0).abs() > 1e-12 {
            return Err(MpError::BadInput(format!(
                "discrete weight law needs unit mass, got {mass}"
            )));
        }
        Ok(Self { atoms })
    }
}

impl WeightLaw for DiscreteWeight {
    fn expect_f(&self, h: &dyn Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(f, p)| p * h(f)).sum()
    }
    fn expect_fc(&self, h: &dyn Fn(f64) -> Complex64) -> Complex64 {
        self.atoms
            .iter()
            .map(|&(f, p)| h(f) * p)
            .fold(Complex64::new(0.0, 0.0), |a, b| a + b)
    }
    fn f_inf(&self) -> f64 {
        self.atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min)
    }
    fn f_sup(&self) -> Option<f64> {
        Some(
            self.atoms
                .iter()
                .map(|a| a.0)
                .fold(f64::NEG_INFINITY, f64::max),
        )
    }
    fn shift_t(&self) -> f64 {
        0.0
    }
}

/// Empirical weight law from simulated minima (equal-weight samples).
#[derive(Debug, Clone)]
pub struct EmpiricalWeight {
    pub samples: Vec<f64>,
    pub t_shift: f64,
}

impl WeightLaw for EmpiricalWeight {
    fn expect_f(&self, h: &dyn Fn(f64) -> f64) -> f64 {
        let n = self.samples.len() as f64;
        self.samples.iter().map(|&f| h(f)).sum::<f64>() / n
    }
    fn expect_fc(&self, h: &dyn Fn(f64) -> Complex64) -> Complex64 {
        let n = self.samples.len() as f64;
        self.samples
            .iter()
            .map(|&f| h(f))
            .fold(Complex64::new(0.0, 0.0), |a, b| a + b)
            / n
    }
    fn f_inf(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }
    fn f_sup(&self) -> Option<f64> {
        Some(
            self.samples
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
        )
    }
    fn shift_t(&self) -> f64 {
        self.t_shift
    }
}

/// Left-edge data: Stieltjes value and location.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EdgeInfo {
    pub g_min: f64,
    pub x_min: f64,
    /// True when the Silverstein scan hit the support bound `alpha / |f_inf|`
    /// without crossing 1; the edge conditions then hold only marginally.
    pub saturated: bool,
}

/// Hessian (or unshifted) spectral density on a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// `(w, density)` pairs, ascending in `w`.
    pub grid: Vec<(f64, f64)>,
    /// Left support edge (in the same coordinates as `grid`).
    pub left_edge: f64,
    /// Stieltjes transform at the left edge.
    pub g_min: f64,
    /// Spherical shift `t(nu)` applied (0 for unshifted grids).
    pub shift: f64,
    /// Stieltjes-Perron broadening.
    pub eps: f64,
    /// Trapezoidal mass of the grid.
    pub mass: f64,
    /// Grid indices where the root solve failed and the density was
    /// interpolated from neighbors.
    pub flagged: Vec<usize>,
}

impl SpectrumResult {
    /// Cumulative distribution by trapezoid, normalized to the grid mass.
    pub fn cdf(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.grid.len());
        let mut acc = 0.0;
        out.push((self.grid[0].0, 0.0));
        for i in 1..self.grid.len() {
            let (x0, d0) = self.grid[i - 1];
            let (x1, d1) = self.grid[i];
            acc += 0.5 * (d0 + d1) * (x1 - x0);
            out.push((x1, acc));
        }
        out
    }

    /// CSV export with columns `w,rho`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("w,rho\n");
        for &(w, rho) in &self.grid {
            s.push_str(&format!("{},{}\n", fmt17(w), fmt17(rho)));
        }
        s
    }
}

/// 17-significant-digit float formatting used by every CSV writer.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn m_of_g(law: &dyn WeightLaw, alpha: f64, g: Complex64) -> Complex64 {
    law.expect_fc(&|f| {
        let d = alpha + g * f;
        f / d
    })
}

fn m_prime_of_g(law: &dyn WeightLaw, alpha: f64, g: Complex64) -> Complex64 {
    law.expect_fc(&|f| {
        let d = alpha + g * f;
        -(f * f) / (d * d)
    })
}

/// Residual of the Marchenko-Pastur fixed point `G(g) = g + 1/(z - alpha m(g))`.
fn residual(law: &dyn WeightLaw, alpha: f64, z: Complex64, g: Complex64) -> Complex64 {
    g + 1.0 / (z - alpha * m_of_g(law, alpha, g))
}

/// Stieltjes transform of `mu_alpha[nu]` at `z` in the upper half plane.
///
/// Damped fixed-point iteration warm-started from `init` (or `-1/z`), with a
/// Newton fallback; the Herglotz property `Im g > 0` is enforced throughout,
/// which rejects the spurious second branch.
pub fn stieltjes_at(
    z: Complex64,
    law: &dyn WeightLaw,
    alpha: f64,
    init: Option<Complex64>,
) -> Result<Complex64, MpError> {
    if z.im <= 0.0 {
        return Err(MpError::BadInput(format!("Im z = {} <= 0", z.im)));
    }
    if alpha <= 1.0 {
        return Err(MpError::BadInput(format!("alpha = {alpha} <= 1")));
    }
    let tol = 1e-10;
    let mut g = match init {
        Some(g0) if g0.im > 0.0 => g0,
        _ => -1.0 / z,
    };
    if g.im <= 0.0 {
        g = Complex64::new(g.re, 1e-12);
    }

    let mut last_res = f64::INFINITY;
    // Phase 1: damped fixed point (globally attracting in C+).
    let mut damping = 1.0;
    for _ in 0..60 {
        let target = -1.0 / (z - alpha * m_of_g(law, alpha, g));
        let mut step = damping;
        let mut gn = g * (1.0 - step) + target * step;
        while gn.im <= 0.0 && step > 1e-6 {
            step *= 0.5;
            gn = g * (1.0 - step) + target * step;
        }
        let r = residual(law, alpha, z, gn).norm();
        if r > last_res && damping > 0.1 {
            damping *= 0.5;
        }
        last_res = r;
        g = gn;
        if r < 1e-6 {
            break;
        }
    }
    // Phase 2: Newton polish.
    for _ in 0..100 {
        let r = residual(law, alpha, z, g);
        if r.norm() < tol {
            if g.im <= 0.0 {
                return Err(MpError::NoConvergence {
                    z_re: z.re,
                    z_im: z.im,
                    residual: r.norm(),
                });
            }
            return Ok(g);
        }
        let d = z - alpha * m_of_g(law, alpha, g);
        let gp = 1.0 + alpha * m_prime_of_g(law, alpha, g) / (d * d);
        let mut step = r / gp;
        let mut gn = g - step;
        let mut halvings = 0;
        while (gn.im <= 0.0 || residual(law, alpha, z, gn).norm() > r.norm()) && halvings < 40 {
            step *= 0.5;
            gn = g - step;
            halvings += 1;
        }
        if halvings >= 40 {
            // Fall back to one damped fixed-point sweep.
            let target = -1.0 / (z - alpha * m_of_g(law, alpha, g));
            gn = g * 0.7 + target * 0.3;
            if gn.im <= 0.0 {
                gn = Complex64::new(gn.re, g.im * 0.5);
            }
        }
        g = gn;
    }
    let r = residual(law, alpha, z, g).norm();
    if r < 1e-8 && g.im > 0.0 {
        return Ok(g);
    }
    Err(MpError::NoConvergence {
        z_re: z.re,
        z_im: z.im,
        residual: r,
    })
}

/// `phi(s) = alpha E[(s F / (alpha + s F))^2]`, the Silverstein edge
/// functional; strictly increasing in `s` on the admissible range.
fn phi(law: &dyn WeightLaw, alpha: f64, s: f64) -> f64 {
    alpha
        * law.expect_f(&|f| {
            let r = s * f / (alpha + s * f);
            r * r
        })
}

/// Inverse Stieltjes transform `psi(s) = -1/s + alpha E[F/(alpha + sF)]`.
fn psi(law: &dyn WeightLaw, alpha: f64, s: f64) -> f64 {
    -1.0 / s + alpha * law.expect_f(&|f| f / (alpha + s * f))
}

/// Left support edge by the Silverstein conditions: the largest `S >= 0`
/// such that `alpha + S F > 0` on the support and `phi(S) <= 1`.
pub fn left_edge(law: &dyn WeightLaw, alpha: f64) -> Result<EdgeInfo, MpError> {
    if alpha <= 1.0 {
        return Err(MpError::BadInput(format!("alpha = {alpha} <= 1")));
    }
    let f_inf = law.f_inf();
    let s_support = if f_inf < 0.0 {
        alpha / (-f_inf)
    } else {
        f64::INFINITY
    };
    let s_hi = (s_support * (1.0 - 1e-9)).min(1e6);
    let s_lo = 1e-9;
    if !(phi(law, alpha, s_hi) > 1.0) {
        if f_inf < 0.0 {
            // Density decays fast enough near f_inf that condition (ii)
            // never binds; the edge transform sits at the support bound.
            let g_min = s_hi;
            return Ok(EdgeInfo {
                g_min,
                x_min: psi(law, alpha, g_min),
                saturated: true,
            });
        }
        return Err(MpError::EdgeNotFound {
            s_lo,
            s_hi,
            detail: format!(
                "phi stays below 1 on the scan range (phi({s_hi:.3e}) = {:.3e})",
                phi(law, alpha, s_hi)
            ),
        });
    }
    if phi(law, alpha, s_lo) >= 1.0 {
        return Err(MpError::EdgeNotFound {
            s_lo,
            s_hi,
            detail: "phi >= 1 already at the lower scan bound".into(),
        });
    }
    // phi is monotone increasing: bisect phi(s) = 1.
    let (mut lo, mut hi) = (s_lo, s_hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(law, alpha, mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 1e-14 * hi {
            break;
        }
    }
    let g_min = 0.5 * (lo + hi);
    Ok(EdgeInfo {
        g_min,
        x_min: psi(law, alpha, g_min),
        saturated: false,
    })
}

/// Right support edge for weight laws with a finite positive supremum.
pub fn right_edge(law: &dyn WeightLaw, alpha: f64) -> Result<EdgeInfo, MpError> {
    let f_sup = law.f_sup().ok_or_else(|| MpError::EdgeNotFound {
        s_lo: 0.0,
        s_hi: 0.0,
        detail: "right edge needs a finite weight supremum".into(),
    })?;
    if f_sup <= 0.0 {
        return Err(MpError::EdgeNotFound {
            s_lo: 0.0,
            s_hi: 0.0,
            detail: format!("weight supremum {f_sup} <= 0"),
        });
    }
    let s_bound = -alpha / f_sup;
    let (mut lo, mut hi) = (s_bound * (1.0 - 1e-9), -1e-9);
    // phi(hi) ~ 0 < 1, phi(lo) -> inf: bisect the crossing.
    if !(phi(law, alpha, lo) > 1.0) {
        return Err(MpError::EdgeNotFound {
            s_lo: lo,
            s_hi: hi,
            detail: "no crossing of phi = 1 on the negative branch".into(),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(law, alpha, mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < 1e-14 * hi.abs().max(1e-12) {
            break;
        }
    }
    let s_r = 0.5 * (lo + hi);
    Ok(EdgeInfo {
        g_min: s_r,
        x_min: psi(law, alpha, s_r),
        saturated: false,
    })
}

/// Stieltjes transform continued to the real axis strictly below the bulk:
/// solves `psi(s) = x` on the physical branch `s in (0, g_min)`.
pub fn real_branch_below(
    x: f64,
    law: &dyn WeightLaw,
    alpha: f64,
    edge: &EdgeInfo,
) -> Result<f64, MpError> {
    if x >= edge.x_min {
        return Err(MpError::BadInput(format!(
            "x = {x} not strictly below the bulk edge {}",
            edge.x_min
        )));
    }
    // psi is strictly increasing on (0, g_min) with psi(0+) = -inf.
    let (mut lo, mut hi) = (1e-14, edge.g_min);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if psi(law, alpha, mid) < x {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Options for density grids.
#[derive(Debug, Clone, Copy)]
pub struct GridOptions {
    pub eps: f64,
    pub n_points: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            n_points: 512,
        }
    }
}

/// Spectral density of `mu_alpha[nu]` on `[w_lo, w_hi]` by Stieltjes-Perron
/// inversion with broadening `eps`. Points after the first are warm-started
/// from their left neighbor, which tracks the physical branch.
pub fn density_grid(
    law: &dyn WeightLaw,
    alpha: f64,
    w_lo: f64,
    w_hi: f64,
    opts: &GridOptions,
) -> Result<SpectrumResult, MpError> {
    if !(opts.eps >= 1e-8 && opts.eps <= 1e-3) {
        return Err(MpError::BadInput(format!(
            "eps = {} outside [1e-8, 1e-3]",
            opts.eps
        )));
    }
    if opts.n_points < 64 {
        return Err(MpError::BadInput(format!(
            "n_points = {} < 64",
            opts.n_points
        )));
    }
    if !(w_hi > w_lo) {
        return Err(MpError::BadInput("empty w range".into()));
    }
    let edge = left_edge(law, alpha)?;
    let n = opts.n_points;
    let mut grid = Vec::with_capacity(n);
    let mut flagged = Vec::new();
    let mut warm: Option<Complex64> = None;
    for i in 0..n {
        let x = w_lo + (w_hi - w_lo) * i as f64 / (n - 1) as f64;
        let z = Complex64::new(x, opts.eps);
        match stieltjes_at(z, law, alpha, warm).or_else(|_| stieltjes_at(z, law, alpha, None)) {
            Ok(g) => {
                warm = Some(g);
                grid.push((x, g.im / std::f64::consts::PI));
            }
            Err(_) => {
                flagged.push(i);
                warm = None;
                grid.push((x, f64::NAN));
            }
        }
    }
    if flagged.len() * 100 > n {
        return Err(MpError::NoConvergence {
            z_re: grid[flagged[0]].0,
            z_im: opts.eps,
            residual: f64::NAN,
        });
    }
    // Interpolate flagged points from their nearest valid neighbors.
    for &i in &flagged {
        let mut l = i;
        while l > 0 && grid[l].1.is_nan() {
            l -= 1;
        }
        let mut r = i;
        while r + 1 < n && grid[r].1.is_nan() {
            r += 1;
        }
        let dl = if grid[l].1.is_nan() { None } else { Some(grid[l]) };
        let dr = if grid[r].1.is_nan() { None } else { Some(grid[r]) };
        grid[i].1 = match (dl, dr) {
            (Some((xl, vl)), Some((xr, vr))) if xr > xl => {
                vl + (vr - vl) * (grid[i].0 - xl) / (xr - xl)
            }
            (Some((_, v)), None) | (None, Some((_, v))) => v,
            _ => 0.0,
        };
    }
    let mut mass = 0.0;
    for i in 1..n {
        mass += 0.5 * (grid[i - 1].1 + grid[i].1) * (grid[i].0 - grid[i - 1].0);
    }
    Ok(SpectrumResult {
        grid,
        left_edge: edge.x_min,
        g_min: edge.g_min,
        shift: 0.0,
        eps: opts.eps,
        mass,
        flagged,
    })
}

/// Shifted Hessian density `rho(w) = sigma(w + t(nu))`; the range is given
/// in shifted coordinates.
pub fn hessian_density(
    law: &dyn WeightLaw,
    alpha: f64,
    w_lo: f64,
    w_hi: f64,
    opts: &GridOptions,
) -> Result<SpectrumResult, MpError> {
    let t = law.shift_t();
    let mut res = density_grid(law, alpha, w_lo + t, w_hi + t, opts)?;
    for p in &mut res.grid {
        p.0 -= t;
    }
    res.left_edge -= t;
    res.shift = t;
    Ok(res)
}

/// Grid range capturing the bulk: starts just below the left edge and
/// extends right until the running mass exceeds `1 - tail`, probing the
/// density on a coarse exponential sweep.
pub fn auto_range(law: &dyn WeightLaw, alpha: f64, tail: f64) -> Result<(f64, f64), MpError> {
    let edge = left_edge(law, alpha)?;
    let mut hi = edge.x_min.abs().max(1.0);
    let opts = GridOptions {
        eps: 1e-6,
        n_points: 128,
    };
    for _ in 0..12 {
        let lo = edge.x_min - 0.05 * (hi - edge.x_min).max(1.0);
        let res = density_grid(law, alpha, lo, hi, &opts)?;
        let tail_density = res.grid.last().unwrap().1;
        let span = hi - lo;
        if res.mass >= 1.0 - tail && tail_density * span < tail {
            return Ok((lo, hi));
        }
        hi = edge.x_min + 2.0 * (hi - edge.x_min);
    }
    Err(MpError::EdgeNotFound {
        s_lo: edge.x_min,
        s_hi: hi,
        detail: "auto range did not capture the requested mass".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form MP Stieltjes transform for unit weights: the solution of
    /// `z g^2 + (alpha z - alpha + 1) g + alpha = 0` with positive imaginary
    /// part.
    fn mp_closed_form(z: Complex64, alpha: f64) -> Complex64 {
        let a = z;
        let b = alpha * z - alpha + 1.0;
        let c = Complex64::new(alpha, 0.0);
        let disc = (b * b - 4.0 * a * c).sqrt();
        let g1 = (-b + disc) / (2.0 * a);
        let g2 = (-b - disc) / (2.0 * a);
        if g1.im > 0.0 {
            g1
        } else {
            g2
        }
    }

    #[test]
    fn matches_classical_mp_closed_form() {
        let law = ConstWeight(1.0);
        for &x in &[0.5, 1.0, 1.7, 2.2] {
            let z = Complex64::new(x, 1e-6);
            let g = stieltjes_at(z, &law, 4.0, None).unwrap();
            let exact = mp_closed_form(z, 4.0);
            assert!(
                (g - exact).norm() < 1e-4,
                "x = {x}: got {g}, exact {exact}"
            );
        }
    }

    #[test]
    fn large_z_resolvent_asymptotics() {
        let law = DiscreteWeight::new(vec![(1.0, 0.5), (3.0, 0.5)]).unwrap();
        let z = Complex64::new(1e6, 1.0);
        let g = stieltjes_at(z, &law, 4.0, None).unwrap();
        let expect = -1.0 / z;
        assert!((g - expect).norm() / expect.norm() < 1e-5);
    }

    #[test]
    fn zero_weight_gives_trivial_resolvent() {
        let law = ConstWeight(0.0);
        let z = Complex64::new(0.7, 0.3);
        let g = stieltjes_at(z, &law, 2.0, None).unwrap();
        assert!((g + 1.0 / z).norm() < 1e-12);
    }

    #[test]
    fn herglotz_on_random_points() {
        let law = DiscreteWeight::new(vec![(0.5, 0.25), (1.0, 0.5), (2.5, 0.25)]).unwrap();
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let z = Complex64::new(-1.0 + 5.0 * next(), 1e-4 + next());
            let g = stieltjes_at(z, &law, 3.0, None).unwrap();
            assert!(g.im > 0.0, "Im g = {} at z = {z}", g.im);
            assert!(residual(&law, 3.0, z, g).norm() < 1e-10);
        }
    }

    #[test]
    fn classical_edges_alpha_4() {
        let law = ConstWeight(1.0);
        let e = left_edge(&law, 4.0).unwrap();
        assert!((e.g_min - 4.0).abs() < 1e-9, "g_min = {}", e.g_min);
        assert!((e.x_min - 0.25).abs() < 1e-9, "x_min = {}", e.x_min);
        let r = right_edge(&law, 4.0).unwrap();
        assert!((r.x_min - 2.25).abs() < 1e-9, "x_max = {}", r.x_min);
        assert!((r.g_min + 4.0 / 3.0).abs() < 1e-9, "s_right = {}", r.g_min);
    }

    #[test]
    fn classical_edges_alpha_9() {
        let law = ConstWeight(1.0);
        let e = left_edge(&law, 9.0).unwrap();
        assert!((e.g_min - 4.5).abs() < 1e-9);
        assert!((e.x_min - 4.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn density_grid_mass_and_edges() {
        let law = ConstWeight(1.0);
        let opts = GridOptions {
            eps: 1e-6,
            n_points: 1024,
        };
        let res = density_grid(&law, 4.0, 0.05, 2.6, &opts).unwrap();
        assert!(res.flagged.is_empty());
        assert!(
            (res.mass - 1.0).abs() < 5e-3,
            "grid mass = {} off unity",
            res.mass
        );
        // Support edges within 2 grid spacings of 0.25 and 2.25.
        let spacing = (2.6 - 0.05) / 1023.0;
        let thresh = 1e-3;
        let first = res.grid.iter().find(|p| p.1 > thresh).unwrap().0;
        let last = res.grid.iter().rev().find(|p| p.1 > thresh).unwrap().0;
        assert!((first - 0.25).abs() < 2.0 * spacing + 1e-6, "left {first}");
        assert!((last - 2.25).abs() < 2.0 * spacing + 1e-6, "right {last}");
    }

    #[test]
    fn square_root_edge_exponent() {
        // density ~ sqrt(delta) above the left edge for the constant law.
        let law = ConstWeight(1.0);
        let alpha = 4.0;
        let edge = left_edge(&law, alpha).unwrap();
        let mut pts = Vec::new();
        for k in 0..9 {
            let delta = 1e-4 * 10f64.powf(k as f64 / 4.0);
            let z = Complex64::new(edge.x_min + delta, 1e-8);
            let g = stieltjes_at(z, &law, alpha, None).unwrap();
            pts.push((delta.ln(), (g.im / std::f64::consts::PI).ln()));
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope - 0.5).abs() < 0.1,
            "edge exponent {slope} not ~ 0.5"
        );
    }

    #[test]
    fn hessian_density_shift() {
        let law = EmpiricalWeight {
            samples: vec![1.0; 64],
            t_shift: 0.3,
        };
        let opts = GridOptions::default();
        let shifted = hessian_density(&law, 4.0, -0.2, 2.0, &opts).unwrap();
        let raw = density_grid(&law, 4.0, 0.1, 2.3, &opts).unwrap();
        assert!((shifted.left_edge - (raw.left_edge - 0.3)).abs() < 1e-9);
    }
}
