//! Probability measures on the real line with Stieltjes/Hilbert transforms,
//! Poisson smoothing, inversion, and quantiles.
//!
//! A measure is either atomic (sorted atoms with weights) or gridded (a
//! density sampled on a strictly increasing grid, integrated by the
//! trapezoidal rule, i.e. the density is treated as piecewise linear).
//! Transforms of gridded measures integrate the piecewise-linear density
//! against the Cauchy kernel cell by cell in closed form, so the only error
//! is the interpolation error of the grid itself; principal values fall out
//! of the same formulas.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const ATOMIC_MASS_TOL: f64 = 1e-12;
pub const GRIDDED_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Measure1D {
    Atomic { atoms: Vec<f64>, weights: Vec<f64> },
    Gridded { grid: Vec<f64>, values: Vec<f64> },
}

/// A density recovered from transform data; `eta` records the smoothing
/// scale at which the imaginary part was taken.
#[derive(Debug, Clone)]
pub struct SmoothedDensity {
    pub measure: Measure1D,
    pub eta: f64,
}

/// Result of a quantile query. `gap` is set when the requested level lands on
/// a CDF plateau spanning a support gap; the value is then the left endpoint
/// of that plateau (the smallest admissible point).
#[derive(Debug, Clone, Copy)]
pub struct Quantile {
    pub value: f64,
    pub gap: bool,
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| 0.5 * (v[0] + v[1]) * (g[1] - g[0]))
        .sum()
}

impl Measure1D {
    pub fn atomic(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() || atoms.is_empty() {
            return Err(LabError::Spec("atoms and weights must match and be nonempty".into()));
        }
        if !strictly_increasing(&atoms) || !all_finite(&atoms) {
            return Err(LabError::Spec("atoms must be finite and strictly increasing".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LabError::Spec("weights must be finite and nonnegative".into()));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > ATOMIC_MASS_TOL {
            return Err(LabError::Spec(format!("atomic mass {mass} deviates from 1")));
        }
        Ok(Measure1D::Atomic { atoms, weights })
    }

    /// Atomic measure with equal weights from an unsorted sample.
    /// Exactly coincident points are merged.
    pub fn from_sample(points: &[f64]) -> Result<Self> {
        let n = points.len();
        let mut s = points.to_vec();
        s.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let w = 1.0 / n as f64;
        let mut atoms = Vec::with_capacity(n);
        let mut weights: Vec<f64> = Vec::with_capacity(n);
        for &x in &s {
            match atoms.last() {
                Some(&last) if last == x => *weights.last_mut().unwrap() += w,
                _ => {
                    atoms.push(x);
                    weights.push(w);
                }
            }
        }
        Measure1D::atomic(atoms, weights)
    }

    pub fn point_mass(x: f64) -> Self {
        Measure1D::Atomic { atoms: vec![x], weights: vec![1.0] }
    }

    /// Validating constructor; the trapezoidal mass must already be 1.
    pub fn gridded(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return Err(LabError::Spec("grid and values must match, length >= 2".into()));
        }
        if !strictly_increasing(&grid) || !all_finite(&grid) {
            return Err(LabError::Spec("grid must be finite and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LabError::Spec("density values must be finite and nonnegative".into()));
        }
        let mass = trapezoid(&grid, &values);
        if (mass - 1.0).abs() > GRIDDED_MASS_TOL {
            return Err(LabError::Spec(format!("gridded mass {mass} deviates from 1")));
        }
        Ok(Measure1D::Gridded { grid, values })
    }

    /// Renormalizes the values to unit trapezoidal mass, then validates.
    pub fn gridded_normalized(grid: Vec<f64>, mut values: Vec<f64>) -> Result<Self> {
        let mass = trapezoid(&grid, &values);
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(LabError::Spec(format!("cannot normalize mass {mass}")));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Measure1D::gridded(grid, values)
    }

    /// Standard semicircle density sqrt(4-x^2)/(2 pi) on an edge-graded grid
    /// (x = -2 cos(theta), theta uniform), which resolves the square-root
    /// edges far better than a uniform grid of the same size.
    pub fn semicircle(n: usize) -> Self {
        let n = n.max(8);
        let grid: Vec<f64> = (0..n)
            .map(|j| -2.0 * (std::f64::consts::PI * j as f64 / (n - 1) as f64).cos())
            .collect();
        let values: Vec<f64> = grid
            .iter()
            .map(|&x| (4.0 - x * x).max(0.0).sqrt() / (2.0 * std::f64::consts::PI))
            .collect();
        Measure1D::gridded_normalized(grid, values).expect("semicircle grid is valid")
    }

    pub fn uniform(a: f64, b: f64, n: usize) -> Self {
        let n = n.max(2);
        let grid: Vec<f64> = (0..n).map(|j| a + (b - a) * j as f64 / (n - 1) as f64).collect();
        let values = vec![1.0 / (b - a); n];
        Measure1D::Gridded { grid, values }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Measure1D::Atomic { atoms, .. } => (atoms[0], *atoms.last().unwrap()),
            Measure1D::Gridded { grid, .. } => (grid[0], *grid.last().unwrap()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Measure1D::Atomic { atoms, weights } => {
                atoms.iter().zip(weights).map(|(a, w)| a * w).sum()
            }
            Measure1D::Gridded { grid, values } => grid
                .windows(2)
                .zip(values.windows(2))
                .map(|(g, v)| {
                    // exact first moment of the linear piece
                    let h = g[1] - g[0];
                    h * (g[0] * (2.0 * v[0] + v[1]) + g[1] * (v[0] + 2.0 * v[1])) / 6.0
                })
                .sum(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Measure1D::Atomic { atoms, weights } => {
                atoms.iter().zip(weights).map(|(a, w)| a * a * w).sum()
            }
            Measure1D::Gridded { grid, values } => grid
                .windows(2)
                .zip(values.windows(2))
                .map(|(g, v)| {
                    let (x0, x1) = (g[0], g[1]);
                    let h = x1 - x0;
                    let b = (v[1] - v[0]) / h;
                    let a = v[0] - b * x0;
                    // integral of (a + b x) x^2 over the cell
                    a * (x1.powi(3) - x0.powi(3)) / 3.0 + b * (x1.powi(4) - x0.powi(4)) / 4.0
                })
                .sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.second_moment() - m * m
    }

    /// CDF evaluated by exact integration of the piecewise-linear density
    /// (gridded) or by partial sums (atomic, right-continuous).
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Measure1D::Atomic { atoms, weights } => atoms
                .iter()
                .zip(weights)
                .take_while(|(a, _)| **a <= x)
                .map(|(_, w)| w)
                .sum(),
            Measure1D::Gridded { grid, values } => {
                if x <= grid[0] {
                    return 0.0;
                }
                if x >= *grid.last().unwrap() {
                    return 1.0;
                }
                let i = partition_point(grid, x);
                let mut c = 0.0;
                for j in 0..i {
                    c += 0.5 * (values[j] + values[j + 1]) * (grid[j + 1] - grid[j]);
                }
                let h = grid[i + 1] - grid[i];
                let t = x - grid[i];
                let vx = values[i] + (values[i + 1] - values[i]) * t / h;
                c + 0.5 * (values[i] + vx) * t
            }
        }
    }

    pub fn density_at(&self, x: f64) -> f64 {
        match self {
            Measure1D::Atomic { .. } => f64::NAN,
            Measure1D::Gridded { grid, values } => {
                if x < grid[0] || x > *grid.last().unwrap() {
                    return 0.0;
                }
                let i = partition_point(grid, x).min(grid.len() - 2);
                let h = grid[i + 1] - grid[i];
                values[i] + (values[i + 1] - values[i]) * (x - grid[i]) / h
            }
        }
    }
}

/// Index of the cell containing x: largest i with grid[i] <= x (clamped).
fn partition_point(grid: &[f64], x: f64) -> usize {
    let mut lo = 0usize;
    let mut hi = grid.len() - 1;
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if grid[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Exact integral of the piecewise-linear density against 1/(y - z).
///
/// For real z strictly inside the grid the principal value is returned; the
/// combined contribution of the two cells adjacent to a node z is used when z
/// sits exactly on a node (the one-sided logs cancel analytically).
fn pl_cauchy_integral(grid: &[f64], values: &[f64], z: Complex64) -> Result<Complex64> {
    let n = grid.len();
    let on_axis = z.im == 0.0;
    let e = z.re;

    // Exact node hit on the real axis needs the paired-cell formula.
    let node_hit = if on_axis {
        grid.iter().position(|&g| g == e)
    } else {
        None
    };
    if let Some(i) = node_hit {
        if (i == 0 || i == n - 1) && values[i] != 0.0 {
            return Err(LabError::SingularEvaluation(format!(
                "principal value at support endpoint {e} with positive density"
            )));
        }
    }

    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..n - 1 {
        let (x0, x1) = (grid[j], grid[j + 1]);
        let (v0, v1) = (values[j], values[j + 1]);
        let h = x1 - x0;
        let b = (v1 - v0) / h;

        if let Some(i) = node_hit {
            // Combined principal value over the node's two cells:
            // b_left h_left + b_right h_right + v(E) ln(h_right/h_left).
            if j + 1 == i {
                continue; // handled together with cell i
            }
            if j == i {
                let (xl, xr) = (grid[i - 1], grid[i + 1]);
                let bl = (values[i] - values[i - 1]) / (e - xl);
                let br = (values[i + 1] - values[i]) / (xr - e);
                acc += bl * (e - xl) + br * (xr - e) + values[i] * ((xr - e) / (e - xl)).ln();
                continue;
            }
        }

        if on_axis && x0 < e && e < x1 {
            // Principal value inside a single cell.
            let ve = v0 + b * (e - x0);
            acc += b * h + ve * ((x1 - e) / (e - x0)).ln();
        } else if on_axis {
            // Regular real cell.
            let ve = v0 + b * (e - x0);
            acc += b * h + ve * ((x1 - e) / (x0 - e)).abs().ln();
        } else {
            // Far from the kernel's singularity a two-point Gauss rule is
            // accurate to ~(h/d)^4/180 relative and far cheaper than the log.
            let mid = 0.5 * (x0 + x1);
            let dre = mid - z.re;
            let d2 = dre * dre + z.im * z.im;
            if d2 > 576.0 * h * h {
                let off = 0.5 * h / 3.0f64.sqrt();
                let vm = v0 + b * (mid - off - x0);
                let vp = v0 + b * (mid + off - x0);
                acc += 0.5 * h * (vm / (mid - off - z) + vp / (mid + off - z));
            } else {
                let vz = Complex64::new(v0, 0.0) + b * (z - x0);
                let l = ((x1 - z) / (x0 - z)).ln();
                acc += b * h + vz * l;
            }
        }
    }
    Ok(acc)
}

/// Stieltjes transform m(z) = integral d nu(v) / (v - z).
///
/// Requires Im z > 0, or Im z = 0 with z off the atoms (atomic) / inside or
/// outside the grid away from a positive-density endpoint (gridded, returns
/// the principal-value boundary function).
pub fn stieltjes_transform(mu: &Measure1D, z: Complex64) -> Result<Complex64> {
    if z.im < 0.0 {
        return Err(LabError::Spec("stieltjes_transform requires Im z >= 0".into()));
    }
    match mu {
        Measure1D::Atomic { atoms, weights } => {
            if z.im == 0.0 && atoms.iter().any(|&a| a == z.re) {
                return Err(LabError::SingularEvaluation(format!(
                    "z = {} coincides with an atom",
                    z.re
                )));
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for (&a, &w) in atoms.iter().zip(weights) {
                acc += w / (Complex64::new(a, 0.0) - z);
            }
            Ok(acc)
        }
        Measure1D::Gridded { grid, values } => pl_cauchy_integral(grid, values, z),
    }
}

/// Hilbert transform T nu(E): the principal-value integral of 1/(v - E).
pub fn hilbert_transform(mu: &Measure1D, e: f64) -> Result<f64> {
    let m = stieltjes_transform(mu, Complex64::new(e, 0.0))?;
    Ok(m.re)
}

/// d/dz of the Stieltjes transform: integral d nu(v) / (v - z)^2, exact per
/// cell for gridded measures. Requires Im z > 0.
pub fn stieltjes_derivative(mu: &Measure1D, z: Complex64) -> Result<Complex64> {
    if !(z.im > 0.0) {
        return Err(LabError::Spec("stieltjes_derivative requires Im z > 0".into()));
    }
    match mu {
        Measure1D::Atomic { atoms, weights } => {
            let mut acc = Complex64::new(0.0, 0.0);
            for (&a, &w) in atoms.iter().zip(weights) {
                let d = Complex64::new(a, 0.0) - z;
                acc += w / (d * d);
            }
            Ok(acc)
        }
        Measure1D::Gridded { grid, values } => {
            // per cell: integral (a + b y)/(y - z)^2 dy
            //         = b ln(y - z) - (a + b z)/(y - z)  evaluated at the ends
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..grid.len() - 1 {
                let (x0, x1) = (grid[j], grid[j + 1]);
                let (v0, v1) = (values[j], values[j + 1]);
                let h = x1 - x0;
                let b = (v1 - v0) / h;
                let mid = 0.5 * (x0 + x1);
                let dre = mid - z.re;
                let d2 = dre * dre + z.im * z.im;
                if d2 > 1024.0 * h * h {
                    let off = 0.5 * h / 3.0f64.sqrt();
                    let (ym, yp) = (mid - off, mid + off);
                    let (vm, vp) = (v0 + b * (ym - x0), v0 + b * (yp - x0));
                    let (dm, dp) = (ym - z, yp - z);
                    acc += 0.5 * h * (vm / (dm * dm) + vp / (dp * dp));
                } else {
                    let vz = Complex64::new(v0, 0.0) + b * (z - x0);
                    acc += b * ((x1 - z) / (x0 - z)).ln() - vz * (1.0 / (x1 - z) - 1.0 / (x0 - z));
                }
            }
            Ok(acc)
        }
    }
}

/// Poisson smoothing (P_eta * nu)(E) = Im m_nu(E + i eta) / pi on the given
/// grid, renormalized to unit mass. Errors if the grid truncates more than
/// 1e-6 of the smoothed mass.
pub fn poisson_smooth(mu: &Measure1D, eta: f64, grid: &[f64]) -> Result<Measure1D> {
    if !(eta > 0.0) {
        return Err(LabError::Spec("poisson_smooth requires eta > 0".into()));
    }
    let values: Vec<f64> = grid
        .iter()
        .map(|&e| {
            stieltjes_transform(mu, Complex64::new(e, eta))
                .map(|m| m.im / std::f64::consts::PI)
        })
        .collect::<Result<_>>()?;
    let mass = trapezoid(grid, &values);
    let deficit = 1.0 - mass;
    if deficit > 1e-6 {
        return Err(LabError::MassLoss { deficit, allowed: 1e-6 });
    }
    Measure1D::gridded_normalized(grid.to_vec(), values)
}

/// Stieltjes inversion: density = Im m / pi on the grid, renormalized.
/// `eta_used` is carried as metadata on the result.
pub fn stieltjes_invert(grid: &[f64], m_values: &[Complex64], eta_used: f64) -> Result<SmoothedDensity> {
    if grid.len() != m_values.len() {
        return Err(LabError::Spec("grid and m_values must have equal length".into()));
    }
    let mut values = Vec::with_capacity(m_values.len());
    for m in m_values {
        if m.im < -1e-12 {
            return Err(LabError::InvalidTransform(m.im));
        }
        values.push(m.im.max(0.0) / std::f64::consts::PI);
    }
    let measure = Measure1D::gridded_normalized(grid.to_vec(), values)?;
    Ok(SmoothedDensity { measure, eta: eta_used })
}

/// The smallest x with CDF(x) >= k/n, resolved by monotone bisection on the
/// integrated CDF (gridded) or exact partial sums (atomic). Plateau levels on
/// a support gap return the left endpoint with `gap` set.
pub fn quantile(mu: &Measure1D, n: usize, k: usize) -> Result<Quantile> {
    if k == 0 || k > n {
        return Err(LabError::Domain(format!("quantile index {k} outside 1..={n}")));
    }
    let level = k as f64 / n as f64;
    quantile_at_level(mu, level)
}

/// Same as `quantile` but for an arbitrary level in (0, 1].
pub fn quantile_at_level(mu: &Measure1D, level: f64) -> Result<Quantile> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(LabError::Domain(format!("level {level} outside (0,1]")));
    }
    match mu {
        Measure1D::Atomic { atoms, weights } => {
            let mut acc = 0.0;
            for (&a, &w) in atoms.iter().zip(weights) {
                acc += w;
                // tolerate accumulated rounding at the last atom
                if acc >= level - 1e-12 {
                    return Ok(Quantile { value: a, gap: false });
                }
            }
            Ok(Quantile { value: *atoms.last().unwrap(), gap: false })
        }
        Measure1D::Gridded { grid, .. } => {
            let (mut lo, mut hi) = (grid[0], *grid.last().unwrap());
            if mu.cdf(hi) < level - 1e-12 {
                return Ok(Quantile { value: hi, gap: false });
            }
            // smallest x with CDF(x) >= level, to CDF accuracy well below 1e-10
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mu.cdf(mid) >= level - 1e-13 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-15 * (1.0 + hi.abs()) {
                    break;
                }
            }
            // A plateau is a support gap: the CDF stays flat to the right of
            // the returned point while mass still remains further right.
            let h = (grid.last().unwrap() - grid[0]) / (grid.len() - 1) as f64;
            let c = mu.cdf(hi);
            let gap = mu.cdf(hi + 3.0 * h) - c < 1e-12 && c < 1.0 - 1e-12;
            Ok(Quantile { value: hi, gap })
        }
    }
}

/// Uniform grid from lo to hi with n points.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect()
}

/// Default evaluation grid: the support padded by 20% of its width on each
/// side, 4000 points unless the caller asks otherwise.
pub fn padded_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let w = (hi - lo).max(1e-6);
    linear_grid(lo - 0.2 * w, hi + 0.2 * w, n)
}

/// Grid adapted to Poisson smoothing at scale `eta`: a dense uniform core
/// covering the centers, then geometrically spaced tails out to `r_max`.
/// Geometric growth keeps the trapezoidal rule accurate on the 1/x^2 Cauchy
/// tails (cell ratio 1.01 gives ~5e-5 relative error per cell), while the
/// reach controls the truncated mass, roughly 2 eta_total / (pi r_max) per
/// unit of smoothed mass.
pub fn cauchy_adapted_grid(centers: &[f64], eta: f64, r_max: f64, core_step: f64) -> Vec<f64> {
    let lo = centers.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0 * eta;
    let hi = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0 * eta;
    let n_core = (((hi - lo) / core_step).ceil() as usize).max(2) + 1;
    let mut pts: Vec<f64> = (0..n_core)
        .map(|j| lo + (hi - lo) * j as f64 / (n_core - 1) as f64)
        .collect();
    let ratio = 1.01f64;
    let mut step = core_step.max(1e-12);
    let mut x = hi;
    while x < r_max {
        step *= ratio;
        x += step;
        pts.push(x);
    }
    step = core_step.max(1e-12);
    x = lo;
    while x > -r_max {
        step *= ratio;
        x -= step;
        pts.push(x);
    }
    pts.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    pts
}

/// Closed forms for the standard semicircle law, used as independent oracles
/// and by the auxiliary matched ensemble.
pub mod semicircle {
    use num_complex::Complex64;

    /// m_sc(z) = (-z + sqrt(z-2) sqrt(z+2)) / 2 on the upper half plane,
    /// continued to the real axis.
    pub fn m_sc(z: Complex64) -> Complex64 {
        let s = (z - 2.0).sqrt() * (z + 2.0).sqrt();
        (-z + s) / 2.0
    }

    pub fn density(x: f64) -> f64 {
        (4.0 - x * x).max(0.0).sqrt() / (2.0 * std::f64::consts::PI)
    }

    pub fn cdf(x: f64) -> f64 {
        if x <= -2.0 {
            return 0.0;
        }
        if x >= 2.0 {
            return 1.0;
        }
        let pi = std::f64::consts::PI;
        0.5 + x * (4.0 - x * x).sqrt() / (4.0 * pi) + (x / 2.0).asin() / pi
    }

    /// Inverse CDF by bisection on the closed form.
    pub fn quantile(p: f64) -> f64 {
        assert!(p > 0.0 && p <= 1.0);
        let (mut lo, mut hi) = (-2.0f64, 2.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Serialized form: {variant, points, weights_or_values}.
#[derive(Serialize, Deserialize)]
struct MeasureWire {
    variant: String,
    points: Vec<f64>,
    weights_or_values: Vec<f64>,
}

impl Serialize for Measure1D {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let wire = match self {
            Measure1D::Atomic { atoms, weights } => MeasureWire {
                variant: "atomic".into(),
                points: atoms.clone(),
                weights_or_values: weights.clone(),
            },
            Measure1D::Gridded { grid, values } => MeasureWire {
                variant: "gridded".into(),
                points: grid.clone(),
                weights_or_values: values.clone(),
            },
        };
        wire.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Measure1D {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = MeasureWire::deserialize(d)?;
        let built = match wire.variant.as_str() {
            "atomic" => Measure1D::atomic(wire.points, wire.weights_or_values),
            "gridded" => Measure1D::gridded(wire.points, wire.weights_or_values),
            other => Err(LabError::Spec(format!("unknown measure variant {other}"))),
        };
        built.map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn z(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn semicircle_transform_at_i() {
        // closed form: m_sc(i) = i (sqrt(5) - 1) / 2
        let sc = Measure1D::semicircle(4001);
        let m = stieltjes_transform(&sc, z(0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(m.re, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.im, (5.0f64.sqrt() - 1.0) / 2.0, epsilon = 1e-7);
    }

    #[test]
    fn single_atom_transform() {
        let mu = Measure1D::point_mass(0.0);
        let w = z(0.3, 0.7);
        let m = stieltjes_transform(&mu, w).unwrap();
        let expect = -1.0 / w;
        assert_abs_diff_eq!(m.re, expect.re, epsilon = 1e-15);
        assert_abs_diff_eq!(m.im, expect.im, epsilon = 1e-15);
    }

    #[test]
    fn two_atom_symmetry() {
        let mu = Measure1D::atomic(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let m = stieltjes_transform(&mu, z(0.0, 2.0)).unwrap();
        assert_abs_diff_eq!(m.re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.im, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn atom_hit_is_singular() {
        let mu = Measure1D::point_mass(1.0);
        assert!(matches!(
            stieltjes_transform(&mu, z(1.0, 0.0)),
            Err(LabError::SingularEvaluation(_))
        ));
    }

    #[test]
    fn poisson_smooth_of_point_mass_is_cauchy() {
        let mu = Measure1D::point_mass(0.0);
        let eta = 0.3;
        let grid = cauchy_adapted_grid(&[0.0], eta, 2e6, eta / 400.0);
        let sm = poisson_smooth(&mu, eta, &grid).unwrap();
        let pi = std::f64::consts::PI;
        for &e in &[0.0, 0.5, -1.3] {
            let expect = eta / (pi * (e * e + eta * eta));
            assert_abs_diff_eq!(sm.density_at(e), expect, epsilon = 1e-4);
        }
    }

    #[test]
    fn poisson_smooth_narrow_grid_reports_deficit() {
        let mu = Measure1D::point_mass(0.0);
        let grid = linear_grid(-1.0, 1.0, 101);
        match poisson_smooth(&mu, 0.5, &grid) {
            Err(LabError::MassLoss { deficit, .. }) => assert!(deficit > 0.1),
            other => panic!("expected mass-loss error, got {other:?}"),
        }
    }

    #[test]
    fn poisson_semigroup() {
        // smooth(smooth(nu, e1), e2) == smooth(nu, e1+e2) on the bulk grid
        let mu = Measure1D::atomic(vec![-1.0, 0.5], vec![0.5, 0.5]).unwrap();
        let grid = cauchy_adapted_grid(&[-1.0, 0.5], 0.2, 2e6, 0.2 / 300.0);
        let s1 = poisson_smooth(&mu, 0.2, &grid).unwrap();
        let s12 = poisson_smooth(&s1, 0.3, &grid).unwrap();
        let s3 = poisson_smooth(&mu, 0.5, &grid).unwrap();
        let bulk = linear_grid(-3.0, 3.0, 301);
        let sup = bulk
            .iter()
            .map(|&e| (s12.density_at(e) - s3.density_at(e)).abs())
            .fold(0.0f64, f64::max);
        assert!(sup <= 1e-6, "semigroup sup difference {sup}");
    }

    #[test]
    fn hilbert_semicircle_values() {
        let sc = Measure1D::semicircle(4001);
        // odd symmetry at the center
        assert_abs_diff_eq!(hilbert_transform(&sc, 0.0).unwrap(), 0.0, epsilon = 1e-10);
        // on the support: Re m_sc(E) = -E/2
        assert_abs_diff_eq!(hilbert_transform(&sc, 1.0).unwrap(), -0.5, epsilon = 2e-5);
        // off the support: (-3 + sqrt(5)) / 2
        let expect = (-3.0 + 5.0f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(hilbert_transform(&sc, 3.0).unwrap(), expect, epsilon = 1e-6);
    }

    #[test]
    fn quantiles_median_and_quarter() {
        let sc = Measure1D::semicircle(4001);
        let med = quantile(&sc, 2, 1).unwrap();
        assert_abs_diff_eq!(med.value, 0.0, epsilon = 1e-9);
        assert!(!med.gap);

        // independent oracle: bisect the closed-form CDF at level 1/4
        let expect = semicircle::quantile(0.25);
        let q = quantile(&sc, 4, 1).unwrap();
        assert_abs_diff_eq!(q.value, expect, epsilon = 2e-4);
    }

    #[test]
    fn quantiles_uniform() {
        let u = Measure1D::uniform(0.0, 1.0, 2001);
        for (k, expect) in [(1usize, 0.25), (2, 0.5), (3, 0.75), (4, 1.0)] {
            let q = quantile(&u, 4, k).unwrap();
            assert_abs_diff_eq!(q.value, expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn gap_quantile_returns_left_endpoint_with_flag() {
        // two bumps separated by a dead zone; level 1/2 lands in the gap
        let g = linear_grid(-2.0, 2.0, 4001);
        let vals: Vec<f64> = g
            .iter()
            .map(|&x| {
                if (-1.5..=-0.5).contains(&x) || (0.5..=1.5).contains(&x) {
                    0.5
                } else {
                    0.0
                }
            })
            .collect();
        let mu = Measure1D::gridded_normalized(g, vals).unwrap();
        let q = quantile(&mu, 2, 1).unwrap();
        assert!(q.gap, "expected the gap flag");
        assert_abs_diff_eq!(q.value, -0.5, epsilon = 2e-3);
    }

    #[test]
    fn invert_flat_transform() {
        let grid = linear_grid(-1.0, 1.0, 101);
        let m: Vec<Complex64> = grid.iter().map(|_| z(0.2, 1.0)).collect();
        let inv = stieltjes_invert(&grid, &m, 1e-3).unwrap();
        // flat density 1/pi before renormalization; flat after as well
        let d = inv.measure.density_at(0.3);
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-12);
        assert_eq!(inv.eta, 1e-3);
    }

    #[test]
    fn invert_rejects_negative_imag() {
        let grid = linear_grid(-1.0, 1.0, 11);
        let mut m: Vec<Complex64> = grid.iter().map(|_| z(0.0, 1.0)).collect();
        m[3] = z(0.0, -1e-6);
        assert!(matches!(
            stieltjes_invert(&grid, &m, 0.0),
            Err(LabError::InvalidTransform(_))
        ));
    }

    #[test]
    fn invert_self_consistency_on_semicircle() {
        // invert(m_sc sampled at eta = 1e-4) recovers the density to 5e-3
        let eta = 1e-4;
        let grid = linear_grid(-2.5, 2.5, 2001);
        let m: Vec<Complex64> = grid.iter().map(|&e| semicircle::m_sc(z(e, eta))).collect();
        let inv = stieltjes_invert(&grid, &m, eta).unwrap();
        let bulk = linear_grid(-1.9, 1.9, 401);
        let sup = bulk
            .iter()
            .map(|&e| (inv.measure.density_at(e) - semicircle::density(e)).abs())
            .fold(0.0f64, f64::max);
        assert!(sup <= 5e-3, "sup deviation {sup}");
    }

    #[test]
    fn invert_two_atoms_gives_cauchy_bumps() {
        let mu = Measure1D::atomic(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let eta = 0.05;
        let grid = linear_grid(-30.0, 30.0, 24001);
        let m: Vec<Complex64> = grid
            .iter()
            .map(|&e| stieltjes_transform(&mu, z(e, eta)).unwrap())
            .collect();
        let inv = stieltjes_invert(&grid, &m, eta).unwrap();
        let pi = std::f64::consts::PI;
        // half-width at half-maximum of each bump is eta
        let peak = inv.measure.density_at(1.0);
        let half = inv.measure.density_at(1.0 + eta);
        assert_abs_diff_eq!(peak, 0.5 / (pi * eta) + 0.5 * eta / (pi * (4.0 + eta * eta)), epsilon = 2e-2);
        assert!((half / peak - 0.5).abs() < 0.02);
    }

    #[test]
    fn transform_bound_and_positivity() {
        let mu = Measure1D::atomic(vec![-0.7, 0.1, 2.0], vec![0.3, 0.3, 0.4]).unwrap();
        for &(e, eta) in &[(0.0, 0.01), (1.0, 0.5), (-3.0, 2.0)] {
            let m = stieltjes_transform(&mu, z(e, eta)).unwrap();
            assert!(m.im > 0.0);
            assert!(m.norm() <= 1.0 / eta + 1e-12);
        }
    }

    #[test]
    fn measure_json_round_trip() {
        let mu = Measure1D::atomic(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let s = serde_json::to_string(&mu).unwrap();
        assert!(s.contains("\"variant\":\"atomic\""));
        let back: Measure1D = serde_json::from_str(&s).unwrap();
        assert_eq!(mu, back);
    }

    #[test]
    fn hilbert_matches_re_transform_at_small_eta() {
        // Richardson-style consistency at eta = 1e-2, 1e-3, 1e-4
        let sc = Measure1D::semicircle(4001);
        let e = 0.8;
        let t0 = hilbert_transform(&sc, e).unwrap();
        let mut errs = Vec::new();
        for &eta in &[1e-2, 1e-3, 1e-4] {
            let m = stieltjes_transform(&sc, z(e, eta)).unwrap();
            errs.push((m.re - t0).abs());
        }
        assert!(errs[0] < 2e-2 && errs[1] < 2e-3 && errs[2] < 2e-4, "errors {errs:?}");
    }
}
