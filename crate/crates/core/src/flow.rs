//! Semicircular flow: the Stieltjes fixed point for the evolved transform,
//! density recovery, the quantile ODE, mean drift, and the Burgers-equation
//! residual.
//!
//! For t > 0 the evolved transform m_t solves
//!
//!     m = integral d rho(y) / (e^{-t/2} y - z - (1 - e^{-t}) m),  Im m > 0,
//!
//! which we solve by damped fixed-point iteration with continuation in the
//! spectral scale eta; the physical branch is selected by starting high above
//! the real axis where the map is a contraction.

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::measures::{self, Measure1D, Quantile};

#[derive(Debug, Clone, Copy)]
pub struct FlowSolverConfig {
    /// Fixed-point residual target.
    pub tol: f64,
    pub max_iter: usize,
    /// Damping factor in (0, 1].
    pub damping: f64,
    /// eta* regularization scale added to Im z everywhere.
    pub eta_star: f64,
}

impl Default for FlowSolverConfig {
    fn default() -> Self {
        FlowSolverConfig { tol: 1e-12, max_iter: 600, damping: 0.5, eta_star: 0.0 }
    }
}

impl FlowSolverConfig {
    /// Default eta* tied to the support width of the initial measure.
    pub fn with_default_eta_star(mut self, rho0: &Measure1D) -> Self {
        let (lo, hi) = rho0.support();
        self.eta_star = 1e-6 * (hi - lo).max(1e-3);
        self
    }
}

/// Time-indexed quantiles gamma_{l(i)}(t) with the labeling offset and the
/// mean drift at the initial time.
#[derive(Debug, Clone)]
pub struct QuantilePath {
    pub indices: Vec<i64>,
    pub times: Vec<f64>,
    /// gamma[i][ti]: position of quantile `indices[i]` at `times[ti]`.
    pub gamma: Vec<Vec<f64>>,
    pub labeling_shift: i64,
    /// Mean drift (spectral units per unit time), zero unless set by the caller.
    pub upsilon_l: f64,
}

impl QuantilePath {
    pub fn at(&self, index_pos: usize, time_pos: usize) -> f64 {
        self.gamma[index_pos][time_pos]
    }

    /// Constant-in-time path from a fixed quantile vector.
    pub fn stationary(indices: Vec<i64>, times: Vec<f64>, values: &[f64]) -> Self {
        let gamma = values.iter().map(|&g| vec![g; times.len()]).collect();
        QuantilePath { indices, times, gamma, labeling_shift: 0, upsilon_l: 0.0 }
    }
}

fn sigma_t(t: f64) -> f64 {
    -(-t).exp_m1()
}

/// One evaluation of the fixed-point map G(m) for the evolved transform.
/// Written as e^{t/2} m_rho(e^{t/2} (z + sigma m)), so the base transform is
/// always evaluated strictly above the real axis while Im m > 0.
fn flow_map(rho0: &Measure1D, t: f64, z: Complex64, m: Complex64) -> Result<Complex64> {
    let s = sigma_t(t);
    let scale = (t / 2.0).exp();
    let w = scale * (z + s * m);
    Ok(scale * measures::stieltjes_transform(rho0, w)?)
}

/// d/dm of the fixed-point map, used for Newton refinement.
fn flow_map_derivative(rho0: &Measure1D, t: f64, z: Complex64, m: Complex64) -> Result<Complex64> {
    let s = sigma_t(t);
    let scale = (t / 2.0).exp();
    let w = scale * (z + s * m);
    Ok(scale * scale * s * measures::stieltjes_derivative(rho0, w)?)
}

/// Solve the fixed-point equation for m_t(z + i eta*). The physical branch is
/// reached by continuation from eta = 1 down to the target height.
pub fn solve_mt(rho0: &Measure1D, t: f64, z: Complex64, cfg: &FlowSolverConfig) -> Result<Complex64> {
    solve_mt_with_guess(rho0, t, z, cfg, None)
}

/// `solve_mt` with a warm start. Scanning callers (density on a grid,
/// quantile ODE stages) pass the previous solution, which usually cuts the
/// continuation ladder to a single refinement.
pub fn solve_mt_with_guess(
    rho0: &Measure1D,
    t: f64,
    z: Complex64,
    cfg: &FlowSolverConfig,
    guess: Option<Complex64>,
) -> Result<Complex64> {
    let z = z + Complex64::new(0.0, cfg.eta_star);
    if z.im < 0.0 || (z.im == 0.0 && t <= 0.0) {
        return Err(LabError::Spec("solve_mt requires Im z + eta* > 0 (or t > 0)".into()));
    }
    if t <= 0.0 {
        return measures::stieltjes_transform(rho0, z);
    }

    if let Some(g) = guess {
        if g.im > 0.0 {
            if let Ok(m) = refine(rho0, t, z, g, cfg, cfg.tol) {
                return Ok(m);
            }
        }
    }

    // Continuation ladder: eta = 1 down to the target, halving each rung.
    // Intermediate rungs only warm-start the next one, so a loose tolerance
    // suffices there; the target height is solved to full tolerance.
    let mut ladder = vec![z.im.max(1.0)];
    while *ladder.last().unwrap() > z.im * 1.5 + 1e-30 {
        let next = ladder.last().unwrap() * 0.5;
        if next <= z.im {
            break;
        }
        ladder.push(next);
    }
    let rung_tol = cfg.tol.max(1e-9);

    let z_top = Complex64::new(z.re, ladder[0]);
    let mut m = measures::stieltjes_transform(rho0, z_top)?;
    for &eta in &ladder {
        m = refine(rho0, t, Complex64::new(z.re, eta), m, cfg, rung_tol)?;
    }
    refine(rho0, t, z, m, cfg, cfg.tol)
}

/// Damped fixed-point iteration with Newton refinement at a fixed z.
///
/// Picard steps walk the iterate into the basin; once there, Newton on
/// f(m) = m - G(m) finishes in a few steps even near the spectral edges,
/// where the plain iteration slows to a crawl (|G'| -> 1).
fn refine(
    rho0: &Measure1D,
    t: f64,
    z: Complex64,
    m0: Complex64,
    cfg: &FlowSolverConfig,
    tol: f64,
) -> Result<Complex64> {
    let mut m = m0;
    let mut d = cfg.damping;
    let mut last_res = f64::INFINITY;
    let mut best_res = f64::INFINITY;
    let mut stagnant = 0u32;
    let mut rises = 0u32;
    for it in 0..cfg.max_iter {
        let g = flow_map(rho0, t, z, m)?;
        let res = (g - m).norm();
        // relative floor: at |m| >> 1 (near-atomic evaluations) the residual
        // cannot beat the cancellation level of the map itself
        if res <= tol * m.norm().max(1.0) {
            return Ok(g);
        }
        // stagnation at the map's floating-point noise floor still counts as
        // converged when the relative residual is already tiny
        if res >= 0.9 * best_res && res <= 1e-6 * m.norm().max(1.0) {
            stagnant += 1;
            if stagnant >= 8 {
                return Ok(g);
            }
        } else {
            stagnant = 0;
        }
        best_res = best_res.min(res);
        if res > last_res {
            rises += 1;
            if rises >= 2 {
                d = 0.1;
            }
        } else {
            rises = 0;
        }
        last_res = res;

        let mut next = (1.0 - d) * m + d * g;
        if it >= 3 {
            if let Ok(gp) = flow_map_derivative(rho0, t, z, m) {
                let denom = Complex64::new(1.0, 0.0) - gp;
                if denom.norm() > 1e-8 {
                    let newton = m + (g - m) / denom;
                    // accept the Newton step only if it actually contracts
                    if let Ok(gn) = flow_map(rho0, t, z, newton) {
                        if newton.im >= -1e-12 && (gn - newton).norm() < 0.5 * res {
                            next = newton;
                            if (gn - newton).norm() <= tol * newton.norm().max(1.0) {
                                return Ok(gn);
                            }
                        }
                    }
                }
            }
        }
        m = next;
        if m.im < -1e-12 {
            return Err(LabError::BranchLoss { re: z.re, im: z.im, im_m: m.im });
        }
        if m.im < 0.0 {
            m = Complex64::new(m.re, 0.0);
        }
    }
    Err(LabError::NonConvergence { re: z.re, im: z.im, t, residual: last_res })
}

/// Density of F_t[rho0] on the grid: Im m_t(E + i eta_eff) / pi with
/// eta_eff = max(eta*, tiny floor), renormalized to unit trapezoidal mass.
/// Returns the raw (pre-normalization) mass alongside; on an adequate grid
/// it is 1 within ~1e-6, and a deviation beyond 1e-3 means the grid misses
/// the evolved support and is rejected.
pub fn flow_density_with_mass(
    rho0: &Measure1D,
    t: f64,
    grid: &[f64],
    cfg: &FlowSolverConfig,
) -> Result<(Measure1D, f64)> {
    if !(t > 0.0) {
        return Err(LabError::Spec("flow_density requires t > 0".into()));
    }
    let eta_floor = if cfg.eta_star > 0.0 { 0.0 } else { 1e-12 };
    let mut values = Vec::with_capacity(grid.len());
    let mut guess = None;
    for &e in grid {
        let m = solve_mt_with_guess(rho0, t, Complex64::new(e, eta_floor), cfg, guess)?;
        guess = Some(m);
        values.push((m.im / std::f64::consts::PI).max(0.0));
    }
    let mass = measures::trapezoid(grid, &values);
    if (mass - 1.0).abs() > 1e-3 {
        return Err(LabError::MassLoss { deficit: 1.0 - mass, allowed: 1e-3 });
    }
    Ok((Measure1D::gridded_normalized(grid.to_vec(), values)?, mass))
}

pub fn flow_density(rho0: &Measure1D, t: f64, grid: &[f64], cfg: &FlowSolverConfig) -> Result<Measure1D> {
    flow_density_with_mass(rho0, t, grid, cfg).map(|(m, _)| m)
}

/// Mean drift upsilon_L = d/dt gamma_L = -T rho(gamma_L) - gamma_L / 2.
pub fn mean_drift(rho_t1: &Measure1D, gamma_l: f64) -> Result<f64> {
    match rho_t1 {
        Measure1D::Atomic { .. } => {
            return Err(LabError::SingularEvaluation(
                "mean drift needs a density; atomic input has none".into(),
            ))
        }
        Measure1D::Gridded { .. } => {
            if rho_t1.density_at(gamma_l) <= 0.0 {
                return Err(LabError::SingularEvaluation(format!(
                    "gamma_L = {gamma_l} is outside the support"
                )));
            }
        }
    }
    Ok(-measures::hilbert_transform(rho_t1, gamma_l)? - gamma_l / 2.0)
}

/// Options for the quantile ODE integrator.
#[derive(Debug, Clone, Copy)]
pub struct QuantileFlowOptions {
    /// Integration halts when the regularized density drops below this.
    pub density_floor: f64,
    /// Local error proxy accepted per step.
    pub step_tol: f64,
    /// Largest internal step.
    pub max_step: f64,
    /// Optional hybrid correction: every k accepted steps, re-anchor each
    /// quantile by direct CDF inversion of the evolved density.
    pub resync_every: Option<usize>,
    /// Atomic initial data makes the drift blow up like 1/sqrt(t); below
    /// this time the path is anchored by direct CDF inversion instead of
    /// integrated.
    pub stiff_start: f64,
}

impl Default for QuantileFlowOptions {
    fn default() -> Self {
        QuantileFlowOptions {
            density_floor: 1e-3,
            step_tol: 1e-7,
            max_step: 5e-3,
            resync_every: None,
            stiff_start: 2e-3,
        }
    }
}

/// Drift of a quantile of the eta*-regularized evolved density:
/// -T rho_t(g) - g/2 - (eta*/2) T rho_t(g) / rho_t(g), evaluated through
/// m_t(g + i eta*).
fn quantile_drift(
    rho0: &Measure1D,
    t: f64,
    g: f64,
    cfg: &FlowSolverConfig,
    guess: Option<Complex64>,
    floor: f64,
) -> Result<(f64, Complex64, f64)> {
    let m = solve_mt_with_guess(rho0, t, Complex64::new(g, 0.0), cfg, guess)?;
    let rho = m.im / std::f64::consts::PI;
    let hil = m.re;
    if rho < floor {
        return Err(LabError::DensityFloor { rho, floor, index: 0, t });
    }
    let drift = -hil - g / 2.0 - 0.5 * cfg.eta_star * hil / rho;
    Ok((drift, m, rho))
}

/// Integrate the quantile ODE for the selected indices over `t_grid`.
///
/// `t_grid[0]` may be zero: the eta*-regularized density exists for all
/// times, so the initial quantiles are read from the smoothed initial
/// measure. Requires cfg.eta_star > 0.
pub fn quantile_flow(
    rho0: &Measure1D,
    n: usize,
    indices: &[i64],
    t_grid: &[f64],
    cfg: &FlowSolverConfig,
    opts: &QuantileFlowOptions,
) -> Result<QuantilePath> {
    if cfg.eta_star <= 0.0 {
        return Err(LabError::Spec("quantile_flow requires eta_star > 0".into()));
    }
    if t_grid.len() < 2 || !t_grid.windows(2).all(|w| w[1] > w[0]) {
        return Err(LabError::Spec("t_grid must be strictly increasing, len >= 2".into()));
    }

    // Initial quantiles of the eta*-smoothed initial measure. Atomic input
    // needs a grid with dense cores around the atoms to resolve the Cauchy
    // bumps of width eta*; for gridded input the smoothing shift is far
    // below the grid scale and the direct quantiles serve.
    let smoothed = match rho0 {
        Measure1D::Atomic { atoms, .. } => {
            let grid = measures::cauchy_adapted_grid(atoms, cfg.eta_star, 4e6 * cfg.eta_star, cfg.eta_star / 40.0);
            Some(measures::poisson_smooth(rho0, cfg.eta_star, &grid)?)
        }
        Measure1D::Gridded { .. } => None,
    };
    let initial = smoothed.as_ref().unwrap_or(rho0);

    let mut gamma: Vec<Vec<f64>> = Vec::with_capacity(indices.len());
    for &k in indices {
        if k < 1 || k as usize > n {
            return Err(LabError::Domain(format!("index {k} outside 1..={n}")));
        }
        let q = measures::quantile(initial, n, k as usize)?;
        gamma.push(vec![q.value]);
    }

    // burn-in threshold below which atomic starts are anchored directly
    let burn = if matches!(rho0, Measure1D::Atomic { .. }) { opts.stiff_start } else { 0.0 };

    let mut steps_accepted = 0usize;
    for w in t_grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        for (ii, &k) in indices.iter().enumerate() {
            if t1 <= burn {
                let g = direct_quantile(rho0, t1, n, k as usize, cfg)?;
                gamma[ii].push(g);
                continue;
            }
            let mut g = *gamma[ii].last().unwrap();
            let mut t = t0;
            if t0 < burn {
                g = direct_quantile(rho0, burn, n, k as usize, cfg)?;
                t = burn;
            }
            let mut h = (t1 - t0).min(opts.max_step);
            let mut guess: Option<Complex64> = None;
            let h_min = 1e-9 * (t1 - t0).max(1e-6);
            while t < t1 - 1e-15 {
                h = h.min(t1 - t);
                let (k1, m1, _) =
                    quantile_drift(rho0, t.max(1e-12), g, cfg, guess, opts.density_floor)
                        .map_err(|e| tag_index(e, k))?;
                // The midpoint stage can overshoot into a density hole while
                // the step is too long (stiff early times of atomic starts);
                // halve and retry rather than give up.
                let mid = quantile_drift(
                    rho0,
                    (t + 0.5 * h).max(1e-12),
                    g + 0.5 * h * k1,
                    cfg,
                    Some(m1),
                    opts.density_floor,
                );
                let k2 = match mid {
                    Ok((k2, _, _)) => k2,
                    Err(LabError::DensityFloor { .. }) if h > h_min => {
                        h *= 0.5;
                        continue;
                    }
                    Err(e) => return Err(tag_index(e, k)),
                };
                // step control on the change of the drift across the step
                if (k2 - k1).abs() * h > opts.step_tol && h > h_min {
                    h *= 0.5;
                    continue;
                }
                g += h * k2;
                t += h;
                guess = Some(m1);
                steps_accepted += 1;
                if (k2 - k1).abs() * h < 0.1 * opts.step_tol {
                    h = (1.5 * h).min(opts.max_step);
                }
                if let Some(every) = opts.resync_every {
                    if steps_accepted % every == 0 {
                        g = direct_quantile(rho0, t, n, k as usize, cfg)?;
                    }
                }
            }
            gamma[ii].push(g);
        }
    }

    Ok(QuantilePath {
        indices: indices.to_vec(),
        times: t_grid.to_vec(),
        gamma,
        labeling_shift: 0,
        upsilon_l: 0.0,
    })
}

fn tag_index(e: LabError, k: i64) -> LabError {
    match e {
        LabError::DensityFloor { rho, floor, t, .. } => LabError::DensityFloor { rho, floor, index: k, t },
        other => other,
    }
}

/// Direct quantile of the evolved eta*-regularized density by CDF inversion,
/// the cross-validation route for the ODE path.
pub fn direct_quantile(rho0: &Measure1D, t: f64, n: usize, k: usize, cfg: &FlowSolverConfig) -> Result<f64> {
    let (lo, hi) = rho0.support();
    let width = (hi - lo).max(1.0);
    let grid = measures::linear_grid(lo - 0.6 * width, hi + 0.6 * width, 4000);
    let dens = flow_density(rho0, t.max(1e-9), &grid, cfg)?;
    Ok(measures::quantile(&dens, n, k)?.value)
}

/// Max over the z-grid of |d_t m - 1/2 d_z (m (m + z))|, both derivatives by
/// central differences (time at +-dt/2 so t=0 is never evaluated).
pub fn burgers_residual(
    rho0: &Measure1D,
    t: f64,
    dt: f64,
    z_grid: &[Complex64],
    cfg: &FlowSolverConfig,
) -> Result<f64> {
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(LabError::Spec("burgers_residual needs 0 < dt <= 1e-3".into()));
    }
    if z_grid.len() < 3 {
        return Err(LabError::Spec("z_grid needs at least 3 points".into()));
    }
    let dz = z_grid[1] - z_grid[0];
    for w in z_grid.windows(2) {
        if ((w[1] - w[0]) - dz).norm() > 1e-9 * dz.norm() {
            return Err(LabError::Spec("z_grid must be uniformly spaced".into()));
        }
    }

    let mut m_now = Vec::with_capacity(z_grid.len());
    let mut m_lo = Vec::with_capacity(z_grid.len());
    let mut m_hi = Vec::with_capacity(z_grid.len());
    let mut guess = None;
    for &z in z_grid {
        let m = solve_mt_with_guess(rho0, t, z, cfg, guess)?;
        guess = Some(m);
        m_now.push(m);
        m_lo.push(solve_mt_with_guess(rho0, t - 0.5 * dt, z, cfg, Some(m))?);
        m_hi.push(solve_mt_with_guess(rho0, t + 0.5 * dt, z, cfg, Some(m))?);
    }

    let mut worst = 0.0f64;
    for j in 1..z_grid.len() - 1 {
        let dm_dt = (m_hi[j] - m_lo[j]) / dt;
        let f = |i: usize| m_now[i] * (m_now[i] + z_grid[i]);
        let df_dz = (f(j + 1) - f(j - 1)) / (2.0 * dz);
        worst = worst.max((dm_dt - 0.5 * df_dz).norm());
    }
    Ok(worst)
}

/// Density bounds over a space-time window, for comparison against
/// regularity-assumption style thresholds.
#[derive(Debug, Clone)]
pub struct DensityRegularityReport {
    pub rho_min: f64,
    pub rho_max: f64,
    pub max_abs_slope: f64,
    /// Set when the density dropped below the solver floor somewhere.
    pub sub_floor: bool,
}

pub fn density_regularity_check(
    rho0: &Measure1D,
    t_range: &[f64],
    e_range: (f64, f64),
    n_e: usize,
    floor: f64,
    cfg: &FlowSolverConfig,
) -> Result<DensityRegularityReport> {
    let grid = measures::linear_grid(e_range.0, e_range.1, n_e.max(8));
    let h = grid[1] - grid[0];
    let mut rho_min = f64::INFINITY;
    let mut rho_max = f64::NEG_INFINITY;
    let mut max_slope = 0.0f64;
    for &t in t_range {
        let mut rho = Vec::with_capacity(grid.len());
        let mut guess = None;
        for &e in &grid {
            let m = solve_mt_with_guess(rho0, t.max(1e-9), Complex64::new(e, 0.0), cfg, guess)?;
            guess = Some(m);
            rho.push(m.im / std::f64::consts::PI);
        }
        for &r in &rho {
            rho_min = rho_min.min(r);
            rho_max = rho_max.max(r);
        }
        for j in 1..rho.len() - 1 {
            max_slope = max_slope.max(((rho[j + 1] - rho[j - 1]) / (2.0 * h)).abs());
        }
    }
    Ok(DensityRegularityReport { rho_min, rho_max, max_abs_slope: max_slope, sub_floor: rho_min < floor })
}

/// Quantile of the evolved density or of the initial measure at t = 0;
/// convenience used by diagnostics.
pub fn quantile_of_flow(rho0: &Measure1D, t: f64, n: usize, k: usize, cfg: &FlowSolverConfig) -> Result<Quantile> {
    if t <= 0.0 {
        return measures::quantile(rho0, n, k);
    }
    let g = direct_quantile(rho0, t, n, k, cfg)?;
    Ok(Quantile { value: g, gap: false })
}
