//! Dyson Brownian motion and its localized, coupled, shifted and
//! epsilon-regularized variants, the coupling coefficients of the difference
//! dynamics, and the explicit linear parabolic evolution.
//!
//! All integrators are explicit Euler-Maruyama. When a step breaks the
//! ordering it is retried on two half steps whose Brownian increments come
//! from a bridge refinement of the original increment, so the per-step noise
//! totals are preserved; this is what lets two dynamics driven by the same
//! stream stay coupled path by path.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{LabError, Result};
use crate::rng::{stream, stream_rng};

pub const MAX_HALVINGS: u32 = 20;

/// Strictly ordered particle positions with their (global) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfiguration {
    pub positions: Vec<f64>,
    pub labels: Vec<i64>,
}

impl ParticleConfiguration {
    pub fn new(positions: Vec<f64>, labels: Vec<i64>) -> Result<Self> {
        if positions.len() != labels.len() || positions.is_empty() {
            return Err(LabError::Spec("positions and labels must match and be nonempty".into()));
        }
        if !positions.iter().all(|x| x.is_finite()) {
            return Err(LabError::Spec("positions must be finite".into()));
        }
        if !positions.windows(2).all(|w| w[0] < w[1]) {
            return Err(LabError::Spec("positions must be strictly increasing".into()));
        }
        Ok(ParticleConfiguration { positions, labels })
    }

    pub fn from_positions(positions: Vec<f64>) -> Result<Self> {
        let labels = (0..positions.len() as i64).collect();
        ParticleConfiguration::new(positions, labels)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn min_gap(&self) -> f64 {
        self.positions
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// A time-indexed path of configurations plus the scheme metadata needed to
/// reproduce it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// positions[frame][particle]
    pub positions: Vec<Vec<f64>>,
    pub labels: Vec<i64>,
    /// Full-system particle count (sets the 1/N interaction scale).
    pub n_total: usize,
    pub beta: f64,
    pub dt: f64,
    pub seed: u64,
    pub replica: u64,
    pub scheme: String,
    /// Containment reflections that occurred during a localized run.
    pub containment_events: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, frame: usize) -> ParticleConfiguration {
        ParticleConfiguration {
            positions: self.positions[frame].clone(),
            labels: self.labels.clone(),
        }
    }

    /// Index of the frame closest to t.
    pub fn frame_at(&self, t: f64) -> usize {
        let mut best = 0;
        let mut err = f64::INFINITY;
        for (i, &s) in self.times.iter().enumerate() {
            let d = (s - t).abs();
            if d < err {
                err = d;
                best = i;
            }
        }
        best
    }
}

/// Integration options shared by the SDE runners.
#[derive(Debug, Clone, Copy)]
pub struct SdeOptions {
    pub dt: f64,
    /// Record every `stride`-th step (the initial state is always recorded).
    pub stride: usize,
    pub seed: u64,
    pub replica: u64,
}

/// Default step: resolves both the 1/N drift scale and the stiffest pairwise
/// repulsion of the initial configuration.
pub fn default_dt(n_total: usize, min_gap: f64) -> f64 {
    (0.1 / n_total as f64).min(0.01 * min_gap * min_gap * n_total as f64)
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// One ordered Euler-Maruyama step with bridge-split retries.
///
/// `increments` are Brownian increments over the full step (variance dt per
/// entry); `drift` receives (positions, t) and writes into its output slice.
/// On an ordering violation the step is re-done on two halves, with the
/// half-step increments drawn by conditioning on the full-step one.
fn ordered_em_step<F>(
    x: &mut Vec<f64>,
    t: f64,
    dt: f64,
    noise_coef: f64,
    increments: &[f64],
    drift: &mut F,
    bridge: &mut ChaCha8Rng,
    depth: u32,
) -> Result<()>
where
    F: FnMut(&[f64], f64, &mut [f64]),
{
    let n = x.len();
    let mut d = vec![0.0; n];
    drift(x, t, &mut d);
    let mut trial = Vec::with_capacity(n);
    for i in 0..n {
        trial.push(x[i] + d[i] * dt + noise_coef * increments[i]);
    }
    let ordered = trial.iter().all(|v| v.is_finite())
        && (n == 1 || trial.windows(2).all(|w| w[0] < w[1]));
    if ordered {
        *x = trial;
        return Ok(());
    }
    if depth >= MAX_HALVINGS {
        let j = trial.windows(2).position(|w| w[0] >= w[1]).unwrap_or(0);
        return Err(LabError::Collision { i: j, j: j + 1, t, halvings: depth });
    }
    // Brownian bridge: conditioned on the full increment W over dt, the
    // first half is W/2 + sqrt(dt)/2 * xi with fresh xi.
    let half = 0.5 * dt;
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for &w in increments {
        let xi: f64 = bridge.sample(StandardNormal);
        let w1 = 0.5 * w + 0.5 * dt.sqrt() * xi;
        first.push(w1);
        second.push(w - w1);
    }
    ordered_em_step(x, t, half, noise_coef, &first, drift, bridge, depth + 1)?;
    ordered_em_step(x, t + half, half, noise_coef, &second, drift, bridge, depth + 1)
}

/// Ordered EM step with bridge retries for external drift fields (used by
/// the local Gibbs sampler, which shares the ordering/coupling contract).
pub fn em_step_public<F>(
    x: &mut Vec<f64>,
    t: f64,
    dt: f64,
    noise_coef: f64,
    increments: &[f64],
    drift: &mut F,
    bridge: &mut ChaCha8Rng,
) -> Result<()>
where
    F: FnMut(&[f64], f64, &mut [f64]),
{
    ordered_em_step(x, t, dt, noise_coef, increments, drift, bridge, 0)
}

/// Pairwise DBM drift: (1/N) sum_{j != i} 1/(x_i - x_j) - x_i / 2.
fn dbm_drift(x: &[f64], n_total: usize, out: &mut [f64]) {
    let inv_n = 1.0 / n_total as f64;
    out.iter_mut().for_each(|d| *d = 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let inv = inv_n / (x[i] - x[j]);
            out[i] += inv;
            out[j] -= inv;
        }
    }
    for (d, &xi) in out.iter_mut().zip(x) {
        *d -= xi / 2.0;
    }
}

/// Single public DBM step from an ordered state. `noise` holds i.i.d.
/// standard normals (scaled by sqrt(dt) internally); `bridge` supplies the
/// refinement noise for collision retries.
pub fn step_dbm(
    state: &ParticleConfiguration,
    n_total: usize,
    beta: f64,
    t: f64,
    dt: f64,
    noise: &[f64],
    bridge: &mut ChaCha8Rng,
) -> Result<ParticleConfiguration> {
    if noise.len() != state.len() {
        return Err(LabError::Spec("noise length must match particle count".into()));
    }
    if !(dt > 0.0) {
        return Err(LabError::Spec("dt must be positive".into()));
    }
    let mut x = state.positions.clone();
    let coef = (2.0 / (beta * n_total as f64)).sqrt();
    let increments: Vec<f64> = noise.iter().map(|&z| z * dt.sqrt()).collect();
    let mut drift = |xs: &[f64], _t: f64, out: &mut [f64]| dbm_drift(xs, n_total, out);
    ordered_em_step(&mut x, t, dt, coef, &increments, &mut drift, bridge, 0)?;
    ParticleConfiguration::new(x, state.labels.clone())
}

/// Integrate the full DBM over `t_span`, recording every `stride`-th step.
pub fn run_dbm(
    init: &ParticleConfiguration,
    beta: f64,
    t_span: (f64, f64),
    opts: &SdeOptions,
) -> Result<Trajectory> {
    let n_total = init.len();
    let mut noise_rng = stream_rng(opts.seed, opts.replica, stream::DBM_NOISE);
    let mut bridge = stream_rng(opts.seed, opts.replica, stream::BRIDGE);
    let n_steps = ((t_span.1 - t_span.0) / opts.dt).round() as usize;

    let mut x = init.positions.clone();
    let coef = (2.0 / (beta * n_total as f64)).sqrt();
    let mut times = vec![t_span.0];
    let mut frames = vec![x.clone()];
    let mut drift = |xs: &[f64], _t: f64, out: &mut [f64]| dbm_drift(xs, n_total, out);

    for k in 0..n_steps {
        let t = t_span.0 + k as f64 * opts.dt;
        let normals = gaussian_vector(&mut noise_rng, n_total);
        let increments: Vec<f64> = normals.iter().map(|&z| z * opts.dt.sqrt()).collect();
        ordered_em_step(&mut x, t, opts.dt, coef, &increments, &mut drift, &mut bridge, 0)?;
        if (k + 1) % opts.stride == 0 || k + 1 == n_steps {
            times.push(t_span.0 + (k + 1) as f64 * opts.dt);
            frames.push(x.clone());
        }
    }

    Ok(Trajectory {
        times,
        positions: frames,
        labels: init.labels.clone(),
        n_total,
        beta,
        dt: opts.dt,
        seed: opts.seed,
        replica: opts.replica,
        scheme: "euler-maruyama/bridge-retry".into(),
        containment_events: 0,
    })
}

/// Window geometry for the localized runs: global indices I = [l-k, l+k]
/// inside 0..n_total, with the regularization restricted to
/// I_sigma = [l - sigma_half, l + sigma_half].
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub l: usize,
    pub k: usize,
    pub n_total: usize,
    pub sigma_half: usize,
}

impl Window {
    pub fn lo(&self) -> usize {
        self.l - self.k
    }

    pub fn hi(&self) -> usize {
        self.l + self.k
    }

    pub fn size(&self) -> usize {
        2 * self.k + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < self.k + 1 || self.l + self.k + 1 >= self.n_total {
            return Err(LabError::Spec(format!(
                "window around {} of half-width {} does not fit inside 0..{} with boundary points",
                self.l, self.k, self.n_total
            )));
        }
        Ok(())
    }

    pub fn exterior_len(&self) -> usize {
        self.n_total - self.size()
    }

    /// Global index of exterior slot `j` (exterior vectors keep the global
    /// order and skip the window).
    pub fn exterior_global(&self, j: usize) -> usize {
        if j < self.lo() {
            j
        } else {
            j + self.size()
        }
    }

    /// Exterior slot holding the left boundary point y_{l-k-1}.
    pub fn left_boundary_slot(&self) -> usize {
        self.lo() - 1
    }

    /// Exterior slot holding the right boundary point y_{l+k+1}.
    pub fn right_boundary_slot(&self) -> usize {
        self.lo()
    }

    pub fn in_sigma(&self, global: i64) -> bool {
        (global - self.l as i64).unsigned_abs() as usize <= self.sigma_half
    }
}

/// Split a full configuration into window and exterior parts.
pub fn split_configuration(full: &[f64], w: &Window) -> (Vec<f64>, Vec<f64>) {
    let interior = full[w.lo()..=w.hi()].to_vec();
    let mut exterior = Vec::with_capacity(w.exterior_len());
    exterior.extend_from_slice(&full[..w.lo()]);
    exterior.extend_from_slice(&full[w.hi() + 1..]);
    (interior, exterior)
}

/// Window sub-trajectory of a full run.
pub fn window_trajectory(full: &Trajectory, w: &Window) -> Trajectory {
    let positions: Vec<Vec<f64>> = full.positions.iter().map(|p| p[w.lo()..=w.hi()].to_vec()).collect();
    Trajectory {
        times: full.times.clone(),
        positions,
        labels: (w.lo() as i64..=w.hi() as i64).collect(),
        n_total: full.n_total,
        beta: full.beta,
        dt: full.dt,
        seed: full.seed,
        replica: full.replica,
        scheme: format!("{}/window", full.scheme),
        containment_events: 0,
    }
}

/// Exterior sub-trajectory of a full run.
pub fn exterior_trajectory(full: &Trajectory, w: &Window) -> Trajectory {
    let positions: Vec<Vec<f64>> = full
        .positions
        .iter()
        .map(|p| {
            let mut e = Vec::with_capacity(w.exterior_len());
            e.extend_from_slice(&p[..w.lo()]);
            e.extend_from_slice(&p[w.hi() + 1..]);
            e
        })
        .collect();
    let labels: Vec<i64> = (0..full.n_total as i64)
        .filter(|&i| (i as usize) < w.lo() || (i as usize) > w.hi())
        .collect();
    Trajectory {
        times: full.times.clone(),
        positions,
        labels,
        n_total: full.n_total,
        beta: full.beta,
        dt: full.dt,
        seed: full.seed,
        replica: full.replica,
        scheme: format!("{}/exterior", full.scheme),
        containment_events: 0,
    }
}

/// How a localized run couples to the outside.
enum ExteriorSource<'a> {
    /// Frame-indexed path; must share dt and cover the step count.
    Path(&'a Trajectory),
    /// Time-independent reference points.
    Fixed(&'a [f64]),
}

struct LocalizedSpec<'a> {
    window: Window,
    exterior: ExteriorSource<'a>,
    upsilon_l: f64,
    t1: f64,
    /// true: confinement -(x + upsilon_L (t - T1))/2 (localized run);
    /// false: confinement -x/2 (reference dynamics).
    drift_ramp: bool,
    beta: f64,
}

/// Shared integrator for the localized variants. The noise layout matches a
/// full-system run: every step draws n_total normals and the window uses its
/// own slice, so a window run coupled to a full run consumes identical
/// per-(i, step) increments.
fn run_window_sde(
    x_init: &[f64],
    spec: &LocalizedSpec<'_>,
    t_span: (f64, f64),
    opts: &SdeOptions,
    bridge_stream: u64,
) -> Result<Trajectory> {
    let w = spec.window;
    w.validate()?;
    let kk = w.size();
    if x_init.len() != kk {
        return Err(LabError::Spec(format!("expected {} interior particles, got {}", kk, x_init.len())));
    }
    let n_steps = ((t_span.1 - t_span.0) / opts.dt).round() as usize;
    if let ExteriorSource::Path(p) = &spec.exterior {
        if p.len() < n_steps + 1 {
            return Err(LabError::Spec(format!(
                "exterior path has {} frames, need {}",
                p.len(),
                n_steps + 1
            )));
        }
        if (p.dt - opts.dt).abs() > 1e-12 {
            return Err(LabError::Spec("exterior path stride must match the run dt".into()));
        }
    }

    let n_total = w.n_total;
    let inv_n = 1.0 / n_total as f64;
    let coef = (2.0 / (spec.beta * n_total as f64)).sqrt();
    let mut noise_rng = stream_rng(opts.seed, opts.replica, stream::DBM_NOISE);
    let mut bridge = stream_rng(opts.seed, opts.replica, bridge_stream);

    let mut x = x_init.to_vec();
    let mut times = vec![t_span.0];
    let mut frames = vec![x.clone()];
    let mut containment_events = 0usize;

    for step in 0..n_steps {
        let t = t_span.0 + step as f64 * opts.dt;
        let exterior: &[f64] = match &spec.exterior {
            ExteriorSource::Path(p) => &p.positions[step],
            ExteriorSource::Fixed(g) => g,
        };
        let (yb_lo, yb_hi) = (exterior[w.left_boundary_slot()], exterior[w.right_boundary_slot()]);
        if !(yb_lo < yb_hi) {
            return Err(LabError::Spec("exterior boundary points out of order".into()));
        }

        let normals = gaussian_vector(&mut noise_rng, n_total);
        let increments: Vec<f64> =
            normals[w.lo()..=w.hi()].iter().map(|&z| z * opts.dt.sqrt()).collect();

        let ramp = spec.drift_ramp;
        let ul = spec.upsilon_l;
        let t1 = spec.t1;
        let mut drift = |xs: &[f64], tt: f64, out: &mut [f64]| {
            out.iter_mut().for_each(|d| *d = 0.0);
            for i in 0..kk {
                for j in i + 1..kk {
                    let inv = inv_n / (xs[i] - xs[j]);
                    out[i] += inv;
                    out[j] -= inv;
                }
            }
            for i in 0..kk {
                let mut ext = 0.0;
                for &y in exterior {
                    ext += 1.0 / (xs[i] - y);
                }
                let confinement = if ramp { (xs[i] + ul * (tt - t1)) / 2.0 } else { xs[i] / 2.0 };
                out[i] += ext * inv_n - confinement - ul;
            }
        };

        ordered_em_step(&mut x, t, opts.dt, coef, &increments, &mut drift, &mut bridge, 0)?;

        // Containment in J = [y_{l-k-1}, y_{l+k+1}]: reflect an escaped
        // boundary particle back inside and flag the event.
        if x[0] <= yb_lo {
            let mut r = 2.0 * yb_lo - x[0];
            if kk > 1 && r >= x[1] {
                r = 0.5 * (yb_lo + x[1]);
            }
            if !(yb_lo < r && (kk == 1 || r < x[1])) {
                return Err(LabError::Containment { index: 0, lo: yb_lo, hi: yb_hi, t });
            }
            x[0] = r;
            containment_events += 1;
        }
        if x[kk - 1] >= yb_hi {
            let mut r = 2.0 * yb_hi - x[kk - 1];
            if kk > 1 && r <= x[kk - 2] {
                r = 0.5 * (yb_hi + x[kk - 2]);
            }
            if !(r < yb_hi && (kk == 1 || r > x[kk - 2])) {
                return Err(LabError::Containment { index: kk - 1, lo: yb_lo, hi: yb_hi, t });
            }
            x[kk - 1] = r;
            containment_events += 1;
        }

        if (step + 1) % opts.stride == 0 || step + 1 == n_steps {
            times.push(t_span.0 + (step + 1) as f64 * opts.dt);
            frames.push(x.clone());
        }
    }

    Ok(Trajectory {
        times,
        positions: frames,
        labels: (w.lo() as i64..=w.hi() as i64).collect(),
        n_total,
        beta: spec.beta,
        dt: opts.dt,
        seed: opts.seed,
        replica: opts.replica,
        scheme: "euler-maruyama/localized".into(),
        containment_events,
    })
}

/// Localized DBM: interior particles driven by the pairwise interaction, the
/// streamed exterior path, the mean-drift removal, and the ramped
/// confinement -(x + upsilon_L (t - T1))/2.
pub fn run_localized(
    x_init: &[f64],
    exterior_path: &Trajectory,
    window: Window,
    upsilon_l: f64,
    t_span: (f64, f64),
    beta: f64,
    opts: &SdeOptions,
) -> Result<Trajectory> {
    let spec = LocalizedSpec {
        window,
        exterior: ExteriorSource::Path(exterior_path),
        upsilon_l,
        t1: t_span.0,
        drift_ramp: true,
        beta,
    };
    run_window_sde(x_init, &spec, t_span, opts, stream::BRIDGE_WINDOW)
}

/// Coupled reference dynamics: identical to `run_localized` except that the
/// exterior is frozen at the reference points and the confinement is -x/2.
/// Pairing it with `run_localized` under the same seed consumes identical
/// per-(i, step) Gaussian increments.
pub fn run_coupled_reference(
    x_init: &[f64],
    tilde_gamma: &[f64],
    window: Window,
    upsilon_l: f64,
    t_span: (f64, f64),
    beta: f64,
    opts: &SdeOptions,
) -> Result<Trajectory> {
    let spec = LocalizedSpec {
        window,
        exterior: ExteriorSource::Fixed(tilde_gamma),
        upsilon_l,
        t1: t_span.0,
        drift_ramp: false,
        beta,
    };
    run_window_sde(x_init, &spec, t_span, opts, stream::BRIDGE_WINDOW)
}

/// Signed small-scale regularization: eps_{jk} = eps sign(j-k) restricted to
/// I_sigma, antisymmetric by construction.
pub fn eps_jk(eps: f64, j: i64, k: i64, w: &Window) -> f64 {
    if j == k || !w.in_sigma(j) || !w.in_sigma(k) {
        0.0
    } else if j > k {
        eps
    } else {
        -eps
    }
}

/// Default regularization scale eps = N^{-10 C1}.
pub fn default_eps(n_total: usize, c1: f64) -> f64 {
    (n_total as f64).powf(-10.0 * c1)
}

/// Epsilon-regularized dynamics: the interaction drift is computed from the
/// unregularized window path (x-bar) and exterior path (y-bar) with the
/// denominators shifted by eps_{jk}; only the confinement sees the
/// regularized state itself, which therefore need not stay ordered.
pub fn run_regularized(
    bar_x_path: &Trajectory,
    exterior_path: &Trajectory,
    window: Window,
    eps: f64,
    upsilon_l: f64,
    t_span: (f64, f64),
    beta: f64,
    opts: &SdeOptions,
) -> Result<Trajectory> {
    window.validate()?;
    let kk = window.size();
    let n_steps = ((t_span.1 - t_span.0) / opts.dt).round() as usize;
    if bar_x_path.len() < n_steps + 1 || exterior_path.len() < n_steps + 1 {
        return Err(LabError::Spec("paths must cover the integration span frame by frame".into()));
    }

    let n_total = window.n_total;
    let inv_n = 1.0 / n_total as f64;
    let coef = (2.0 / (beta * n_total as f64)).sqrt();
    let mut noise_rng = stream_rng(opts.seed, opts.replica, stream::DBM_NOISE);

    let mut x = bar_x_path.positions[0].clone();
    let mut times = vec![t_span.0];
    let mut frames = vec![x.clone()];
    let glo = window.lo() as i64;

    for step in 0..n_steps {
        let t = t_span.0 + step as f64 * opts.dt;
        let bar = &bar_x_path.positions[step];
        let ext = &exterior_path.positions[step];
        let normals = gaussian_vector(&mut noise_rng, n_total);

        for i in 0..kk {
            let gi = glo + i as i64;
            let mut drift = 0.0;
            for j in 0..kk {
                if j != i {
                    let gj = glo + j as i64;
                    drift += inv_n / (bar[i] - bar[j] + eps_jk(eps, gi, gj, &window));
                }
            }
            for (slot, &y) in ext.iter().enumerate() {
                let gk = window.exterior_global(slot) as i64;
                drift += inv_n / (bar[i] - y + eps_jk(eps, gi, gk, &window));
            }
            drift -= (x[i] + upsilon_l * (t - t_span.0)) / 2.0 + upsilon_l;
            x[i] += drift * opts.dt + coef * opts.dt.sqrt() * normals[window.lo() + i];
        }

        if (step + 1) % opts.stride == 0 || step + 1 == n_steps {
            times.push(t_span.0 + (step + 1) as f64 * opts.dt);
            frames.push(x.clone());
        }
    }

    Ok(Trajectory {
        times,
        positions: frames,
        labels: bar_x_path.labels.clone(),
        n_total,
        beta,
        dt: opts.dt,
        seed: opts.seed,
        replica: opts.replica,
        scheme: "euler-maruyama/regularized".into(),
        containment_events: 0,
    })
}

/// Remove the mean drift: positions become positions - upsilon_L (t - T1).
pub fn shift_process(traj: &Trajectory, upsilon_l: f64, t1: f64) -> Trajectory {
    let positions = traj
        .times
        .iter()
        .zip(&traj.positions)
        .map(|(&t, frame)| frame.iter().map(|&x| x - upsilon_l * (t - t1)).collect())
        .collect();
    Trajectory { positions, scheme: format!("{}/shifted", traj.scheme), ..traj.clone() }
}

/// Time-dependent coefficients of the coupled difference dynamics, recorded
/// per frame over the shared time grid of a coupled pair.
#[derive(Debug, Clone)]
pub struct CouplingCoefficients {
    pub times: Vec<f64>,
    /// Number of window sites.
    pub size: usize,
    /// b[frame][i * size + j], symmetric with zero diagonal.
    pub b: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub f1: Vec<Vec<f64>>,
    pub f2: Vec<Vec<f64>>,
    pub eps: f64,
    pub n_total: usize,
    /// Exact zero denominators, recorded as (frame, i, j) with
    /// j == usize::MAX marking an exterior (W) entry; values stay zero.
    pub flagged: Vec<(usize, usize, usize)>,
    /// Count of negative W entries (possible off the good event).
    pub negative_w: usize,
}

impl CouplingCoefficients {
    pub fn b_at(&self, frame: usize, i: usize, j: usize) -> f64 {
        self.b[frame][i * self.size + j]
    }

    /// Largest explicit-Euler rate over all frames: max_i (sum_j |B_ij| + W_i).
    pub fn max_rate(&self) -> f64 {
        let kk = self.size;
        let mut rate = 0.0f64;
        for (bf, wf) in self.b.iter().zip(&self.w) {
            for i in 0..kk {
                let row: f64 = (0..kk).map(|j| bf[i * kk + j].abs()).sum();
                rate = rate.max(row + wf[i].max(0.0));
            }
        }
        rate
    }
}

/// Parameters fixing the forcing-term bookkeeping of `extract_coupling`.
#[derive(Debug, Clone, Copy)]
pub struct CouplingParams {
    pub upsilon_l: f64,
    pub t1: f64,
    /// Time origin of the exponential weight in the first forcing term.
    pub t1_prime: f64,
}

/// Coefficients of the difference equation for a shared-noise pair
/// (x-bar-or-hat, x-tilde):
///
///   B_ij = 1 / [N (xb_i - xb_j + eps_ij)(xt_i - xt_j)],
///   W_i  = (1/N) sum_{k not in I} 1 / [(xb_i - y_k + eps_ik)(xt_i - g_k)],
///
/// with the forcing split into the interior part (eps numerators plus the
/// drift-removal weight) and the exterior part (eps_ik and y_k - g_k
/// numerators). The pair is identified with (x-hat == x-bar), which holds to
/// machine precision at the default eps.
pub fn extract_coupling(
    bar: &Trajectory,
    tilde: &Trajectory,
    exterior_path: &Trajectory,
    tilde_gamma: &[f64],
    eps: f64,
    window: Window,
    params: CouplingParams,
) -> Result<CouplingCoefficients> {
    window.validate()?;
    let kk = window.size();
    if bar.len() != tilde.len() {
        return Err(LabError::Contract("coupled pair must share the time grid".into()));
    }
    for (a, b) in bar.times.iter().zip(&tilde.times) {
        if (a - b).abs() > 1e-12 {
            return Err(LabError::Contract("coupled pair must share the time grid".into()));
        }
    }
    if tilde_gamma.len() != window.exterior_len() {
        return Err(LabError::Spec("tilde_gamma must cover the exterior".into()));
    }

    let n = window.n_total as f64;
    let inv_n = 1.0 / n;
    let glo = window.lo() as i64;
    let mut out = CouplingCoefficients {
        times: bar.times.clone(),
        size: kk,
        b: Vec::with_capacity(bar.len()),
        w: Vec::with_capacity(bar.len()),
        f1: Vec::with_capacity(bar.len()),
        f2: Vec::with_capacity(bar.len()),
        eps,
        n_total: window.n_total,
        flagged: Vec::new(),
        negative_w: 0,
    };

    for (frame, &t) in bar.times.iter().enumerate() {
        let xb = &bar.positions[frame];
        let xt = &tilde.positions[frame];
        let yext = &exterior_path.positions[frame.min(exterior_path.len() - 1)];
        let mut bmat = vec![0.0; kk * kk];
        let mut wvec = vec![0.0; kk];
        let mut f1 = vec![0.0; kk];
        let mut f2 = vec![0.0; kk];

        for i in 0..kk {
            let gi = glo + i as i64;
            let mut f1i = 0.0;
            for j in 0..kk {
                if i == j {
                    continue;
                }
                let gj = glo + j as i64;
                let e = eps_jk(eps, gi, gj, &window);
                let den = n * (xb[i] - xb[j] + e) * (xt[i] - xt[j]);
                if den == 0.0 {
                    out.flagged.push((frame, i, j));
                } else {
                    bmat[i * kk + j] = 1.0 / den;
                    f1i += e / den;
                }
            }
            f1i -= 0.5 * ((t - params.t1_prime) / 2.0).exp() * params.upsilon_l * (t - params.t1);
            f1[i] = f1i;

            let mut wi = 0.0;
            let mut f2i = 0.0;
            for (slot, (&y, &g)) in yext.iter().zip(tilde_gamma).enumerate() {
                let gk = window.exterior_global(slot) as i64;
                let e = eps_jk(eps, gi, gk, &window);
                let den = (xb[i] - y + e) * (xt[i] - g);
                if den == 0.0 {
                    out.flagged.push((frame, i, usize::MAX));
                    continue;
                }
                wi += inv_n / den;
                f2i += inv_n * (e + (y - g)) / den;
            }
            if wi < 0.0 {
                out.negative_w += 1;
            }
            wvec[i] = wi;
            f2[i] = f2i;
        }

        out.b.push(bmat);
        out.w.push(wvec);
        out.f1.push(f1);
        out.f2.push(f2);
    }
    Ok(out)
}

/// Path of a vector under the explicit parabolic evolution.
#[derive(Debug, Clone)]
pub struct VectorPath {
    pub times: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl VectorPath {
    pub fn last(&self) -> &Vec<f64> {
        self.vectors.last().unwrap()
    }

    pub fn at_time(&self, t: f64) -> &Vec<f64> {
        let mut best = 0;
        let mut err = f64::INFINITY;
        for (i, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < err {
                err = (s - t).abs();
                best = i;
            }
        }
        &self.vectors[best]
    }
}

/// Explicit Euler for dv_i/dt = -sum_j B_ij (v_i - v_j) - W_i v_i + F_i,
/// with coefficients frozen per recorded frame. The step must satisfy
/// dt (max_i sum_j B_ij + max W) <= 1/2; a violation is an error, never a
/// silent substep. With W = 0, F = 0 the scheme exactly conserves the vector
/// sum and obeys the discrete maximum principle.
pub fn evolve_parabolic(
    coeffs: &CouplingCoefficients,
    v0: &[f64],
    forcing: Option<&[Vec<f64>]>,
    t_span: (f64, f64),
    dt: f64,
) -> Result<VectorPath> {
    let kk = coeffs.size;
    if v0.len() != kk {
        return Err(LabError::Spec("v0 length must equal the window size".into()));
    }
    let rate = coeffs.max_rate();
    if dt * rate > 0.5 {
        return Err(LabError::Stability { dt, bound: 0.5 / rate.max(1e-300) });
    }
    let t_grid_0 = coeffs.times[0];
    let frame_dt = if coeffs.times.len() > 1 {
        coeffs.times[1] - coeffs.times[0]
    } else {
        f64::INFINITY
    };

    let n_steps = ((t_span.1 - t_span.0) / dt).round().max(0.0) as usize;
    // keep the stored path bounded; the final state is always recorded
    let store_every = (n_steps / 4000).max(1);
    let mut v = v0.to_vec();
    let mut times = vec![t_span.0];
    let mut vectors = vec![v.clone()];

    let mut dv = vec![0.0; kk];
    for s in 0..n_steps {
        let t = t_span.0 + s as f64 * dt;
        let frame = (((t - t_grid_0) / frame_dt).floor().max(0.0) as usize).min(coeffs.times.len() - 1);
        let bf = &coeffs.b[frame];
        let wf = &coeffs.w[frame];
        for i in 0..kk {
            let mut acc = 0.0;
            let row = i * kk;
            for j in 0..kk {
                acc -= bf[row + j] * (v[i] - v[j]);
            }
            acc -= wf[i] * v[i];
            if let Some(f) = forcing {
                acc += f[frame.min(f.len() - 1)][i];
            }
            dv[i] = acc;
        }
        for i in 0..kk {
            v[i] += dt * dv[i];
        }
        if (s + 1) % store_every == 0 || s + 1 == n_steps {
            times.push(t + dt);
            vectors.push(v.clone());
        }
    }
    Ok(VectorPath { times, vectors })
}

impl CouplingCoefficients {
    /// Explicit-Euler rate of one frame: max_i (sum_j |B_ij| + W_i).
    pub fn frame_rate(&self, f: usize) -> f64 {
        let kk = self.size;
        let (bf, wf) = (&self.b[f], &self.w[f]);
        (0..kk)
            .map(|i| {
                let row: f64 = (0..kk).map(|j| bf[i * kk + j].abs()).sum();
                row + wf[i].max(0.0)
            })
            .fold(0.0f64, f64::max)
    }
}

/// Frame-adaptive explicit Euler: each recorded frame is integrated with its
/// own stability-satisfying step (dt_f = 0.4 / frame rate), so short-lived
/// kernel spikes cost steps only while they last. Errors when the projected
/// step count exceeds `step_budget` (off the good event; the caller decides
/// what to do with such a replica).
pub fn evolve_parabolic_adaptive(
    coeffs: &CouplingCoefficients,
    v0: &[f64],
    forcing: Option<&[Vec<f64>]>,
    t_span: (f64, f64),
    step_budget: usize,
) -> Result<VectorPath> {
    let kk = coeffs.size;
    if v0.len() != kk {
        return Err(LabError::Spec("v0 length must equal the window size".into()));
    }
    if coeffs.times.len() < 2 {
        return Err(LabError::Spec("need at least two coefficient frames".into()));
    }
    let frame_dt = coeffs.times[1] - coeffs.times[0];
    let t0 = coeffs.times[0];
    let f_start = (((t_span.0 - t0) / frame_dt).floor().max(0.0) as usize).min(coeffs.times.len() - 1);
    let f_end = (((t_span.1 - t0) / frame_dt).ceil().max(0.0) as usize).min(coeffs.times.len() - 1);

    // projected cost
    let mut projected = 0usize;
    for f in f_start..f_end.max(f_start + 1) {
        let rate = coeffs.frame_rate(f);
        if !rate.is_finite() {
            return Err(LabError::Stability { dt: frame_dt, bound: 0.0 });
        }
        projected += ((frame_dt * rate / 0.4).ceil() as usize).max(1);
        if projected > step_budget {
            return Err(LabError::Stability { dt: frame_dt, bound: 0.4 / rate });
        }
    }

    let mut v = v0.to_vec();
    let mut times = vec![t_span.0];
    let mut vectors = vec![v.clone()];
    let mut dv = vec![0.0; kk];
    let mut t = t_span.0;
    for f in f_start..f_end.max(f_start + 1) {
        let frame_end = (coeffs.times[f] + frame_dt).min(t_span.1);
        if frame_end <= t {
            continue;
        }
        let rate = coeffs.frame_rate(f);
        let n_sub = (((frame_end - t) * rate / 0.4).ceil() as usize).max(1);
        let dt = (frame_end - t) / n_sub as f64;
        let bf = &coeffs.b[f];
        let wf = &coeffs.w[f];
        for _ in 0..n_sub {
            for i in 0..kk {
                let mut acc = 0.0;
                let row = i * kk;
                for j in 0..kk {
                    acc -= bf[row + j] * (v[i] - v[j]);
                }
                acc -= wf[i] * v[i];
                if let Some(fr) = forcing {
                    acc += fr[f.min(fr.len() - 1)][i];
                }
                dv[i] = acc;
            }
            for i in 0..kk {
                v[i] += dt * dv[i];
            }
        }
        t = frame_end;
        times.push(t);
        vectors.push(v.clone());
    }
    Ok(VectorPath { times, vectors })
}

/// Kernel column U(., s) e_j of the homogeneous propagator.
pub fn propagator_column(
    coeffs: &CouplingCoefficients,
    j: usize,
    s: f64,
    t_end: f64,
    dt: f64,
) -> Result<VectorPath> {
    let kk = coeffs.size;
    let mut e = vec![0.0; kk];
    e[j] = 1.0;
    evolve_parabolic(coeffs, &e, None, (s, t_end), dt)
}

/// Propagator column via the frame-adaptive integrator.
pub fn propagator_column_adaptive(
    coeffs: &CouplingCoefficients,
    j: usize,
    s: f64,
    t_end: f64,
    step_budget: usize,
) -> Result<VectorPath> {
    let kk = coeffs.size;
    let mut e = vec![0.0; kk];
    e[j] = 1.0;
    evolve_parabolic_adaptive(coeffs, &e, None, (s, t_end), step_budget)
}
