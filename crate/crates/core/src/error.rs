//! Error types shared across the lab.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    /// A transform or potential was evaluated exactly on a singularity
    /// (an atom, an exterior point, or a real energy inside an atomic support).
    #[error("singular evaluation: {0}")]
    SingularEvaluation(String),

    /// A gridded operation lost probability mass beyond what the caller allowed.
    #[error("grid too narrow: truncated mass {deficit:.3e} exceeds {allowed:.3e}")]
    MassLoss { deficit: f64, allowed: f64 },

    /// Stieltjes data with a negative imaginary part cannot be a measure.
    #[error("invalid transform data: Im m = {0:.3e} below -1e-12")]
    InvalidTransform(f64),

    /// Fixed-point iteration for the flow transform did not converge.
    #[error("flow solver did not converge at z = {re:.6}+{im:.6}i, t = {t}: last residual {residual:.3e}")]
    NonConvergence { re: f64, im: f64, t: f64, residual: f64 },

    /// The solver left the physical branch (Im m <= 0) and restarts were exhausted.
    #[error("branch loss at z = {re:.6}+{im:.6}i: Im m = {im_m:.3e}")]
    BranchLoss { re: f64, im: f64, im_m: f64 },

    /// Quantile or density request outside the resolvable bulk.
    #[error("density {rho:.3e} below floor {floor:.3e} at index {index}, t = {t}")]
    DensityFloor { rho: f64, floor: f64, index: i64, t: f64 },

    /// Adjacent particles could not be kept ordered even after bisecting the step.
    #[error("particle collision between indices {i} and {j} at t = {t:.6} after {halvings} halvings")]
    Collision { i: usize, j: usize, t: f64, halvings: u32 },

    /// A window particle left the configuration interval and could not be reflected back.
    #[error("window particle {index} left the configuration interval [{lo:.6}, {hi:.6}] at t = {t:.6}")]
    Containment { index: usize, lo: f64, hi: f64, t: f64 },

    /// Explicit-scheme stability bound violated; the caller decides how to re-step.
    #[error("explicit step dt = {dt:.3e} violates stability bound {bound:.3e}")]
    Stability { dt: f64, bound: f64 },

    /// A matrix or ensemble specification is inconsistent.
    #[error("invalid spec: {0}")]
    Spec(String),

    /// Interpolated reference points came out non-monotone.
    #[error("reference points non-monotone at index {0}")]
    InterpolationOrder(usize),

    /// Not enough data to run a statistical fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A diagnostics input violates its domain restriction.
    #[error("domain error: {0}")]
    Domain(String),

    /// A coupled pair does not satisfy the shared-noise contract.
    #[error("coupling contract violated: {0}")]
    Contract(String),

    /// No labeling shift achieves the rigid-matching tolerance.
    #[error("no labeling shift matches within {0:.3e}")]
    NoLabeling(f64),

    /// Persisted data does not match its manifest.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
