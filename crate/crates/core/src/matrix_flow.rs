//! Wigner-like matrices, the matrix Ornstein-Uhlenbeck flow, dense
//! symmetric/hermitian spectra, and local-law residuals. The spectra provide
//! an independent oracle for the particle dynamics: eigenvalues of the OU
//! matrix flow realize the same SDE as the simulated particles.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::{solve_mt_with_guess, FlowSolverConfig};
use crate::measures::Measure1D;

/// Symmetry class; fixes the inverse temperature of the induced eigenvalue SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymmetryClass {
    /// beta = 1
    RealSymmetric,
    /// beta = 2
    ComplexHermitian,
}

impl SymmetryClass {
    pub fn beta(self) -> f64 {
        match self {
            SymmetryClass::RealSymmetric => 1.0,
            SymmetryClass::ComplexHermitian => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryLaw {
    Gaussian,
    /// +-sqrt(variance) with equal probability (per real component).
    BernoulliPm,
    /// Uniform on [-sqrt(3 variance), sqrt(3 variance)].
    Uniform,
}

/// Variance profile S with E |h_ij|^2 = S_ij.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum VarianceProfile {
    /// S_ij = 1/N: the standard Wigner normalization.
    Flat,
    /// Explicit symmetric matrix, row-major n x n.
    Matrix(Vec<f64>),
}

/// Deterministic expectation A (respecting the symmetry class).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Expectation {
    Zero,
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WignerLikeSpec {
    pub n: usize,
    pub class: SymmetryClass,
    pub variance_profile: VarianceProfile,
    pub expectation: Expectation,
    pub entry_law: EntryLaw,
}

impl WignerLikeSpec {
    pub fn gue(n: usize) -> Self {
        WignerLikeSpec {
            n,
            class: SymmetryClass::ComplexHermitian,
            variance_profile: VarianceProfile::Flat,
            expectation: Expectation::Zero,
            entry_law: EntryLaw::Gaussian,
        }
    }

    pub fn goe(n: usize) -> Self {
        WignerLikeSpec {
            n,
            class: SymmetryClass::RealSymmetric,
            variance_profile: VarianceProfile::Flat,
            expectation: Expectation::Zero,
            entry_law: EntryLaw::Gaussian,
        }
    }

    /// Deformed Wigner: flat profile plus a diagonal expectation.
    pub fn deformed(n: usize, class: SymmetryClass, diagonal: Vec<f64>) -> Self {
        WignerLikeSpec {
            n,
            class,
            variance_profile: VarianceProfile::Flat,
            expectation: Expectation::Diagonal(diagonal),
            entry_law: EntryLaw::Gaussian,
        }
    }

    pub fn variance(&self, i: usize, j: usize) -> f64 {
        match &self.variance_profile {
            VarianceProfile::Flat => 1.0 / self.n as f64,
            VarianceProfile::Matrix(s) => s[i * self.n + j],
        }
    }

    pub fn mean(&self, i: usize, j: usize) -> f64 {
        match &self.expectation {
            Expectation::Zero => 0.0,
            Expectation::Diagonal(d) => {
                if i == j {
                    d[i]
                } else {
                    0.0
                }
            }
        }
    }

    /// Row sums of S; all equal to one exactly when the limiting law is the
    /// semicircle.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.variance(i, j)).sum())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(LabError::Spec("matrix dimension must be positive".into()));
        }
        if let VarianceProfile::Matrix(s) = &self.variance_profile {
            if s.len() != self.n * self.n {
                return Err(LabError::Spec("variance profile must be n x n".into()));
            }
            for i in 0..self.n {
                for j in 0..i {
                    if (s[i * self.n + j] - s[j * self.n + i]).abs() > 1e-14 {
                        return Err(LabError::Spec("variance profile must be symmetric".into()));
                    }
                }
                if (0..self.n).any(|j| s[i * self.n + j] < 0.0) {
                    return Err(LabError::Spec("variance profile must be nonnegative".into()));
                }
            }
        }
        if let Expectation::Diagonal(d) = &self.expectation {
            if d.len() != self.n {
                return Err(LabError::Spec("diagonal expectation must have length n".into()));
            }
        }
        Ok(())
    }
}

/// Dense real symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMat {
    pub n: usize,
    pub data: Vec<f64>,
}

impl RealMat {
    pub fn zeros(n: usize) -> Self {
        RealMat { n, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

/// Dense complex hermitian matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMat {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl ComplexMat {
    pub fn zeros(n: usize) -> Self {
        ComplexMat { n, data: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HMatrix {
    Real(RealMat),
    Complex(ComplexMat),
}

impl HMatrix {
    pub fn n(&self) -> usize {
        match self {
            HMatrix::Real(m) => m.n,
            HMatrix::Complex(m) => m.n,
        }
    }

    pub fn class(&self) -> SymmetryClass {
        match self {
            HMatrix::Real(_) => SymmetryClass::RealSymmetric,
            HMatrix::Complex(_) => SymmetryClass::ComplexHermitian,
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            HMatrix::Real(m) => m.trace(),
            HMatrix::Complex(m) => m.trace().re,
        }
    }

    /// Largest deviation from (conjugate) symmetry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        match self {
            HMatrix::Real(m) => {
                for i in 0..m.n {
                    for j in 0..i {
                        worst = worst.max((m.get(i, j) - m.get(j, i)).abs());
                    }
                }
            }
            HMatrix::Complex(m) => {
                for i in 0..m.n {
                    worst = worst.max(m.get(i, i).im.abs());
                    for j in 0..i {
                        worst = worst.max((m.get(i, j) - m.get(j, i).conj()).norm());
                    }
                }
            }
        }
        worst
    }
}

/// One centered draw with the given variance under the entry law.
fn draw(law: EntryLaw, variance: f64, rng: &mut ChaCha8Rng) -> f64 {
    let sd = variance.sqrt();
    match law {
        EntryLaw::Gaussian => sd * rng.sample::<f64, _>(StandardNormal),
        EntryLaw::BernoulliPm => {
            if rng.gen::<bool>() {
                sd
            } else {
                -sd
            }
        }
        EntryLaw::Uniform => (3.0f64).sqrt() * sd * (2.0 * rng.gen::<f64>() - 1.0),
    }
}

/// Sample a Wigner-like matrix: independent entries up to symmetry with
/// E|h_ij|^2 = S_ij and mean A_ij. Diagonal variances follow the Gaussian
/// ensemble conventions (2 S_ii for beta = 1, S_ii for beta = 2).
pub fn sample_matrix(spec: &WignerLikeSpec, rng: &mut ChaCha8Rng) -> Result<HMatrix> {
    spec.validate()?;
    let n = spec.n;
    match spec.class {
        SymmetryClass::RealSymmetric => {
            let mut m = RealMat::zeros(n);
            for i in 0..n {
                let dv = draw(spec.entry_law, 2.0 * spec.variance(i, i), rng);
                m.set(i, i, spec.mean(i, i) + dv);
                for j in i + 1..n {
                    let v = spec.mean(i, j) + draw(spec.entry_law, spec.variance(i, j), rng);
                    m.set(i, j, v);
                    m.set(j, i, v);
                }
            }
            Ok(HMatrix::Real(m))
        }
        SymmetryClass::ComplexHermitian => {
            let mut m = ComplexMat::zeros(n);
            for i in 0..n {
                let dv = draw(spec.entry_law, spec.variance(i, i), rng);
                m.set(i, i, Complex64::new(spec.mean(i, i) + dv, 0.0));
                for j in i + 1..n {
                    let re = draw(spec.entry_law, 0.5 * spec.variance(i, j), rng);
                    let im = draw(spec.entry_law, 0.5 * spec.variance(i, j), rng);
                    let v = Complex64::new(spec.mean(i, j) + re, im);
                    m.set(i, j, v);
                    m.set(j, i, v.conj());
                }
            }
            Ok(HMatrix::Complex(m))
        }
    }
}

/// One Euler step of the matrix OU flow:
/// h_ij <- h_ij (1 - dt/2) + dB_ij / sqrt(N), with the class-dependent
/// Brownian conventions (complex off-diagonal variance dt and real diagonal
/// variance dt for beta = 2; real off-diagonal variance dt and diagonal
/// variance 2 dt for beta = 1).
pub fn ou_step(h: &mut HMatrix, dt: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if dt < 0.0 {
        return Err(LabError::Spec("ou_step requires dt >= 0".into()));
    }
    if dt == 0.0 {
        return Ok(());
    }
    let n = h.n();
    let root_n = (n as f64).sqrt();
    let decay = 1.0 - dt / 2.0;
    match h {
        HMatrix::Real(m) => {
            for i in 0..n {
                let db: f64 = (2.0 * dt).sqrt() * rng.sample::<f64, _>(StandardNormal);
                let v = m.get(i, i) * decay + db / root_n;
                m.set(i, i, v);
                for j in i + 1..n {
                    let db: f64 = dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
                    let v = m.get(i, j) * decay + db / root_n;
                    m.set(i, j, v);
                    m.set(j, i, v);
                }
            }
        }
        HMatrix::Complex(m) => {
            for i in 0..n {
                let db: f64 = dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let v = m.get(i, i).re * decay + db / root_n;
                m.set(i, i, Complex64::new(v, 0.0));
                for j in i + 1..n {
                    let re: f64 = (0.5 * dt).sqrt() * rng.sample::<f64, _>(StandardNormal);
                    let im: f64 = (0.5 * dt).sqrt() * rng.sample::<f64, _>(StandardNormal);
                    let v = m.get(i, j) * decay + Complex64::new(re, im) / root_n;
                    m.set(i, j, v);
                    m.set(j, i, v.conj());
                }
            }
        }
    }
    Ok(())
}

/// Exact sample of the OU flow at time t: e^{-t/2} H_0 + sqrt(1 - e^{-t}) U
/// with U an independent GOE/GUE draw.
pub fn ou_closed_form(h0: &HMatrix, t: f64, rng: &mut ChaCha8Rng) -> Result<HMatrix> {
    if t < 0.0 {
        return Err(LabError::Spec("ou_closed_form requires t >= 0".into()));
    }
    let n = h0.n();
    let a = (-t / 2.0f64).exp();
    let b = (1.0 - (-t as f64).exp()).sqrt();
    let spec = match h0.class() {
        SymmetryClass::RealSymmetric => WignerLikeSpec::goe(n),
        SymmetryClass::ComplexHermitian => WignerLikeSpec::gue(n),
    };
    let u = sample_matrix(&spec, rng)?;
    Ok(match (h0, u) {
        (HMatrix::Real(h), HMatrix::Real(g)) => {
            let mut out = RealMat::zeros(n);
            for k in 0..n * n {
                out.data[k] = a * h.data[k] + b * g.data[k];
            }
            HMatrix::Real(out)
        }
        (HMatrix::Complex(h), HMatrix::Complex(g)) => {
            let mut out = ComplexMat::zeros(n);
            for k in 0..n * n {
                out.data[k] = a * h.data[k] + b * g.data[k];
            }
            HMatrix::Complex(out)
        }
        _ => unreachable!("class is preserved"),
    })
}

/// Full ordered spectrum by Householder tridiagonalization followed by
/// implicit QL iteration. Hermiticity is checked up to 1e-12 relative.
pub fn eigenvalues(h: &HMatrix) -> Result<Vec<f64>> {
    let scale = match h {
        HMatrix::Real(m) => m.data.iter().fold(0.0f64, |a, &x| a.max(x.abs())),
        HMatrix::Complex(m) => m.data.iter().fold(0.0f64, |a, x| a.max(x.norm())),
    };
    if h.asymmetry() > 1e-12 * scale.max(1.0) {
        return Err(LabError::Spec(format!(
            "matrix is not symmetric/hermitian: asymmetry {:.3e}",
            h.asymmetry()
        )));
    }
    let (mut d, mut e) = match h {
        HMatrix::Real(m) => eigen::tridiagonalize_real(m),
        HMatrix::Complex(m) => eigen::tridiagonalize_hermitian(m),
    };
    eigen::tql_eigenvalues(&mut d, &mut e)?;
    d.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(d)
}

/// Per-replica local-law residual data at one (E, eta) point.
#[derive(Debug, Clone, Serialize)]
pub struct LocalLawPoint {
    pub e: f64,
    pub eta: f64,
    /// |m^{(N)} - m_t| per replica.
    pub residuals: Vec<f64>,
    /// Fraction of replicas within envelope_bound/(N eta).
    pub pass_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalLawReport {
    pub points: Vec<LocalLawPoint>,
    /// Per replica: max over window positions of
    /// |#lambda in window - #gamma in window| on eta-scale windows.
    pub counting_discrepancy: Vec<usize>,
    pub counting_pass_fraction: f64,
}

/// Empirical Stieltjes transform of one spectrum.
pub fn empirical_transform(spectrum: &[f64], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &l in spectrum {
        acc += 1.0 / (Complex64::new(l, 0.0) - z);
    }
    acc / spectrum.len() as f64
}

/// Compare empirical transforms of an ensemble of spectra against the
/// evolved transform of `rho0`, and count eigenvalues against quantiles on
/// eta-scale windows inside [e_star - sigma/2, e_star + sigma/2].
#[allow(clippy::too_many_arguments)]
pub fn local_law_residuals(
    spectra: &[Vec<f64>],
    rho0: &Measure1D,
    t: f64,
    e_star: f64,
    sigma: f64,
    eta_grid: &[f64],
    envelope_bound: f64,
    counting_bound: f64,
    cfg: &FlowSolverConfig,
) -> Result<LocalLawReport> {
    if spectra.is_empty() {
        return Err(LabError::InsufficientData("no spectra supplied".into()));
    }
    let n = spectra[0].len();
    let mut points = Vec::new();
    for &eta in eta_grid {
        let z = Complex64::new(e_star, eta);
        let mref = solve_mt_with_guess(rho0, t, z, cfg, None)?;
        let residuals: Vec<f64> = spectra
            .iter()
            .map(|s| (empirical_transform(s, z) - mref).norm())
            .collect();
        let bound = envelope_bound / (n as f64 * eta);
        let pass = residuals.iter().filter(|r| **r <= bound).count() as f64 / residuals.len() as f64;
        points.push(LocalLawPoint { e: e_star, eta, residuals, pass_fraction: pass });
    }

    // Counting against quantiles of the evolved density on eta-scale windows.
    let eta_w = eta_grid.iter().cloned().fold(f64::INFINITY, f64::min).max(1.0 / n as f64);
    let lo = e_star - sigma / 2.0;
    let hi = e_star + sigma / 2.0;
    let grid = crate::measures::linear_grid(lo - 2.0 * sigma, hi + 2.0 * sigma, 3001);
    let dens = crate::flow::flow_density(rho0, t.max(1e-9), &grid, cfg)?;
    let gammas: Vec<f64> = (1..=n)
        .filter_map(|k| crate::measures::quantile(&dens, n, k).ok().map(|q| q.value))
        .collect();

    let mut discrepancy = Vec::with_capacity(spectra.len());
    for s in spectra {
        let mut worst = 0usize;
        let mut a = lo;
        while a + eta_w <= hi {
            let b = a + eta_w;
            let c_l = s.iter().filter(|&&x| x >= a && x < b).count();
            let c_g = gammas.iter().filter(|&&x| x >= a && x < b).count();
            worst = worst.max(c_l.abs_diff(c_g));
            a += eta_w;
        }
        discrepancy.push(worst);
    }
    let pass = discrepancy.iter().filter(|&&d| (d as f64) <= counting_bound).count() as f64
        / discrepancy.len() as f64;
    Ok(LocalLawReport { points, counting_discrepancy: discrepancy, counting_pass_fraction: pass })
}

/// Dense symmetric eigensolver kernels: Householder reduction to a real
/// symmetric tridiagonal form, then implicit QL with Wilkinson shifts.
pub mod eigen {
    use super::{ComplexMat, RealMat};
    use crate::error::{LabError, Result};
    use num_complex::Complex64;

    /// Householder reduction of a real symmetric matrix to tridiagonal
    /// (d, e); eigenvector accumulation is skipped.
    pub fn tridiagonalize_real(a0: &RealMat) -> (Vec<f64>, Vec<f64>) {
        let n = a0.n;
        let mut a = a0.data.clone();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n.saturating_sub(1)];
        if n == 1 {
            d[0] = a[0];
            return (d, e);
        }

        let idx = |i: usize, j: usize| i * n + j;
        for k in 0..n.saturating_sub(2) {
            let mut nrm2 = 0.0;
            for i in k + 1..n {
                nrm2 += a[idx(i, k)] * a[idx(i, k)];
            }
            if nrm2 == 0.0 {
                e[k] = 0.0;
                continue;
            }
            let x0 = a[idx(k + 1, k)];
            let alpha = -(if x0 >= 0.0 { 1.0 } else { -1.0 }) * nrm2.sqrt();
            let m = n - k - 1;
            let mut v = vec![0.0; m];
            for (ii, vi) in v.iter_mut().enumerate() {
                *vi = a[idx(k + 1 + ii, k)];
            }
            v[0] -= alpha;
            let vn: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if vn == 0.0 {
                e[k] = alpha;
                continue;
            }
            v.iter_mut().for_each(|x| *x /= vn);

            // trailing update B <- B - v u^T - u v^T, u = 2(Bv - (v^T B v) v)
            let mut w = vec![0.0; m];
            for i in 0..m {
                let mut acc = 0.0;
                let row = idx(k + 1 + i, k + 1);
                for j in 0..m {
                    acc += a[row + j] * v[j];
                }
                w[i] = acc;
            }
            let c: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();
            let u: Vec<f64> = w.iter().zip(&v).map(|(wi, vi)| 2.0 * (wi - c * vi)).collect();
            for i in 0..m {
                let row = idx(k + 1 + i, k + 1);
                for j in 0..m {
                    a[row + j] -= v[i] * u[j] + u[i] * v[j];
                }
            }
            e[k] = alpha;
        }
        e[n - 2] = a[idx(n - 1, n - 2)];
        for i in 0..n {
            d[i] = a[idx(i, i)];
        }
        (d, e)
    }

    /// Householder reduction of a complex hermitian matrix. The resulting
    /// hermitian tridiagonal form is phase-equivalent to a real one, so the
    /// moduli of the off-diagonals are returned.
    pub fn tridiagonalize_hermitian(a0: &ComplexMat) -> (Vec<f64>, Vec<f64>) {
        let n = a0.n;
        let mut a = a0.data.clone();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n.saturating_sub(1)];
        if n == 1 {
            d[0] = a[0].re;
            return (d, e);
        }
        let idx = |i: usize, j: usize| i * n + j;

        for k in 0..n.saturating_sub(2) {
            let mut nrm2 = 0.0;
            for i in k + 1..n {
                nrm2 += a[idx(i, k)].norm_sqr();
            }
            if nrm2 == 0.0 {
                e[k] = 0.0;
                continue;
            }
            let nrm = nrm2.sqrt();
            let x0 = a[idx(k + 1, k)];
            let phase = if x0.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { x0 / x0.norm() };
            let alpha = -phase * nrm;

            let m = n - k - 1;
            let mut v: Vec<Complex64> = (0..m).map(|i| a[idx(k + 1 + i, k)]).collect();
            v[0] -= alpha;
            let vn: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if vn == 0.0 {
                e[k] = nrm;
                continue;
            }
            v.iter_mut().for_each(|x| *x /= vn);

            // B <- B - v u^* - u v^*, u = 2(Bv - (v^* B v) v); v^* B v real
            let mut w = vec![Complex64::new(0.0, 0.0); m];
            for i in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                let row = idx(k + 1 + i, k + 1);
                for j in 0..m {
                    acc += a[row + j] * v[j];
                }
                w[i] = acc;
            }
            let c: Complex64 = v.iter().zip(&w).map(|(x, y)| x.conj() * y).sum();
            let u: Vec<Complex64> =
                w.iter().zip(&v).map(|(wi, vi)| 2.0 * (wi - c.re * vi)).collect();
            for i in 0..m {
                let row = idx(k + 1 + i, k + 1);
                for j in 0..m {
                    a[row + j] -= v[i] * u[j].conj() + u[i] * v[j].conj();
                }
            }
            e[k] = nrm;
        }
        e[n - 2] = a[idx(n - 1, n - 2)].norm();
        for i in 0..n {
            d[i] = a[idx(i, i)].re;
        }
        (d, e)
    }

    /// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix;
    /// eigenvalues land in `d` (unsorted).
    pub fn tql_eigenvalues(d: &mut [f64], e_sub: &mut [f64]) -> Result<()> {
        let n = d.len();
        if n <= 1 {
            return Ok(());
        }
        let mut e = vec![0.0; n];
        e[..n - 1].copy_from_slice(e_sub);

        for l in 0..n {
            let mut iter = 0;
            loop {
                let mut m = l;
                while m + 1 < n {
                    let dd = d[m].abs() + d[m + 1].abs();
                    if e[m].abs() <= f64::EPSILON * dd {
                        break;
                    }
                    m += 1;
                }
                if m == l {
                    break;
                }
                iter += 1;
                if iter > 64 {
                    return Err(LabError::Spec("tridiagonal QL did not converge".into()));
                }
                let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                let mut r = g.hypot(1.0);
                let denom = g + if g >= 0.0 { r } else { -r };
                g = d[m] - d[l] + e[l] / denom;
                let (mut s, mut c) = (1.0f64, 1.0f64);
                let mut p = 0.0f64;
                let mut i = m;
                let mut underflow = false;
                while i > l {
                    let im1 = i - 1;
                    let mut f = s * e[im1];
                    let b = c * e[im1];
                    r = f.hypot(g);
                    e[i] = r;
                    if r == 0.0 {
                        d[i] -= p;
                        e[m] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i] - p;
                    f = (d[im1] - g) * s + 2.0 * c * b;
                    p = s * f;
                    d[i] = g + p;
                    g = c * f - b;
                    i -= 1;
                }
                if underflow {
                    continue;
                }
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        }
        e_sub.copy_from_slice(&e[..n - 1]);
        Ok(())
    }
}
