//! Persistence: the columnar trajectory format, CSV exports, and JSON
//! helpers.
//!
//! Trajectory files are little-endian binary: an 8-byte magic, then
//! n (u64), beta (f64), dt (f64), seed (u64), frame count (u64), then per
//! frame the time followed by n positions, all f64. Spectra reuse the same
//! container with dt = 0.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dbm::Trajectory;
use crate::error::{LabError, Result};

const MAGIC: &[u8; 8] = b"DBMTRJ01";

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let n = traj.positions.first().map(|f| f.len()).unwrap_or(0) as u64;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&traj.beta.to_le_bytes())?;
    w.write_all(&traj.dt.to_le_bytes())?;
    w.write_all(&traj.seed.to_le_bytes())?;
    w.write_all(&(traj.times.len() as u64).to_le_bytes())?;
    for (t, frame) in traj.times.iter().zip(&traj.positions) {
        w.write_all(&t.to_le_bytes())?;
        for x in frame {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LabError::Integrity(format!("bad magic in {}", path.display())));
    }
    let n = read_u64(&mut r)? as usize;
    let beta = read_f64(&mut r)?;
    let dt = read_f64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let frames = read_u64(&mut r)? as usize;
    let mut times = Vec::with_capacity(frames);
    let mut positions = Vec::with_capacity(frames);
    for _ in 0..frames {
        times.push(read_f64(&mut r)?);
        let mut frame = Vec::with_capacity(n);
        for _ in 0..n {
            frame.push(read_f64(&mut r)?);
        }
        positions.push(frame);
    }
    Ok(Trajectory {
        times,
        positions,
        labels: (0..n as i64).collect(),
        n_total: n,
        beta,
        dt,
        seed,
        replica: 0,
        scheme: "persisted".into(),
        containment_events: 0,
    })
}

/// Persist a set of spectra as zero-dt trajectory frames.
pub fn write_spectra(path: &Path, spectra: &[Vec<f64>], beta: f64, seed: u64) -> Result<()> {
    let n = spectra.first().map(|s| s.len()).unwrap_or(0);
    let traj = Trajectory {
        times: (0..spectra.len()).map(|i| i as f64).collect(),
        positions: spectra.to_vec(),
        labels: (0..n as i64).collect(),
        n_total: n,
        beta,
        dt: 0.0,
        seed,
        replica: 0,
        scheme: "spectra".into(),
        containment_events: 0,
    };
    write_trajectory(path, &traj)
}

pub fn read_spectra(path: &Path) -> Result<Vec<Vec<f64>>> {
    Ok(read_trajectory(path)?.positions)
}

/// CSV with an x,rho row per grid point.
pub fn write_density_csv(path: &Path, mu: &crate::measures::Measure1D) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x,rho")?;
    match mu {
        crate::measures::Measure1D::Gridded { grid, values } => {
            for (x, v) in grid.iter().zip(values) {
                writeln!(w, "{x},{v}")?;
            }
        }
        crate::measures::Measure1D::Atomic { atoms, weights } => {
            for (x, v) in atoms.iter().zip(weights) {
                writeln!(w, "{x},{v}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV with a t,index,gamma row per (time, index) pair.
pub fn write_quantile_path_csv(path: &Path, qp: &crate::flow::QuantilePath) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,index,gamma")?;
    for (ii, &idx) in qp.indices.iter().enumerate() {
        for (ti, &t) in qp.times.iter().enumerate() {
            writeln!(w, "{t},{idx},{}", qp.gamma[ii][ti])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV with a t,x,rho row per (time, grid point) pair.
pub fn write_density_snapshots_csv(
    path: &Path,
    snapshots: &[(f64, crate::measures::Measure1D)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,x,rho")?;
    for (t, mu) in snapshots {
        if let crate::measures::Measure1D::Gridded { grid, values } = mu {
            for (x, v) in grid.iter().zip(values) {
                writeln!(w, "{t},{x},{v}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Generic two-column CSV.
pub fn write_xy_csv(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for (a, b) in rows {
        writeln!(w, "{a},{b}")?;
    }
    w.flush()?;
    Ok(())
}

/// Coupling coefficient export, one row per (t, i, j) with j = -1 for W.
pub fn write_coupling_csv(path: &Path, coeffs: &crate::dbm::CouplingCoefficients) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,i,j,value")?;
    let kk = coeffs.size;
    for (f, t) in coeffs.times.iter().enumerate() {
        for i in 0..kk {
            writeln!(w, "{t},{i},-1,{}", coeffs.w[f][i])?;
            for j in 0..kk {
                if i != j {
                    writeln!(w, "{t},{i},{j},{}", coeffs.b[f][i * kk + j])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
