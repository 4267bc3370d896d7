//! Fit persistence: plain-text matrices plus a JSON manifest.
//!
//! Matrices are written one row per line with `%.17e` entries, which
//! round-trips every f64 bit-exactly, so a reloaded fit re-evaluates to
//! identical metrics.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorEstimate;
use crate::panel::Standardization;
use crate::pipeline::{FitConfig, FitFlags, QcfFit};
use crate::sieve::SieveBasis;

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: FitConfig,
    d: usize,
    t: usize,
    basis_len: usize,
    period_keys: Vec<String>,
    eigenvalues: Vec<f64>,
    recovery_degree: Vec<usize>,
    b_recovered: Vec<f64>,
    flags: FitFlags,
    standardization: Option<Standardization>,
    seed: Option<u64>,
    files: ManifestFiles,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFiles {
    factors: String,
    gamma: String,
    theta: String,
    b: String,
    psi: String,
}

pub fn write_matrix(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{:.17e}", matrix[[i, j]]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            row.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: line_no as u64 + 1,
                msg: format!("bad matrix entry '{tok}'"),
            })?);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: line_no as u64 + 1,
                    msg: "ragged matrix rows".into(),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "matrix file {} is empty",
            path.display()
        )));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(Array2::from_shape_fn((nr, nc), |(i, j)| rows[i][j]))
}

/// Write the full fit state under `dir` (created if missing).
pub fn save_fit(
    dir: &Path,
    fit: &QcfFit,
    standardization: Option<&Standardization>,
    seed: Option<u64>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let files = ManifestFiles {
        factors: "factors.txt".into(),
        gamma: "gamma.txt".into(),
        theta: "theta.txt".into(),
        b: "b.txt".into(),
        psi: "psi.txt".into(),
    };
    write_matrix(&dir.join(&files.factors), &fit.factors.factors)?;
    write_matrix(&dir.join(&files.gamma), &fit.factors.gamma)?;
    write_matrix(&dir.join(&files.theta), &fit.thetas)?;
    write_matrix(&dir.join(&files.b), &fit.b)?;
    write_matrix(&dir.join(&files.psi), &fit.psi)?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: fit.config,
        d: fit.dim(),
        t: fit.n_periods(),
        basis_len: fit.basis.len(),
        period_keys: fit.period_keys.clone(),
        eigenvalues: fit.factors.eigenvalues.clone(),
        recovery_degree: fit.recovery_degree.clone(),
        b_recovered: fit.b_recovered.clone(),
        flags: fit.flags.clone(),
        standardization: standardization.cloned(),
        seed,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Reload a saved fit. Returns the fit and any recorded standardization.
pub fn load_fit(dir: &Path) -> Result<(QcfFit, Option<Standardization>)> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::InvalidInput(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let factors = read_matrix(&dir.join(&manifest.files.factors))?;
    let gamma = read_matrix(&dir.join(&manifest.files.gamma))?;
    let thetas = read_matrix(&dir.join(&manifest.files.theta))?;
    let b = read_matrix(&dir.join(&manifest.files.b))?;
    let psi = read_matrix(&dir.join(&manifest.files.psi))?;

    let basis = SieveBasis::new(manifest.config.m, manifest.d)?;
    if basis.len() != manifest.basis_len
        || factors.dim() != (manifest.t, manifest.config.r)
        || gamma.dim() != (manifest.basis_len, manifest.config.r)
        || thetas.dim() != (manifest.d, manifest.config.r)
        || b.dim() != (manifest.config.m, manifest.config.r)
        || psi.dim() != (manifest.t, manifest.basis_len)
    {
        return Err(Error::InvalidInput(
            "saved matrices do not match the manifest dimensions".into(),
        ));
    }
    let fit = QcfFit {
        config: manifest.config,
        basis,
        psi,
        factors: FactorEstimate {
            factors,
            gamma,
            eigenvalues: manifest.eigenvalues,
            rank_deficient: manifest.flags.rank_deficient,
            near_tied: manifest.flags.near_tied,
            sign_unidentified: manifest.flags.sign_unidentified.clone(),
        },
        thetas,
        b,
        b_recovered: manifest.b_recovered,
        recovery_degree: manifest.recovery_degree,
        period_keys: manifest.period_keys,
        flags: manifest.flags,
    };
    Ok((fit, manifest.standardization))
}
