//! Reading and writing the eigen and curve files shared by `simulate`, `fit`
//! and `metrics`.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use dmfpca::io::{format_value, read_curves_path, read_eigenfunctions_path, read_eigenvalues_path};
use dmfpca::mfpca::MultivariateEigenSystem;
use dmfpca::ndarray::Array2;
use dmfpca::{DenseCurves, Grid};

use crate::failure::{Failure, Outcome};

pub const TRUTH_EIGEN: &str = "truth_eigen.csv";
pub const TRUTH_DERIVS: &str = "truth_derivs.csv";
pub const EIGENVALUES: &str = "eigenvalues.csv";
pub const EIGENFUNCTIONS: &str = "eigenfunctions.csv";
pub const RECONSTRUCTION: &str = "reconstruction.csv";

/// Eigenvalues, grids and `K × G_p` eigenfunctions.
pub struct EigenFiles {
    pub values: Vec<f64>,
    pub grids: Vec<Grid<f64>>,
    pub functions: Vec<Array2<f64>>,
}

/// `k,eigenvalue,feature,t,value`: eigenvalues and eigenfunctions in one file.
pub fn write_truth_eigen(eig: &MultivariateEigenSystem<f64>, path: &Path) -> Outcome {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["k", "eigenvalue", "feature", "t", "value"])?;
    for k in 0..eig.n_components() {
        for (p, (f, g)) in eig.eigenfunctions.iter().zip(&eig.grids).enumerate() {
            for (j, &t) in g.points().iter().enumerate() {
                w.write_record([
                    (k + 1).to_string(),
                    format_value(eig.eigenvalues[k]),
                    (p + 1).to_string(),
                    format_value(t),
                    format_value(f[[k, j]]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_truth_eigen(path: &Path) -> Outcome<EigenFiles> {
    // split into the two single-purpose formats the library reads
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != ["k", "eigenvalue", "feature", "t", "value"] {
        return Err(Failure::Data {
            message: format!("{}: unexpected header `{}`", path.display(), header.join(",")),
            row: Some(1),
        });
    }
    let mut values: BTreeMap<usize, String> = BTreeMap::new();
    let mut functions = String::from("feature,k,t,value\n");
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 5 {
            let row = rec.position().map(|p| p.line() as usize);
            return Err(Failure::Data { message: format!("{}: expected 5 columns", path.display()), row });
        }
        let k: usize = rec[0].parse().map_err(|_| Failure::Data {
            message: format!("{}: bad component `{}`", path.display(), &rec[0]),
            row: rec.position().map(|p| p.line() as usize),
        })?;
        values.entry(k).or_insert_with(|| rec[1].to_string());
        functions.push_str(&format!("{},{},{},{}\n", &rec[2], &rec[0], &rec[3], &rec[4]));
    }
    let mut ev = String::from("k,value\n");
    for (k, v) in &values {
        ev.push_str(&format!("{k},{v}\n"));
    }
    let values = dmfpca::io::read_eigenvalues(ev.as_bytes())?;
    let (grids, functions) = dmfpca::io::read_eigenfunctions(functions.as_bytes())?;
    Ok(EigenFiles { values, grids, functions })
}

fn first_existing(dir: &Path, names: &[&str]) -> Outcome<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| Failure::data(format!("{} contains none of {}", dir.display(), names.join(", "))))
}

/// Eigen files of a `fit` output directory, or the truth of a `simulate` one.
pub fn load_eigen(dir: &Path) -> Outcome<(PathBuf, EigenFiles)> {
    let path = first_existing(dir, &[EIGENVALUES, TRUTH_EIGEN])?;
    if path.ends_with(TRUTH_EIGEN) {
        return Ok((path.clone(), read_truth_eigen(&path)?));
    }
    let values = read_eigenvalues_path(&path)?;
    let (grids, functions) = read_eigenfunctions_path(&dir.join(EIGENFUNCTIONS))?;
    Ok((path, EigenFiles { values, grids, functions }))
}

/// Reconstructed derivatives of a `fit` directory, or the true ones.
pub fn load_curves(dir: &Path) -> Outcome<(PathBuf, Vec<String>, DenseCurves<f64>)> {
    let path = first_existing(dir, &[RECONSTRUCTION, TRUTH_DERIVS])?;
    let (ids, curves) = read_curves_path(&path)?;
    Ok((path, ids, curves))
}
