//! CSV long-format readers and writers.
//!
//! Samples use `id,feature,t,y`, dense curves `id,feature,t,value`,
//! eigenfunctions `feature,k,t,value`, eigenvalues `k,value` and scores
//! `id,k,value`. Features and components are 1-based. Numbers are written
//! with 17 significant digits so `f64` values survive a round trip exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mfpca::MultivariateEigenSystem;
use crate::sample::{DenseCurves, FunctionalSample, Observation, Subject};
use crate::Real;

/// Formats a scalar with 17 significant digits.
pub fn format_value<T: Real>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

fn data(row: usize, message: impl Into<String>) -> Error {
    Error::Data {
        row,
        message: message.into(),
    }
}

/// Reads every record after checking the header; yields `(line, fields)`.
fn records<R: Read>(reader: R, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(data(1, format!("expected header `{}`, found `{}`", header.join(","), found.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            data(row, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn parse_real<T: Real>(row: usize, name: &str, s: &str) -> Result<T> {
    let v: f64 = s
        .parse()
        .map_err(|_| data(row, format!("column `{name}` is not a number: `{s}`")))?;
    if !v.is_finite() {
        return Err(data(row, format!("column `{name}` is not finite")));
    }
    T::from_f64(v).ok_or_else(|| data(row, format!("column `{name}` does not fit the scalar type")))
}

fn parse_index(row: usize, name: &str, s: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v - 1),
        _ => Err(data(row, format!("column `{name}` must be a positive integer, found `{s}`"))),
    }
}

/// Integer-like ids sort numerically, anything else lexically.
fn sort_ids(ids: &mut [String]) {
    if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<i64>().unwrap());
    } else {
        ids.sort();
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Reads a long-format sample. Rows may come in any order; subjects are
/// sorted by id and observations by time. Without `domains`, each feature's
/// domain is the range of its observed times.
pub fn read_sample<T: Real, R: Read>(reader: R, domains: Option<&[(T, T)]>) -> Result<FunctionalSample<T>> {
    let rows = records(reader, &["id", "feature", "t", "y"])?;
    if rows.is_empty() {
        return Err(data(1, "sample has no observations"));
    }
    let mut by_id: BTreeMap<String, Vec<(usize, Observation<T>)>> = BTreeMap::new();
    let mut n_features = 0;
    for (line, f) in &rows {
        let (id, feature) = (f[0].clone(), parse_index(*line, "feature", &f[1])?);
        if id.is_empty() {
            return Err(data(*line, "empty id"));
        }
        let obs = Observation::new(parse_real(*line, "t", &f[2])?, parse_real(*line, "y", &f[3])?);
        if let Some(d) = domains {
            let &(lo, hi) = d.get(feature).ok_or_else(|| {
                data(*line, format!("feature {} has no declared domain", feature + 1))
            })?;
            if obs.t < lo || obs.t > hi {
                return Err(data(*line, format!("t = {} lies outside [{lo}, {hi}]", obs.t)));
            }
        }
        n_features = n_features.max(feature + 1);
        by_id.entry(id).or_default().push((feature, obs));
    }
    let domains = match domains {
        Some(d) => d.to_vec(),
        None => {
            let mut d = vec![(T::infinity(), T::neg_infinity()); n_features];
            for obs in by_id.values().flatten() {
                let e = &mut d[obs.0];
                *e = (e.0.min(obs.1.t), e.1.max(obs.1.t));
            }
            for (p, e) in d.iter().enumerate() {
                if !(e.1 > e.0) {
                    return Err(data(1, format!("cannot infer a domain for feature {}", p + 1)));
                }
            }
            d
        }
    };
    let mut ids: Vec<String> = by_id.keys().cloned().collect();
    sort_ids(&mut ids);
    let subjects = ids
        .into_iter()
        .map(|id| {
            let mut features = vec![Vec::new(); domains.len()];
            for &(p, o) in &by_id[&id] {
                features[p].push(o);
            }
            Subject { id, features }
        })
        .collect();
    FunctionalSample::new(domains, subjects)
}

pub fn read_sample_path<T: Real>(path: &Path, domains: Option<&[(T, T)]>) -> Result<FunctionalSample<T>> {
    read_sample(open(path)?, domains)
}

pub fn write_sample<T: Real, W: Write>(sample: &FunctionalSample<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "feature", "t", "y"])?;
    for s in sample.subjects() {
        for (p, obs) in s.features.iter().enumerate() {
            for o in obs {
                w.write_record([s.id.clone(), (p + 1).to_string(), format_value(o.t), format_value(o.y)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sample_path<T: Real>(sample: &FunctionalSample<T>, path: &Path) -> Result<()> {
    write_sample(sample, create(path)?)
}

/// Writes dense curves, one row per subject, feature and grid point.
pub fn write_curves<T: Real, W: Write>(ids: &[String], curves: &DenseCurves<T>, writer: W) -> Result<()> {
    if ids.len() != curves.n_curves() {
        return Err(Error::invalid(format!("{} ids for {} curves", ids.len(), curves.n_curves())));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "feature", "t", "value"])?;
    for (i, id) in ids.iter().enumerate() {
        for (p, g) in curves.grids.iter().enumerate() {
            for (j, &t) in g.points().iter().enumerate() {
                w.write_record([id.clone(), (p + 1).to_string(), format_value(t), format_value(curves.values[p][[i, j]])])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves_path<T: Real>(ids: &[String], curves: &DenseCurves<T>, path: &Path) -> Result<()> {
    write_curves(ids, curves, create(path)?)
}

/// Grids and `rows × G_p` matrices from `(row key, feature, t, value)` triples
/// that must share one time grid per feature.
fn tabulate_rows<T: Real>(
    entries: BTreeMap<(usize, usize), Vec<(usize, T, T)>>,
    n_rows: usize,
    row_name: &str,
) -> Result<(Vec<Grid<T>>, Vec<Array2<T>>)> {
    let n_features = entries.keys().map(|k| k.1 + 1).max().unwrap_or(0);
    let mut grids = Vec::with_capacity(n_features);
    let mut values = Vec::with_capacity(n_features);
    for p in 0..n_features {
        let mut reference: Option<Vec<T>> = None;
        let mut matrix: Option<Array2<T>> = None;
        for r in 0..n_rows {
            let mut pts = entries.get(&(r, p)).cloned().ok_or_else(|| {
                data(1, format!("{row_name} {} has no values for feature {}", r + 1, p + 1))
            })?;
            pts.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let ts: Vec<T> = pts.iter().map(|x| x.1).collect();
            match &reference {
                None => reference = Some(ts.clone()),
                Some(g) if *g != ts => {
                    return Err(data(pts[0].0, format!("feature {} is not tabulated on one shared grid", p + 1)));
                }
                _ => {}
            }
            let m = matrix.get_or_insert_with(|| Array2::zeros((n_rows, ts.len())));
            for (j, x) in pts.iter().enumerate() {
                m[[r, j]] = x.2;
            }
        }
        let g = reference.unwrap_or_default();
        let first_line = entries.get(&(0, p)).map_or(1, |v| v[0].0);
        grids.push(Grid::new(g).map_err(|e| data(first_line, format!("feature {}: {e}", p + 1)))?);
        values.push(matrix.unwrap_or_else(|| Array2::zeros((0, 0))));
    }
    Ok((grids, values))
}

/// Reads dense curves; returns subject ids in sorted order with the curves.
pub fn read_curves<T: Real, R: Read>(reader: R) -> Result<(Vec<String>, DenseCurves<T>)> {
    let rows = records(reader, &["id", "feature", "t", "value"])?;
    if rows.is_empty() {
        return Err(data(1, "file has no rows"));
    }
    let mut ids: Vec<String> = rows.iter().map(|r| r.1[0].clone()).collect();
    sort_ids(&mut ids);
    ids.dedup();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut entries: BTreeMap<(usize, usize), Vec<(usize, T, T)>> = BTreeMap::new();
    for (line, f) in &rows {
        let p = parse_index(*line, "feature", &f[1])?;
        let t = parse_real(*line, "t", &f[2])?;
        let v = parse_real(*line, "value", &f[3])?;
        entries.entry((index[f[0].as_str()], p)).or_default().push((*line, t, v));
    }
    let (grids, values) = tabulate_rows(entries, ids.len(), "subject")?;
    Ok((ids, DenseCurves::new(grids, values)?))
}

pub fn read_curves_path<T: Real>(path: &Path) -> Result<(Vec<String>, DenseCurves<T>)> {
    read_curves(open(path)?)
}

pub fn write_eigenvalues<T: Real, W: Write>(values: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "value"])?;
    for (k, &v) in values.iter().enumerate() {
        w.write_record([(k + 1).to_string(), format_value(v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_eigenvalues_path<T: Real>(values: &[T], path: &Path) -> Result<()> {
    write_eigenvalues(values, create(path)?)
}

pub fn read_eigenvalues<T: Real, R: Read>(reader: R) -> Result<Vec<T>> {
    let rows = records(reader, &["k", "value"])?;
    let mut out: Vec<Option<T>> = vec![None; rows.len()];
    for (line, f) in &rows {
        let k = parse_index(*line, "k", &f[0])?;
        let slot = out.get_mut(k).ok_or_else(|| data(*line, format!("component {} out of sequence", k + 1)))?;
        if slot.replace(parse_real(*line, "value", &f[1])?).is_some() {
            return Err(data(*line, format!("component {} listed twice", k + 1)));
        }
    }
    Ok(out.into_iter().map(|v| v.expect("each slot filled once")).collect())
}

pub fn read_eigenvalues_path<T: Real>(path: &Path) -> Result<Vec<T>> {
    read_eigenvalues(open(path)?)
}

pub fn write_eigenfunctions<T: Real, W: Write>(eig: &MultivariateEigenSystem<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "k", "t", "value"])?;
    for (p, (f, g)) in eig.eigenfunctions.iter().zip(&eig.grids).enumerate() {
        for k in 0..f.nrows() {
            for (j, &t) in g.points().iter().enumerate() {
                w.write_record([(p + 1).to_string(), (k + 1).to_string(), format_value(t), format_value(f[[k, j]])])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_eigenfunctions_path<T: Real>(eig: &MultivariateEigenSystem<T>, path: &Path) -> Result<()> {
    write_eigenfunctions(eig, create(path)?)
}

/// Per-feature grids and `K × G_p` eigenfunction matrices.
pub fn read_eigenfunctions<T: Real, R: Read>(reader: R) -> Result<(Vec<Grid<T>>, Vec<Array2<T>>)> {
    let rows = records(reader, &["feature", "k", "t", "value"])?;
    if rows.is_empty() {
        return Err(data(1, "file has no rows"));
    }
    let mut entries: BTreeMap<(usize, usize), Vec<(usize, T, T)>> = BTreeMap::new();
    let mut n_components = 0;
    for (line, f) in &rows {
        let p = parse_index(*line, "feature", &f[0])?;
        let k = parse_index(*line, "k", &f[1])?;
        n_components = n_components.max(k + 1);
        let t = parse_real(*line, "t", &f[2])?;
        let v = parse_real(*line, "value", &f[3])?;
        entries.entry((k, p)).or_default().push((*line, t, v));
    }
    tabulate_rows(entries, n_components, "component")
}

pub fn read_eigenfunctions_path<T: Real>(path: &Path) -> Result<(Vec<Grid<T>>, Vec<Array2<T>>)> {
    read_eigenfunctions(open(path)?)
}

pub fn write_scores<T: Real, W: Write>(ids: &[String], scores: &Array2<T>, writer: W) -> Result<()> {
    if ids.len() != scores.nrows() {
        return Err(Error::invalid(format!("{} ids for {} score rows", ids.len(), scores.nrows())));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "k", "value"])?;
    for (i, id) in ids.iter().enumerate() {
        for k in 0..scores.ncols() {
            w.write_record([id.clone(), (k + 1).to_string(), format_value(scores[[i, k]])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores_path<T: Real>(ids: &[String], scores: &Array2<T>, path: &Path) -> Result<()> {
    write_scores(ids, scores, create(path)?)
}
