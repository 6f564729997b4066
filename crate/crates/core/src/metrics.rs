//! Accuracy of estimated eigencomponents and reconstructed curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::sample::DenseCurves;
use crate::Real;
use ndarray::Array2;

/// Which measure a [`MetricRow`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "RE")]
    Re,
    #[serde(rename = "ISE")]
    Ise,
    #[serde(rename = "RMISE")]
    Rmise,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Re => "RE",
            Metric::Ise => "ISE",
            Metric::Rmise => "RMISE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "RE" => Some(Metric::Re),
            "ISE" => Some(Metric::Ise),
            "RMISE" => Some(Metric::Rmise),
            _ => None,
        }
    }
}

/// One metric value; `component` is 1-based and absent for RMISE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: Metric,
    pub component: Option<usize>,
    pub value: f64,
}

/// Relative errors `|ν_k − ν̂_k| / ν_k`, matched by rank.
pub fn re<T: Real>(truth: &[T], estimate: &[T]) -> Result<Vec<T>> {
    if truth.len() != estimate.len() {
        return Err(Error::invalid(format!(
            "{} true eigenvalues but {} estimates",
            truth.len(),
            estimate.len()
        )));
    }
    truth
        .iter()
        .zip(estimate)
        .map(|(&v, &e)| {
            if !(v > T::zero()) {
                return Err(Error::invalid("true eigenvalues must be positive"));
            }
            Ok((v - e).abs() / v)
        })
        .collect()
}

/// Integrated squared error per component, summed over features, after
/// choosing the sign of each estimate that minimises it.
///
/// `truth[p]` and `estimate[p]` are `K × G_p` on `grids[p]`.
pub fn ise<T: Real>(truth: &[Array2<T>], estimate: &[Array2<T>], grids: &[Grid<T>]) -> Result<Vec<T>> {
    if truth.len() != grids.len() || estimate.len() != grids.len() {
        return Err(Error::invalid("one eigenfunction matrix per feature grid is required"));
    }
    let k = truth.first().map_or(0, |m| m.nrows());
    for ((a, b), g) in truth.iter().zip(estimate).zip(grids) {
        if a.ncols() != g.len() || b.ncols() != g.len() {
            return Err(Error::invalid("eigenfunctions are not tabulated on the given grids"));
        }
        if a.nrows() != k || b.nrows() < k {
            return Err(Error::invalid("estimate has fewer components than the truth"));
        }
    }
    Ok((0..k)
        .map(|c| {
            let (mut plus, mut minus) = (T::zero(), T::zero());
            for ((a, b), g) in truth.iter().zip(estimate).zip(grids) {
                for (j, &w) in g.weights().iter().enumerate() {
                    let (x, y) = (a[[c, j]], b[[c, j]]);
                    plus += w * (x - y) * (x - y);
                    minus += w * (x + y) * (x + y);
                }
            }
            plus.min(minus)
        })
        .collect())
}

/// Relative mean integrated squared error, averaged over features.
pub fn rmise<T: Real>(truth: &DenseCurves<T>, estimate: &DenseCurves<T>) -> Result<T> {
    truth.check_grids(estimate)?;
    if truth.n_curves() != estimate.n_curves() {
        return Err(Error::invalid(format!(
            "{} true curves but {} estimates",
            truth.n_curves(),
            estimate.n_curves()
        )));
    }
    let mut acc = T::zero();
    for (p, g) in truth.grids.iter().enumerate() {
        let (mut num, mut den) = (T::zero(), T::zero());
        for (x, y) in truth.values[p].rows().into_iter().zip(estimate.values[p].rows()) {
            for (j, &w) in g.weights().iter().enumerate() {
                num += w * (x[j] - y[j]) * (x[j] - y[j]);
                den += w * x[j] * x[j];
            }
        }
        if !(den > T::zero()) {
            return Err(Error::UndefinedMetric(format!("feature {p} has zero energy")));
        }
        acc += num / den;
    }
    Ok(acc / T::from_usize_lossy(truth.n_features()))
}
