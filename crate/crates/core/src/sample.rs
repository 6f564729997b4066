//! Irregularly observed multivariate functional data and dense tabulations.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::Real;

/// A single noisy measurement `y` taken at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T> {
    pub t: T,
    pub y: T,
}

impl<T> Observation<T> {
    pub fn new(t: T, y: T) -> Self {
        Self { t, y }
    }
}

/// One subject's observations, one list per feature, each sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject<T> {
    pub id: String,
    pub features: Vec<Vec<Observation<T>>>,
}

/// `N` subjects observed on `P` features at subject-specific times.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample<T> {
    domains: Vec<(T, T)>,
    subjects: Vec<Subject<T>>,
}

impl<T: Real> FunctionalSample<T> {
    /// Validates that every timepoint lies in its feature's domain and sorts
    /// each observation list by time.
    pub fn new(domains: Vec<(T, T)>, mut subjects: Vec<Subject<T>>) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::invalid("sample needs at least one feature"));
        }
        for &(lo, hi) in &domains {
            if !(hi > lo) {
                return Err(Error::invalid("feature domain must be nondegenerate"));
            }
        }
        for s in &mut subjects {
            if s.features.len() != domains.len() {
                return Err(Error::invalid(format!(
                    "subject {} has {} features, expected {}",
                    s.id,
                    s.features.len(),
                    domains.len()
                )));
            }
            for (obs, &(lo, hi)) in s.features.iter_mut().zip(&domains) {
                for o in obs.iter() {
                    if !o.y.is_finite() || !o.t.is_finite() {
                        return Err(Error::invalid(format!(
                            "subject {} has a non-finite observation",
                            s.id
                        )));
                    }
                    if o.t < lo || o.t > hi {
                        return Err(Error::OutOfDomain {
                            value: o.t.as_f64(),
                            lo: lo.as_f64(),
                            hi: hi.as_f64(),
                        });
                    }
                }
                obs.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
            }
        }
        Ok(Self { domains, subjects })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_features(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[(T, T)] {
        &self.domains
    }

    pub fn subjects(&self) -> &[Subject<T>] {
        &self.subjects
    }

    pub fn observations(&self, subject: usize, feature: usize) -> &[Observation<T>] {
        &self.subjects[subject].features[feature]
    }

    /// All observations of one feature, pooled across subjects.
    pub fn pooled(&self, feature: usize) -> Vec<Observation<T>> {
        self.subjects
            .iter()
            .flat_map(|s| s.features[feature].iter().copied())
            .collect()
    }

    /// Copy with every value transformed by `f(subject, feature, obs)`.
    pub fn map_values<F>(&self, mut f: F) -> Self
    where
        F: FnMut(usize, usize, &Observation<T>) -> T,
    {
        let subjects = self
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| Subject {
                id: s.id.clone(),
                features: s
                    .features
                    .iter()
                    .enumerate()
                    .map(|(p, obs)| obs.iter().map(|o| Observation::new(o.t, f(i, p, o))).collect())
                    .collect(),
            })
            .collect();
        Self {
            domains: self.domains.clone(),
            subjects,
        }
    }

    /// True when every subject observes feature `p` on at least `fraction` of
    /// the points of `grid`.
    pub fn is_dense_on(&self, feature: usize, grid: &Grid<T>, fraction: f64) -> bool {
        let need = (fraction * grid.len() as f64).ceil() as usize;
        self.subjects.iter().all(|s| {
            s.features[feature]
                .iter()
                .filter(|o| grid.index_of(o.t).is_some())
                .count()
                >= need
        })
    }
}

impl<T: Real> FunctionalSample<T> {
    /// Each subject's observations linearly interpolated onto `grids`, held
    /// constant beyond the first and last observation.
    pub fn tabulate(&self, grids: &[Grid<T>]) -> Result<DenseCurves<T>> {
        if grids.len() != self.n_features() {
            return Err(Error::invalid("one grid per feature is required"));
        }
        let mut values = Vec::with_capacity(grids.len());
        for (p, grid) in grids.iter().enumerate() {
            let mut m = Array2::zeros((self.n_subjects(), grid.len()));
            for (i, s) in self.subjects.iter().enumerate() {
                let obs = &s.features[p];
                if obs.is_empty() {
                    return Err(Error::invalid(format!(
                        "subject {} has no observations on feature {p}",
                        s.id
                    )));
                }
                for (j, &t) in grid.points().iter().enumerate() {
                    let k = obs.partition_point(|o| o.t < t);
                    m[[i, j]] = if k == 0 {
                        obs[0].y
                    } else if k == obs.len() {
                        obs[k - 1].y
                    } else {
                        let (a, b) = (obs[k - 1], obs[k]);
                        a.y + (b.y - a.y) * (t - a.t) / (b.t - a.t)
                    };
                }
            }
            values.push(m);
        }
        DenseCurves::new(grids.to_vec(), values)
    }
}

/// Curves tabulated on one grid per feature; `values[p]` is `N × G_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCurves<T> {
    pub grids: Vec<Grid<T>>,
    pub values: Vec<Array2<T>>,
}

impl<T: Real> DenseCurves<T> {
    pub fn new(grids: Vec<Grid<T>>, values: Vec<Array2<T>>) -> Result<Self> {
        if grids.len() != values.len() {
            return Err(Error::invalid("one value matrix per feature grid is required"));
        }
        let n = values.first().map_or(0, |v| v.nrows());
        for (g, v) in grids.iter().zip(&values) {
            if v.ncols() != g.len() {
                return Err(Error::invalid(format!(
                    "value matrix has {} columns but grid has {} points",
                    v.ncols(),
                    g.len()
                )));
            }
            if v.nrows() != n {
                return Err(Error::invalid("features disagree on the number of curves"));
            }
        }
        Ok(Self { grids, values })
    }

    pub fn zeros(grids: Vec<Grid<T>>, n_curves: usize) -> Self {
        let values = grids.iter().map(|g| Array2::zeros((n_curves, g.len()))).collect();
        Self { grids, values }
    }

    pub fn n_curves(&self) -> usize {
        self.values.first().map_or(0, |v| v.nrows())
    }

    pub fn n_features(&self) -> usize {
        self.grids.len()
    }

    pub fn curve(&self, subject: usize, feature: usize) -> ArrayView1<'_, T> {
        self.values[feature].row(subject)
    }

    /// Pointwise mean over curves, as a single-curve tabulation.
    pub fn mean_curve(&self) -> Self {
        let values = self
            .values
            .iter()
            .map(|v| {
                let n = T::from_usize_lossy(v.nrows().max(1));
                let row = v.sum_axis(ndarray::Axis(0)).mapv(|x| x / n);
                row.insert_axis(ndarray::Axis(0))
            })
            .collect();
        Self {
            grids: self.grids.clone(),
            values,
        }
    }

    /// Subtracts the single-curve tabulation `mean` from every curve.
    pub fn subtract(&self, mean: &Self) -> Result<Self> {
        self.check_grids(mean)?;
        let values = self
            .values
            .iter()
            .zip(&mean.values)
            .map(|(v, m)| v - &m.row(0))
            .collect();
        Ok(Self {
            grids: self.grids.clone(),
            values,
        })
    }

    /// Adds the single-curve tabulation `mean` to every curve.
    pub fn add(&self, mean: &Self) -> Result<Self> {
        self.check_grids(mean)?;
        let values = self
            .values
            .iter()
            .zip(&mean.values)
            .map(|(v, m)| v + &m.row(0))
            .collect();
        Ok(Self {
            grids: self.grids.clone(),
            values,
        })
    }

    pub(crate) fn check_grids(&self, other: &Self) -> Result<()> {
        if self.grids != other.grids {
            return Err(Error::invalid("curves are tabulated on different grids"));
        }
        Ok(())
    }
}

/// Subtracts the tabulated mean curve of each feature, linearly interpolated
/// at the observation times.
pub fn center<T: Real>(
    sample: &FunctionalSample<T>,
    mean: &DenseCurves<T>,
) -> Result<FunctionalSample<T>> {
    if mean.n_features() != sample.n_features() {
        return Err(Error::invalid(format!(
            "mean has {} features, sample has {}",
            mean.n_features(),
            sample.n_features()
        )));
    }
    if mean.n_curves() != 1 {
        return Err(Error::invalid("mean must be a single curve per feature"));
    }
    let mut err = None;
    let out = sample.map_values(|_, p, o| {
        let m = mean.grids[p]
            .interpolate(mean.values[p].row(0).as_slice().unwrap(), o.t)
            .unwrap_or_else(|e| {
                err.get_or_insert(e);
                T::zero()
            });
        o.y - m
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_uniform_grid;

    fn toy() -> FunctionalSample<f64> {
        let subjects = (0..3)
            .map(|i| Subject {
                id: i.to_string(),
                features: vec![
                    vec![Observation::new(0.5, i as f64), Observation::new(0.1, 1.0)],
                    vec![Observation::new(0.9, -2.0)],
                ],
            })
            .collect();
        FunctionalSample::new(vec![(0.0, 1.0), (0.0, 1.0)], subjects).unwrap()
    }

    fn constant_mean(c: [f64; 2]) -> DenseCurves<f64> {
        let g = make_uniform_grid((0.0, 1.0), 11).unwrap();
        DenseCurves::new(
            vec![g.clone(), g],
            vec![Array2::from_elem((1, 11), c[0]), Array2::from_elem((1, 11), c[1])],
        )
        .unwrap()
    }

    #[test]
    fn observations_sorted_on_construction() {
        let s = toy();
        assert_eq!(s.observations(0, 0)[0].t, 0.1);
        assert_eq!(s.n_subjects(), 3);
        assert_eq!(s.n_features(), 2);
    }

    #[test]
    fn rejects_out_of_domain() {
        let subjects = vec![Subject {
            id: "a".into(),
            features: vec![vec![Observation::new(1.5, 0.0)]],
        }];
        assert!(matches!(
            FunctionalSample::new(vec![(0.0, 1.0)], subjects),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn zero_mean_is_identity() {
        let s = toy();
        assert_eq!(center(&s, &constant_mean([0.0, 0.0])).unwrap(), s);
    }

    #[test]
    fn constant_mean_shifts() {
        let s = toy();
        let c = center(&s, &constant_mean([1.5, -0.5])).unwrap();
        for i in 0..3 {
            for p in 0..2 {
                for (a, b) in s.observations(i, p).iter().zip(c.observations(i, p)) {
                    let shift = if p == 0 { 1.5 } else { -0.5 };
                    assert!((a.y - shift - b.y).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn single_subject_minus_own_mean_is_zero() {
        let g = make_uniform_grid((0.0, 1.0), 21).unwrap();
        let f = |t: f64| (3.0 * t).sin() + t;
        let obs: Vec<_> = g.points().iter().map(|&t| Observation::new(t, f(t))).collect();
        let sample = FunctionalSample::new(
            vec![(0.0, 1.0)],
            vec![Subject { id: "0".into(), features: vec![obs] }],
        )
        .unwrap();
        let tab = Array2::from_shape_fn((1, 21), |(_, j)| f(g.points()[j]));
        let mean = DenseCurves::new(vec![g], vec![tab]).unwrap();
        let c = center(&sample, &mean).unwrap();
        assert!(c.observations(0, 0).iter().all(|o| o.y.abs() < 1e-15));
    }

    #[test]
    fn centering_twice_with_zero_mean_is_idempotent() {
        let s = toy();
        let z = constant_mean([0.0, 0.0]);
        let once = center(&s, &z).unwrap();
        assert_eq!(center(&once, &z).unwrap(), once);
    }

    #[test]
    fn mean_grid_must_cover_sample() {
        let s = toy();
        let g = make_uniform_grid((0.2, 1.0), 5).unwrap();
        let m = DenseCurves::new(
            vec![g.clone(), g],
            vec![Array2::zeros((1, 5)), Array2::zeros((1, 5))],
        )
        .unwrap();
        assert!(matches!(center(&s, &m), Err(Error::OutOfDomain { .. })));
    }
}
