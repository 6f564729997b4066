//! Mean curves and covariance surfaces, with their derivatives, from
//! irregular noisy observations.
//!
//! A feature's covariance is estimated by smoothing the raw within-subject
//! cross-products `y(s)·y(t)` with a tensor-product P-spline. Every subject
//! enters with equal weight per pair, so the smoother targets `E[y(s)y(t)]`
//! directly rather than a sum over subjects. Derivative surfaces are analytic
//! partials of that one fitted spline, which keeps `C`, `∂_s^d C` and
//! `∂_s^d ∂_t^d C` mutually consistent.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::symmetrize;
use crate::pspline::{
    eval_surface_partial, fit_curve_grouped, fit_surface_cells, fit_surface_folds, Cell,
    PSplineFit, Smoothing, SplineConfig, SurfaceCells, SurfaceFit,
};
use crate::sample::{DenseCurves, FunctionalSample, Observation, Subject};
use crate::Real;

/// `∂_s^d ∂_t^d C^{(p,p)}` tabulated on `grid × grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSurface<T> {
    pub feature: usize,
    pub grid: Grid<T>,
    pub values: Array2<T>,
    /// Derivative order applied to each argument.
    pub d: usize,
    /// Measurement-error variance; only meaningful for `d = 0`.
    pub sigma2: T,
}

/// `∂_s^d C^{(p,p)}(s, t) = Cov(∂^d X(s), X(t))` on `grid × grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossOrderSurface<T> {
    pub feature: usize,
    pub grid: Grid<T>,
    pub values: Array2<T>,
    pub d: usize,
}

/// Per-feature P-spline mean fits and their tabulation.
#[derive(Debug, Clone)]
pub struct MeanEstimate<T> {
    pub fits: Vec<PSplineFit<T>>,
    pub curves: DenseCurves<T>,
}

impl<T: Real> MeanEstimate<T> {
    /// `d`-th derivative of the mean, tabulated on the mean's grids.
    pub fn derivative(&self, d: usize) -> Result<DenseCurves<T>> {
        let values = self
            .fits
            .iter()
            .zip(&self.curves.grids)
            .map(|(fit, g)| {
                let v = fit.derivative_at(g.points(), d)?;
                Ok(Array2::from_shape_vec((1, g.len()), v).expect("shape matches grid"))
            })
            .collect::<Result<Vec<_>>>()?;
        DenseCurves::new(self.curves.grids.clone(), values)
    }

    /// Mean value of feature `p` at time `t`, from the spline itself.
    pub fn value_at(&self, p: usize, t: T) -> T {
        self.fits[p].evaluate(t)
    }
}

/// One P-spline per feature over the pooled `(t, y)` pairs, tabulated on
/// `grids`.
pub fn estimate_mean<T: Real>(
    sample: &FunctionalSample<T>,
    grids: &[Grid<T>],
    cfg: &SplineConfig<T>,
) -> Result<MeanEstimate<T>> {
    if grids.len() != sample.n_features() {
        return Err(Error::invalid("one grid per feature is required"));
    }
    let mut fits = Vec::with_capacity(grids.len());
    let mut values = Vec::with_capacity(grids.len());
    for (p, grid) in grids.iter().enumerate() {
        let (lo, hi) = sample.domains()[p];
        let basis = cfg.curve_basis(lo.min(grid.lo()), hi.max(grid.hi()))?;
        let groups: Vec<&[Observation<T>]> = sample.subjects().iter().map(|s| &s.features[p][..]).collect();
        let fit = fit_curve_grouped(&groups, &basis, &cfg.smoothing, cfg.penalty_order, cfg.pooled_folds)?;
        let tab = fit.derivative_at(grid.points(), 0)?;
        values.push(Array2::from_shape_vec((1, grid.len()), tab).expect("shape matches grid"));
        fits.push(fit);
    }
    Ok(MeanEstimate {
        fits,
        curves: DenseCurves::new(grids.to_vec(), values)?,
    })
}

/// All ordered within-subject pairs `(s, t, y(s)·y(t))` of one feature.
/// Pairs of an observation with itself are dropped when `exclude_diagonal`.
pub fn raw_cross_products<T: Real>(
    sample: &FunctionalSample<T>,
    feature: usize,
    exclude_diagonal: bool,
) -> Vec<(T, T, T)> {
    let mut out = Vec::new();
    for s in sample.subjects() {
        let obs = &s.features[feature];
        for (a, oa) in obs.iter().enumerate() {
            for (b, ob) in obs.iter().enumerate() {
                if exclude_diagonal && a == b {
                    continue;
                }
                out.push((oa.t, ob.t, oa.y * ob.y));
            }
        }
    }
    out
}

/// Cross-products binned by unique timepoint pair, without materialising the
/// pair list.
fn binned_cross_products<T: Real>(
    subjects: &[&Subject<T>],
    feature: usize,
    exclude_diagonal: bool,
) -> SurfaceCells<T> {
    let mut times: Vec<T> = subjects
        .iter()
        .flat_map(|s| s.features[feature].iter().map(|o| o.t))
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let u = times.len();
    let index = |t: T| times.partition_point(|&v| v < t);

    if u * u <= 4_000_000 {
        let mut dense = vec![Cell::<T>::default(); u * u];
        for s in subjects {
            let obs = &s.features[feature];
            let idx: Vec<usize> = obs.iter().map(|o| index(o.t)).collect();
            for (a, oa) in obs.iter().enumerate() {
                for (b, ob) in obs.iter().enumerate() {
                    if exclude_diagonal && a == b {
                        continue;
                    }
                    dense[idx[a] * u + idx[b]].push(oa.y * ob.y);
                }
            }
        }
        let cells = dense
            .into_iter()
            .enumerate()
            .filter(|(_, c)| c.count > 0)
            .map(|(k, c)| (k / u, k % u, c))
            .collect();
        SurfaceCells {
            s: times.clone(),
            t: times,
            cells,
        }
    } else {
        let mut points = Vec::new();
        for s in subjects {
            let obs = &s.features[feature];
            for (a, oa) in obs.iter().enumerate() {
                for (b, ob) in obs.iter().enumerate() {
                    if !(exclude_diagonal && a == b) {
                        points.push((oa.t, ob.t, oa.y * ob.y));
                    }
                }
            }
        }
        SurfaceCells::from_points(&points)
    }
}

/// The fitted covariance spline of one feature, from which every tabulated
/// surface is derived.
#[derive(Debug, Clone)]
pub struct CovarianceFit<T> {
    pub feature: usize,
    pub grid: Grid<T>,
    pub surface: SurfaceFit<T>,
    pub sigma2: T,
}

impl<T: Real> CovarianceFit<T> {
    /// `∂_s^d ∂_t^d C` tabulated on the grid, exactly symmetric.
    pub fn derivative_surface(&self, d: usize) -> Result<CovarianceSurface<T>> {
        let mut values = eval_surface_partial(&self.surface, &self.grid, &self.grid, d, d)?;
        symmetrize(&mut values);
        Ok(CovarianceSurface {
            feature: self.feature,
            grid: self.grid.clone(),
            values,
            d,
            sigma2: if d == 0 { self.sigma2 } else { T::zero() },
        })
    }

    /// `∂_s^d C(s, t)` tabulated on the grid.
    pub fn cross_order(&self, d: usize) -> Result<CrossOrderSurface<T>> {
        let values = if d == 0 {
            self.derivative_surface(0)?.values
        } else {
            eval_surface_partial(&self.surface, &self.grid, &self.grid, d, 0)?
        };
        Ok(CrossOrderSurface {
            feature: self.feature,
            grid: self.grid.clone(),
            values,
            d,
        })
    }
}

/// Fits the covariance spline of `feature` on a centred sample.
///
/// With `assume_noise`, pairs of an observation with itself are excluded
/// (their expectation carries the extra `σ²`) and `σ²` is estimated from the
/// gap between the raw squares and the smoothed diagonal. Otherwise `σ² = 0`
/// and the diagonal is used.
pub fn fit_covariance<T: Real>(
    sample: &FunctionalSample<T>,
    feature: usize,
    grid: &Grid<T>,
    cfg: &SplineConfig<T>,
    assume_noise: bool,
) -> Result<CovarianceFit<T>> {
    if feature >= sample.n_features() {
        return Err(Error::invalid(format!("feature {feature} out of range")));
    }
    let (lo, hi) = sample.domains()[feature];
    let basis = cfg.surface_basis(lo.min(grid.lo()), hi.max(grid.hi()))?;
    let subjects: Vec<&Subject<T>> = sample.subjects().iter().collect();
    let cells = binned_cross_products(&subjects, feature, assume_noise);
    if cells.cells.is_empty() {
        return Err(Error::ill_posed(format!(
            "feature {feature} has no within-subject pairs to smooth"
        )));
    }
    let folds = cfg.pooled_folds;
    let mut surface = match &cfg.smoothing {
        Smoothing::Gcv(grid) if folds >= 2 && subjects.len() >= folds => {
            let parts: Vec<SurfaceCells<T>> = (0..folds)
                .map(|f| {
                    let members: Vec<&Subject<T>> =
                        subjects.iter().skip(f).step_by(folds).copied().collect();
                    binned_cross_products(&members, feature, assume_noise)
                })
                .collect();
            fit_surface_folds(&parts, &basis, &basis, grid, cfg.penalty_order)?
        }
        _ => fit_surface_cells(&cells, &basis, &basis, &cfg.smoothing, cfg.penalty_order)?,
    };
    symmetrize(&mut surface.coefficients);

    let sigma2 = if assume_noise {
        let mut gap = T::zero();
        let mut count = 0usize;
        for s in sample.subjects() {
            for o in &s.features[feature] {
                gap += o.y * o.y - surface.evaluate(o.t, o.t);
                count += 1;
            }
        }
        if count == 0 {
            T::zero()
        } else {
            (gap / T::from_usize_lossy(count)).max(T::zero())
        }
    } else {
        T::zero()
    };
    Ok(CovarianceFit {
        feature,
        grid: grid.clone(),
        surface,
        sigma2,
    })
}

/// `∂_s^d ∂_t^d Ĉ^{(p,p)}` on `grid × grid` from a centred sample.
pub fn estimate_covariance<T: Real>(
    sample: &FunctionalSample<T>,
    feature: usize,
    grid: &Grid<T>,
    cfg: &SplineConfig<T>,
    d: usize,
) -> Result<CovarianceSurface<T>> {
    fit_covariance(sample, feature, grid, cfg, true)?.derivative_surface(d)
}

/// `∂_s^d Ĉ^{(p,p)}(s, t)` on `grid × grid` from a centred sample.
pub fn estimate_cross_order<T: Real>(
    sample: &FunctionalSample<T>,
    feature: usize,
    grid: &Grid<T>,
    cfg: &SplineConfig<T>,
    d: usize,
) -> Result<CrossOrderSurface<T>> {
    fit_covariance(sample, feature, grid, cfg, true)?.cross_order(d)
}

/// Measurement-error variance of `feature` from a centred sample.
pub fn estimate_sigma2<T: Real>(
    sample: &FunctionalSample<T>,
    feature: usize,
    grid: &Grid<T>,
    cfg: &SplineConfig<T>,
) -> Result<T> {
    Ok(fit_covariance(sample, feature, grid, cfg, true)?.sigma2)
}
