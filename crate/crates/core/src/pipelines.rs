//! End-to-end estimators of the eigencomponents of `∂^d X` and the
//! reconstructions built from them.
//!
//! Every pipeline estimates a P-spline mean per feature, centres the sample,
//! and adds the `d`-th derivative of that mean back onto its reconstructions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{estimate_mean, fit_covariance, MeanEstimate};
use crate::error::{Error, Result, Stage, StageExt};
use crate::grid::Grid;
use crate::mfpca::{combine, dense_mfpca, reconstruct, MultivariateEigenSystem, MultivariateScores};
use crate::pspline::{fit_curve_with, select_common_lambda, Smoothing, SplineConfig};
use crate::sample::{center, DenseCurves, FunctionalSample, Observation};
use crate::ufpca::{
    eigendecompose, eigendecompose_kernel, empirical_covariance, scores_by_blup,
    scores_by_integration, ComponentSelector, UnivariateEigenSystem, UnivariateScores,
};
use crate::Real;

/// Which estimator produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain MFPCA of the data itself (`d = 0`).
    Mfpca,
    Dmfpca,
    Dmkl,
    Direct,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mfpca => "mfpca",
            Method::Dmfpca => "dmfpca",
            Method::Dmkl => "dmkl",
            Method::Direct => "direct",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mfpca" => Ok(Method::Mfpca),
            "dmfpca" => Ok(Method::Dmfpca),
            "dmkl" => Ok(Method::Dmkl),
            "direct" => Ok(Method::Direct),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// How univariate scores are predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    /// Quadrature projection of curves tabulated from the observations.
    /// Only possible for `d = 0`.
    Integration,
    Blup,
    /// Integration when `d = 0` and every subject covers at least 80% of the
    /// grid, BLUP otherwise.
    #[default]
    Auto,
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "integration" => Ok(ScoreMethod::Integration),
            "blup" => Ok(ScoreMethod::Blup),
            "auto" => Ok(ScoreMethod::Auto),
            other => Err(Error::invalid(format!("unknown score method `{other}`"))),
        }
    }
}

/// Coverage above which [`ScoreMethod::Auto`] integrates instead of
/// predicting.
pub const DENSE_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig<T> {
    /// Derivative order.
    pub d: usize,
    /// Number of multivariate components.
    pub k: usize,
    pub selector: ComponentSelector,
    pub spline: SplineConfig<T>,
    pub scores: ScoreMethod,
    /// Points of the uniform evaluation grid of every feature.
    pub grid_points: usize,
    /// Treat observations as noisy: drop the diagonal when smoothing
    /// covariances and estimate `σ²`.
    pub assume_noise: bool,
}

impl<T: Real> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            d: 1,
            k: 3,
            selector: ComponentSelector::default(),
            spline: SplineConfig::default(),
            scores: ScoreMethod::Auto,
            grid_points: 101,
            assume_noise: true,
        }
    }
}

impl<T: Real> FitConfig<T> {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if self.d > self.spline.degree {
            return Err(Error::invalid(format!(
                "derivative order {} exceeds spline degree {}",
                self.d, self.spline.degree
            )));
        }
        if self.grid_points < 3 {
            return Err(Error::invalid("evaluation grids need at least 3 points"));
        }
        Ok(())
    }
}

/// Per-feature diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub feature: usize,
    pub mean_lambda: f64,
    pub covariance_lambda: Option<f64>,
    pub sigma2: Option<f64>,
    pub n_components: usize,
    pub univariate_pve: f64,
    pub clipped_mass: f64,
    pub score_method: String,
    pub ridged_subjects: usize,
}

/// What a fit chose and observed along the way.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub d: usize,
    pub k: usize,
    pub grid_points: usize,
    pub features: Vec<FeatureReport>,
    /// Cumulative proportion of variance explained by the kept components.
    pub pve: Vec<f64>,
    /// Subjects that could not be smoothed individually (direct method).
    pub excluded_subjects: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub method: Method,
    pub eigen: MultivariateEigenSystem<T>,
    pub scores: MultivariateScores<T>,
    /// `∂^d X̂_i` including the mean derivative.
    pub reconstruction: DenseCurves<T>,
    pub mean_derivative: DenseCurves<T>,
    pub report: RunReport,
}

struct Prepared<T> {
    grids: Vec<Grid<T>>,
    mean: MeanEstimate<T>,
    centred: FunctionalSample<T>,
}

fn prepare<T: Real>(sample: &FunctionalSample<T>, cfg: &FitConfig<T>, report: &mut RunReport) -> Result<Prepared<T>> {
    let start = Instant::now();
    let grids = sample
        .domains()
        .iter()
        .map(|&(lo, hi)| Grid::uniform(lo, hi, cfg.grid_points))
        .collect::<Result<Vec<_>>>()?;
    let mean = estimate_mean(sample, &grids, &cfg.spline).stage(Stage::Mean)?;
    let centred = center(sample, &mean.curves).stage(Stage::Mean)?;
    report.features = mean
        .fits
        .iter()
        .enumerate()
        .map(|(p, f)| FeatureReport {
            feature: p,
            mean_lambda: f.lambda.as_f64(),
            ..FeatureReport::default()
        })
        .collect();
    report.timings.insert("mean".into(), start.elapsed().as_secs_f64());
    Ok(Prepared { grids, mean, centred })
}

fn new_report<T: Real>(method: Method, d: usize, cfg: &FitConfig<T>) -> RunReport {
    RunReport {
        method: method.as_str().into(),
        d,
        k: cfg.k,
        grid_points: cfg.grid_points,
        ..RunReport::default()
    }
}

fn finish<T: Real>(
    method: Method,
    prep: &Prepared<T>,
    d: usize,
    eigen: MultivariateEigenSystem<T>,
    scores: MultivariateScores<T>,
    offset: Option<&DenseCurves<T>>,
    mut report: RunReport,
) -> Result<FitResult<T>> {
    let start = Instant::now();
    let mut mean_derivative = prep.mean.derivative(d).stage(Stage::Reconstruct)?;
    if let Some(extra) = offset {
        mean_derivative = mean_derivative.add(extra).stage(Stage::Reconstruct)?;
    }
    let reconstruction = reconstruct(&eigen, &scores, eigen.n_components())
        .and_then(|r| r.add(&mean_derivative))
        .stage(Stage::Reconstruct)?;
    report.pve = crate::mfpca::pve(&eigen)
        .map(|v| v.iter().map(|x| x.as_f64()).collect())
        .unwrap_or_default();
    report.timings.insert("reconstruct".into(), start.elapsed().as_secs_f64());
    Ok(FitResult {
        method,
        eigen,
        scores,
        reconstruction,
        mean_derivative,
        report,
    })
}

fn record_univariate<T: Real>(report: &mut RunReport, eig: &UnivariateEigenSystem<T>) {
    let f = &mut report.features[eig.feature];
    f.n_components = eig.n_components();
    f.univariate_pve = eig.pve.as_f64();
    f.clipped_mass = eig.clipped_mass.as_f64();
}

/// Covariance-based route shared by MFPCA and DMFPCA.
fn covariance_route<T: Real>(
    method: Method,
    sample: &FunctionalSample<T>,
    cfg: &FitConfig<T>,
    d: usize,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    let mut report = new_report(method, d, cfg);
    let prep = prepare(sample, cfg, &mut report)?;
    let (eigen, scores) = covariance_stage(&prep, cfg, d, &mut report)?;
    finish(method, &prep, d, eigen, scores, None, report)
}

fn covariance_stage<T: Real>(
    prep: &Prepared<T>,
    cfg: &FitConfig<T>,
    d: usize,
    report: &mut RunReport,
) -> Result<(MultivariateEigenSystem<T>, MultivariateScores<T>)> {
    if cfg.scores == ScoreMethod::Integration && d > 0 {
        return Err(Error::invalid(
            "integration scores need observed derivatives; use blup or auto for d > 0",
        ));
    }
    let start = Instant::now();

    let tabulated = if d == 0 && cfg.scores != ScoreMethod::Blup {
        Some(prep.centred.tabulate(&prep.grids).stage(Stage::Scores)?)
    } else {
        None
    };
    struct PerFeature<T> {
        eig: UnivariateEigenSystem<T>,
        scores: UnivariateScores<T>,
        lambda: f64,
        sigma2: f64,
        method: &'static str,
    }
    let per_feature = (0..prep.centred.n_features())
        .into_par_iter()
        .map(|p| -> Result<PerFeature<T>> {
            let grid = &prep.grids[p];
            let fit = fit_covariance(&prep.centred, p, grid, &cfg.spline, cfg.assume_noise)
                .stage(Stage::Covariance)?;
            let surface = fit.derivative_surface(d).stage(Stage::Covariance)?;
            let eig = eigendecompose(&surface, cfg.selector).stage(Stage::Eigen)?;
            let integrate = match cfg.scores {
                ScoreMethod::Integration => true,
                ScoreMethod::Blup => false,
                ScoreMethod::Auto => d == 0 && prep.centred.is_dense_on(p, grid, DENSE_FRACTION),
            };
            let (scores, method) = if integrate {
                let curves = tabulated.as_ref().expect("tabulated for d = 0");
                (scores_by_integration(curves, &eig).stage(Stage::Scores)?, "integration")
            } else {
                let cross = fit.cross_order(d).stage(Stage::Scores)?;
                let cov0 = if d == 0 { surface.clone() } else { fit.derivative_surface(0).stage(Stage::Scores)? };
                (
                    scores_by_blup(&prep.centred, &eig, &cross, &cov0, fit.sigma2).stage(Stage::Scores)?,
                    "blup",
                )
            };
            Ok(PerFeature {
                eig,
                scores,
                lambda: fit.surface.lambda_s.as_f64(),
                sigma2: fit.sigma2.as_f64(),
                method,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut uni = Vec::with_capacity(per_feature.len());
    for pf in per_feature {
        record_univariate(report, &pf.eig);
        let f = &mut report.features[pf.eig.feature];
        f.covariance_lambda = Some(pf.lambda);
        f.sigma2 = cfg.assume_noise.then_some(pf.sigma2);
        f.score_method = pf.method.into();
        f.ridged_subjects = pf.scores.ridged.len();
        uni.push((pf.eig, pf.scores));
    }
    report.timings.insert("univariate".into(), start.elapsed().as_secs_f64());
    combine(&uni, cfg.k).stage(Stage::Combine)
}

/// Plain MFPCA of the data (derivative order 0, whatever `cfg.d` says).
pub fn fit_mfpca<T: Real>(sample: &FunctionalSample<T>, cfg: &FitConfig<T>) -> Result<FitResult<T>> {
    covariance_route(Method::Mfpca, sample, cfg, 0)
}

/// DMFPCA: eigen decomposition of each feature's `∂^d∂^d C` with univariate
/// scores, then the multivariate combination.
pub fn fit_dmfpca<T: Real>(sample: &FunctionalSample<T>, cfg: &FitConfig<T>) -> Result<FitResult<T>> {
    covariance_route(Method::Dmfpca, sample, cfg, cfg.d)
}

/// Second-order finite-difference derivative of each row of `f` on `grid`,
/// one-sided at the ends.
pub fn finite_difference<T: Real>(f: &Array2<T>, grid: &Grid<T>) -> Result<Array2<T>> {
    let x = grid.points();
    let g = x.len();
    if f.ncols() != g {
        return Err(Error::invalid("rows are not tabulated on the grid"));
    }
    if g < 3 {
        return Err(Error::invalid("finite differences need at least 3 grid points"));
    }
    let two = T::lit(2.0);
    let mut out = Array2::zeros(f.dim());
    for (row, mut o) in f.rows().into_iter().zip(out.rows_mut()) {
        for j in 0..g {
            // three-point stencil on (x_a, x_b, x_c), derivative taken at x_j
            let (a, b, c) = if j == 0 {
                (0, 1, 2)
            } else if j == g - 1 {
                (g - 3, g - 2, g - 1)
            } else {
                (j - 1, j, j + 1)
            };
            let (xa, xb, xc, xj) = (x[a], x[b], x[c], x[j]);
            let wa = (two * xj - xb - xc) / ((xa - xb) * (xa - xc));
            let wb = (two * xj - xa - xc) / ((xb - xa) * (xb - xc));
            let wc = (two * xj - xa - xb) / ((xc - xa) * (xc - xb));
            o[j] = wa * row[a] + wb * row[b] + wc * row[c];
        }
    }
    Ok(out)
}

/// DMKL: MFPCA of the data, term-by-term finite-difference differentiation
/// of the expansion, then MFPCA of those initial derivatives.
pub fn fit_dmkl<T: Real>(sample: &FunctionalSample<T>, cfg: &FitConfig<T>) -> Result<FitResult<T>> {
    cfg.validate()?;
    let d = cfg.d;
    let mut report = new_report(Method::Dmkl, d, cfg);
    let prep = prepare(sample, cfg, &mut report)?;
    let (eig0, scores0) = covariance_stage(&prep, cfg, 0, &mut report)?;

    let start = Instant::now();
    let mut initial = Vec::with_capacity(eig0.n_features());
    for (psi, grid) in eig0.eigenfunctions.iter().zip(&eig0.grids) {
        let mut dpsi = psi.clone();
        for _ in 0..d {
            dpsi = finite_difference(&dpsi, grid).stage(Stage::Derivatives)?;
        }
        initial.push(scores0.scores.dot(&dpsi));
    }
    let initial = DenseCurves::new(eig0.grids.clone(), initial).stage(Stage::Derivatives)?;
    report.timings.insert("derivatives".into(), start.elapsed().as_secs_f64());

    let start = Instant::now();
    let mut uni = Vec::with_capacity(initial.n_features());
    for p in 0..initial.n_features() {
        let c = empirical_covariance(&initial, p).stage(Stage::Eigen)?;
        let eig = eigendecompose_kernel(&c, &initial.grids[p], p, d, cfg.selector).stage(Stage::Eigen)?;
        let sc = scores_by_integration(&initial, &eig).stage(Stage::Scores)?;
        record_univariate(&mut report, &eig);
        report.features[p].score_method = "integration".into();
        uni.push((eig, sc));
    }
    report.timings.insert("second_mfpca".into(), start.elapsed().as_secs_f64());
    let (eigen, scores) = combine(&uni, cfg.k).stage(Stage::Combine)?;
    finish(Method::Dmkl, &prep, d, eigen, scores, None, report)
}

/// Direct approach: per-curve P-spline derivatives followed by MFPCA.
///
/// A subject with a curve that cannot be smoothed is excluded from the MFPCA
/// and gets zero scores.
pub fn fit_direct<T: Real>(sample: &FunctionalSample<T>, cfg: &FitConfig<T>) -> Result<FitResult<T>> {
    cfg.validate()?;
    let d = cfg.d;
    let mut report = new_report(Method::Direct, d, cfg);
    let prep = prepare(sample, cfg, &mut report)?;
    let start = Instant::now();
    let n = sample.n_subjects();
    let bases = prep
        .centred
        .domains()
        .iter()
        .map(|&(lo, hi)| cfg.spline.curve_basis(lo, hi))
        .collect::<Result<Vec<_>>>()
        .stage(Stage::Derivatives)?;
    // one λ per feature, shared by every subject
    let smoothing = bases
        .par_iter()
        .enumerate()
        .map(|(p, basis)| match &cfg.spline.smoothing {
            Smoothing::Gcv(grid) => {
                let curves: Vec<&[Observation<T>]> =
                    prep.centred.subjects().iter().map(|s| &s.features[p][..]).collect();
                select_common_lambda(&curves, basis, cfg.spline.penalty_order, grid).map(Smoothing::Fixed)
            }
            fixed => Ok(fixed.clone()),
        })
        .collect::<Result<Vec<_>>>()
        .stage(Stage::Derivatives)?;
    let per_subject: Vec<Option<Vec<Vec<T>>>> = prep
        .centred
        .subjects()
        .par_iter()
        .map(|s| {
            s.features
                .iter()
                .enumerate()
                .map(|(p, obs)| {
                    let fit = fit_curve_with(obs, &bases[p], &smoothing[p], cfg.spline.penalty_order).ok()?;
                    fit.derivative_at(prep.grids[p].points(), d).ok()
                })
                .collect::<Option<Vec<_>>>()
        })
        .collect();
    let kept: Vec<usize> = (0..n).filter(|&i| per_subject[i].is_some()).collect();
    report.excluded_subjects = (0..n)
        .filter(|&i| per_subject[i].is_none())
        .map(|i| sample.subjects()[i].id.clone())
        .collect();
    if kept.len() < 2 {
        return Err(Error::ill_posed("fewer than two subjects could be smoothed"))
            .stage(Stage::Derivatives);
    }
    let values = prep
        .grids
        .iter()
        .enumerate()
        .map(|(p, g)| {
            Array2::from_shape_fn((kept.len(), g.len()), |(r, j)| {
                per_subject[kept[r]].as_ref().expect("kept subject")[p][j]
            })
        })
        .collect();
    let derivs = DenseCurves::new(prep.grids.clone(), values).stage(Stage::Derivatives)?;
    let offset = derivs.mean_curve();
    let centred = derivs.subtract(&offset).stage(Stage::Derivatives)?;
    report.timings.insert("derivatives".into(), start.elapsed().as_secs_f64());

    let start = Instant::now();
    let (eigen, kept_scores, uni) = dense_mfpca(&centred, cfg.selector, cfg.k, d).stage(Stage::Combine)?;
    for e in &uni {
        record_univariate(&mut report, e);
        report.features[e.feature].score_method = "integration".into();
    }
    let mut scores = Array2::zeros((n, eigen.n_components()));
    for (r, &i) in kept.iter().enumerate() {
        scores.row_mut(i).assign(&kept_scores.scores.row(r));
    }
    report.timings.insert("mfpca".into(), start.elapsed().as_secs_f64());
    let scores = MultivariateScores { d, scores };
    finish(Method::Direct, &prep, d, eigen, scores, Some(&offset), report)
}

/// Runs `method` on `sample`.
pub fn fit<T: Real>(method: Method, sample: &FunctionalSample<T>, cfg: &FitConfig<T>) -> Result<FitResult<T>> {
    match method {
        Method::Mfpca => fit_mfpca(sample, cfg),
        Method::Dmfpca => fit_dmfpca(sample, cfg),
        Method::Dmkl => fit_dmkl(sample, cfg),
        Method::Direct => fit_direct(sample, cfg),
    }
}
