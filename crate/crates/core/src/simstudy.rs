//! The four-feature simulation benchmark: generator, analytic derivatives,
//! ground-truth eigensystem and a replication runner.
//!
//! Randomness comes from ChaCha8 with one stream per
//! `(replication, subject, purpose)`, so results do not depend on the order
//! in which replications or subjects are processed, and the noise stream is
//! independent of the timepoint stream.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::{ise, re, rmise, Metric};
use crate::mfpca::{combine, reconstruct, MultivariateEigenSystem, MultivariateScores};
use crate::pipelines::{fit, FitConfig, Method};
use crate::sample::{DenseCurves, FunctionalSample, Observation, Subject};
use crate::ufpca::{eigendecompose_kernel, empirical_covariance, scores_by_integration, ComponentSelector};
use crate::Real;

pub const N_FEATURES: usize = 4;
pub const PARAM_MEAN: [f64; 3] = [0.0, 0.5, 3.75];
pub const PARAM_COV: [[f64; 3]; 3] = [[1.0, 0.11, 0.56], [0.11, 0.02, 0.08], [0.56, 0.08, 0.49]];

/// Lower Cholesky factor of [`PARAM_COV`].
fn param_chol() -> [[f64; 3]; 3] {
    let c = PARAM_COV;
    let l00 = c[0][0].sqrt();
    let l10 = c[1][0] / l00;
    let l20 = c[2][0] / l00;
    let l11 = (c[1][1] - l10 * l10).sqrt();
    let l21 = (c[2][1] - l20 * l10) / l11;
    let l22 = (c[2][2] - l20 * l20 - l21 * l21).sqrt();
    [[l00, 0.0, 0.0], [l10, l11, 0.0], [l20, l21, l22]]
}

/// Per-subject parameters of the four generator functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SimParams {
    /// One draw from the trivariate normal law, redrawn while `b ≤ 0` or
    /// `c ≤ 0` (the first feature has a pole there; probability about 2e-4).
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let l = param_chol();
        loop {
            let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let v: Vec<f64> = (0..3)
                .map(|r| PARAM_MEAN[r] + (0..=r).map(|k| l[r][k] * z[k]).sum::<f64>())
                .collect();
            let p = SimParams { a: v[0], b: v[1], c: v[2] };
            if p.b > 0.0 && p.c > 0.0 {
                return p;
            }
        }
    }

    /// Raw draw without the positivity screen, for moment checks.
    pub fn draw_unscreened<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let l = param_chol();
        let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let v: Vec<f64> = (0..3)
            .map(|r| PARAM_MEAN[r] + (0..=r).map(|k| l[r][k] * z[k]).sum::<f64>())
            .collect();
        SimParams { a: v[0], b: v[1], c: v[2] }
    }
}

/// The four generator functions at `t`.
pub fn eval_functions(p: &SimParams, t: f64) -> [f64; 4] {
    let SimParams { a, b, c } = *p;
    let pi = std::f64::consts::PI;
    [
        a + 5.0 / (c * t + 10.0 * b * (-16.0 * t).exp()),
        a + c * (pi * (b + t)).sin().powi(3),
        a - (c * t / 4.0 * (2.0 * t - pi)).cos() + 6.0 * (-16.0 * b * t * t).exp(),
        a + 2.0 * c * (-14.0 * t).exp() + 2.0 * (2.0 * (t - b)).exp(),
    ]
}

/// First derivatives of [`eval_functions`] at `t`.
pub fn eval_derivatives(p: &SimParams, t: f64) -> [f64; 4] {
    let SimParams { b, c, .. } = *p;
    let pi = std::f64::consts::PI;
    let e16 = (-16.0 * t).exp();
    let u = pi * (b + t);
    [
        (32.0 * b * e16 - c / 5.0) / (c * t / 5.0 + 2.0 * b * e16).powi(2),
        3.0 * c * pi * u.cos() * u.sin().powi(2),
        (c * t - c * pi / 4.0) * (c * t / 4.0 * (2.0 * t - pi)).sin() - 192.0 * b * t * (-16.0 * b * t * t).exp(),
        -28.0 * c * (-14.0 * t).exp() + 4.0 * (2.0 * (t - b)).exp(),
    ]
}

/// The four benchmark settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SettingLabel {
    #[serde(rename = "dense-clean")]
    DenseClean,
    #[serde(rename = "dense-noisy")]
    DenseNoisy,
    #[serde(rename = "sparse-medium")]
    SparseMedium,
    #[serde(rename = "sparse-high")]
    SparseHigh,
}

impl SettingLabel {
    pub const ALL: [SettingLabel; 4] = [
        SettingLabel::DenseClean,
        SettingLabel::DenseNoisy,
        SettingLabel::SparseMedium,
        SettingLabel::SparseHigh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SettingLabel::DenseClean => "dense-clean",
            SettingLabel::DenseNoisy => "dense-noisy",
            SettingLabel::SparseMedium => "sparse-medium",
            SettingLabel::SparseHigh => "sparse-high",
        }
    }

    pub fn is_dense(self) -> bool {
        matches!(self, SettingLabel::DenseClean | SettingLabel::DenseNoisy)
    }
}

impl fmt::Display for SettingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SettingLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SettingLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown setting `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub label: SettingLabel,
    pub n_subjects: usize,
    pub grid_points: usize,
    pub sigma: f64,
    /// Inclusive range of per-feature observation counts; `None` observes the
    /// full grid.
    pub m_range: Option<(usize, usize)>,
    pub seed: u64,
}

impl SimSetting {
    pub fn preset(label: SettingLabel, seed: u64) -> Self {
        let (sigma, m_range) = match label {
            SettingLabel::DenseClean => (0.0, None),
            SettingLabel::DenseNoisy => (0.5, None),
            SettingLabel::SparseMedium => (0.5, Some((50, 60))),
            SettingLabel::SparseHigh => (0.5, Some((10, 20))),
        };
        Self {
            label,
            n_subjects: 100,
            grid_points: 101,
            sigma,
            m_range,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 || self.n_subjects >= 1 << 24 {
            return Err(Error::invalid("subject count must lie in [2, 2^24)"));
        }
        if self.grid_points < 3 {
            return Err(Error::invalid("simulation grid needs at least 3 points"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("noise level must be finite and nonnegative"));
        }
        if let Some((lo, hi)) = self.m_range {
            if lo == 0 || lo > hi || hi > self.grid_points {
                return Err(Error::invalid(format!(
                    "observation range [{lo}, {hi}] incompatible with {} grid points",
                    self.grid_points
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Params = 0,
    Times = 1,
    Noise = 2,
}

fn stream(seed: u64, replication: usize, subject: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replication as u64) << 32) | ((subject as u64) << 8) | purpose as u64);
    rng
}

/// Ground truth of one replication.
#[derive(Debug, Clone)]
pub struct TruthBundle<T> {
    pub params: Vec<SimParams>,
    /// Noise-free curves on the grid.
    pub curves: DenseCurves<T>,
    /// Analytic first derivatives on the grid.
    pub derivatives: DenseCurves<T>,
    /// Pointwise mean of `derivatives`.
    pub mean_derivative: DenseCurves<T>,
    /// MFPCA of the centred derivatives, with every numerically nonzero
    /// component kept.
    pub eigen: MultivariateEigenSystem<T>,
    pub scores: MultivariateScores<T>,
}

impl<T: Real> TruthBundle<T> {
    /// MFPCA of the true derivatives with every component whose variance is
    /// distinguishable from rounding kept.
    pub fn from_derivatives(params: Vec<SimParams>, curves: DenseCurves<T>, derivatives: DenseCurves<T>) -> Result<Self> {
        let mean_derivative = derivatives.mean_curve();
        let centred = derivatives.subtract(&mean_derivative)?;
        let mut uni = Vec::with_capacity(centred.n_features());
        for p in 0..centred.n_features() {
            let c = empirical_covariance(&centred, p)?;
            let e = eigendecompose_kernel(&c, &centred.grids[p], p, 1, ComponentSelector::Pve(1.0))?;
            let s = scores_by_integration(&centred, &e)?;
            uni.push((e, s));
        }
        let total: usize = uni.iter().map(|(e, _)| e.n_components()).sum();
        let (eigen, scores) = combine(&uni, total.min(centred.n_curves() - 1).max(1))?;
        Ok(Self {
            params,
            curves,
            derivatives,
            mean_derivative,
            eigen,
            scores,
        })
    }

    /// The leading `k` truth components.
    pub fn eigen_k(&self, k: usize) -> Result<MultivariateEigenSystem<T>> {
        self.eigen.truncate(k)
    }

    /// Cumulative proportion of variance of the leading `k` components.
    pub fn pve(&self, k: usize) -> Result<T> {
        let v = crate::mfpca::pve(&self.eigen_k(k)?)?;
        Ok(*v.last().expect("k ≥ 1"))
    }

    /// The oracle reconstruction with every truth component: the true
    /// derivatives up to rounding.
    pub fn full_reconstruction(&self) -> Result<DenseCurves<T>> {
        reconstruct(&self.eigen, &self.scores, self.eigen.n_components())?.add(&self.mean_derivative)
    }
}

/// Deterministic draw of replication `replication` of `setting`.
pub fn generate<T: Real>(setting: &SimSetting, replication: usize) -> Result<(FunctionalSample<T>, TruthBundle<T>)> {
    setting.validate()?;
    let grid = Grid::<f64>::uniform(0.0, 1.0, setting.grid_points)?;
    let gt = Grid::<T>::uniform(T::zero(), T::one(), setting.grid_points)?;
    let n = setting.n_subjects;
    let g = grid.len();

    let params: Vec<SimParams> = (0..n)
        .map(|i| SimParams::draw(&mut stream(setting.seed, replication, i, Purpose::Params)))
        .collect();

    let mut x = vec![Array2::<T>::zeros((n, g)); N_FEATURES];
    let mut dx = vec![Array2::<T>::zeros((n, g)); N_FEATURES];
    for (i, p) in params.iter().enumerate() {
        for (j, &t) in grid.points().iter().enumerate() {
            let f = eval_functions(p, t);
            let df = eval_derivatives(p, t);
            for q in 0..N_FEATURES {
                if !f[q].is_finite() || !df[q].is_finite() {
                    return Err(Error::ill_posed(format!("non-finite generator value for subject {i}")));
                }
                x[q][[i, j]] = T::lit(f[q]);
                dx[q][[i, j]] = T::lit(df[q]);
            }
        }
    }

    let subjects = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut times_rng = stream(setting.seed, replication, i, Purpose::Times);
            let mut noise_rng = stream(setting.seed, replication, i, Purpose::Noise);
            let features = (0..N_FEATURES)
                .map(|q| {
                    let idx: Vec<usize> = match setting.m_range {
                        None => (0..g).collect(),
                        Some((lo, hi)) => {
                            let m = times_rng.random_range(lo..=hi);
                            let mut v = index::sample(&mut times_rng, g, m).into_vec();
                            v.sort_unstable();
                            v
                        }
                    };
                    idx.into_iter()
                        .map(|j| {
                            let t = grid.points()[j];
                            let mut y = eval_functions(p, t)[q];
                            if setting.sigma > 0.0 {
                                let e: f64 = noise_rng.sample(StandardNormal);
                                y += setting.sigma * e;
                            }
                            Observation::new(gt.points()[j], T::lit(y))
                        })
                        .collect()
                })
                .collect();
            Subject {
                id: (i + 1).to_string(),
                features,
            }
        })
        .collect();

    let one = (T::zero(), T::one());
    let sample = FunctionalSample::new(vec![one; N_FEATURES], subjects)?;
    let curves = DenseCurves::new(vec![gt.clone(); N_FEATURES], x)?;
    let derivatives = DenseCurves::new(vec![gt; N_FEATURES], dx)?;
    let truth = TruthBundle::from_derivatives(params, curves, derivatives)?;
    Ok((sample, truth))
}

/// A method evaluated in the study: one of the estimators, or the truth
/// itself as a self-check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMethod {
    Dmfpca,
    Dmkl,
    Direct,
    Truth,
}

impl StudyMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyMethod::Dmfpca => "dmfpca",
            StudyMethod::Dmkl => "dmkl",
            StudyMethod::Direct => "direct",
            StudyMethod::Truth => "truth",
        }
    }

    fn pipeline(self) -> Option<Method> {
        match self {
            StudyMethod::Dmfpca => Some(Method::Dmfpca),
            StudyMethod::Dmkl => Some(Method::Dmkl),
            StudyMethod::Direct => Some(Method::Direct),
            StudyMethod::Truth => None,
        }
    }
}

impl fmt::Display for StudyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dmfpca" => Ok(StudyMethod::Dmfpca),
            "dmkl" => Ok(StudyMethod::Dmkl),
            "direct" => Ok(StudyMethod::Direct),
            "truth" => Ok(StudyMethod::Truth),
            other => Err(Error::invalid(format!("unknown study method `{other}`"))),
        }
    }
}

/// One metric value of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub setting: SettingLabel,
    pub method: StudyMethod,
    pub replication: usize,
    pub metric: Metric,
    /// 1-based; absent for RMISE.
    pub component: Option<usize>,
    pub value: f64,
}

/// A replication/method pair that did not produce metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyFailure {
    pub setting: SettingLabel,
    pub method: StudyMethod,
    pub replication: usize,
    pub message: String,
}

/// Everything one replication of one setting produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub rows: Vec<StudyRow>,
    pub failures: Vec<StudyFailure>,
    /// Truth proportion of variance explained by the leading `k` components.
    pub truth_pve: Option<f64>,
}

/// RE, ISE and RMISE of `eigen`/`reconstruction` against the truth.
pub fn evaluate<T: Real>(
    truth: &TruthBundle<T>,
    eigen: &MultivariateEigenSystem<T>,
    reconstruction: &DenseCurves<T>,
    k: usize,
) -> Result<Vec<(Metric, Option<usize>, f64)>> {
    let t = truth.eigen_k(k)?;
    let e = eigen.truncate(k)?;
    let mut out = Vec::with_capacity(2 * k + 1);
    for (c, v) in re(&t.eigenvalues, &e.eigenvalues)?.into_iter().enumerate() {
        out.push((Metric::Re, Some(c + 1), v.as_f64()));
    }
    for (c, v) in ise(&t.eigenfunctions, &e.eigenfunctions, &t.grids)?.into_iter().enumerate() {
        out.push((Metric::Ise, Some(c + 1), v.as_f64()));
    }
    out.push((Metric::Rmise, None, rmise(&truth.derivatives, reconstruction)?.as_f64()));
    Ok(out)
}

/// Generates one replication and scores every method on it.
pub fn run_replication(
    setting: &SimSetting,
    replication: usize,
    methods: &[StudyMethod],
    cfg: &FitConfig<f64>,
) -> ReplicationOutcome {
    let mut outcome = ReplicationOutcome::default();
    let fail = |method, message: String| StudyFailure {
        setting: setting.label,
        method,
        replication,
        message,
    };
    let (sample, truth) = match generate::<f64>(setting, replication) {
        Ok(v) => v,
        Err(e) => {
            outcome.failures.extend(methods.iter().map(|&m| fail(m, e.to_string())));
            return outcome;
        }
    };
    outcome.truth_pve = truth.pve(cfg.k).ok();
    for &m in methods {
        let scored = match m.pipeline() {
            Some(method) => fit(method, &sample, cfg)
                .and_then(|r| evaluate(&truth, &r.eigen, &r.reconstruction, cfg.k)),
            None => truth
                .full_reconstruction()
                .and_then(|r| evaluate(&truth, &truth.eigen, &r, cfg.k)),
        };
        match scored {
            Ok(values) => outcome.rows.extend(values.into_iter().map(|(metric, component, value)| StudyRow {
                setting: setting.label,
                method: m,
                replication,
                metric,
                component,
                value,
            })),
            Err(e) => outcome.failures.push(fail(m, e.to_string())),
        }
    }
    outcome
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub settings: Vec<SettingLabel>,
    pub methods: Vec<StudyMethod>,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Worker threads; `None` uses rayon's default.
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_k() -> usize {
    3
}

/// Distribution summary of one (setting, method, metric, component) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: SettingLabel,
    pub method: StudyMethod,
    pub metric: Metric,
    pub component: Option<usize>,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub failures: Vec<StudyFailure>,
    pub summary: Vec<SummaryRow>,
    /// Failed (replication, method) pairs over all attempted.
    pub failure_rate: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Aggregates rows per (setting, method, metric, component).
pub fn summarize(rows: &[StudyRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(SettingLabel, StudyMethod, Metric, Option<usize>), Vec<f64>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.setting, r.method, r.metric, r.component))
            .or_default()
            .push(r.value);
    }
    cells
        .into_iter()
        .map(|((setting, method, metric, component), mut v)| {
            v.sort_by(|a, b| a.total_cmp(b));
            SummaryRow {
                setting,
                method,
                metric,
                component,
                n: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                median: quantile(&v, 0.5),
                q1: quantile(&v, 0.25),
                q3: quantile(&v, 0.75),
            }
        })
        .collect()
}

/// Assembles a report from per-replication outcomes in replication order.
pub fn assemble(outcomes: Vec<ReplicationOutcome>, attempted: usize) -> StudyReport {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        rows.extend(o.rows);
        failures.extend(o.failures);
    }
    let summary = summarize(&rows);
    StudyReport {
        failure_rate: if attempted == 0 { 0.0 } else { failures.len() as f64 / attempted as f64 },
        rows,
        failures,
        summary,
    }
}

/// Every (setting, replication) pair, in report order.
pub fn study_tasks(cfg: &StudyConfig) -> Vec<(SimSetting, usize)> {
    cfg.settings
        .iter()
        .flat_map(|&l| (0..cfg.replications).map(move |r| (SimSetting::preset(l, cfg.seed), r)))
        .collect()
}

/// Runs the whole study on a pool of `cfg.jobs` workers.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    if cfg.replications == 0 {
        return Err(Error::invalid("at least one replication is required"));
    }
    let fit_cfg = FitConfig { k: cfg.k, ..FitConfig::default() };
    let tasks = study_tasks(cfg);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<ReplicationOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(s, r)| run_replication(s, *r, &cfg.methods, &fit_cfg))
            .collect()
    });
    Ok(assemble(outcomes, tasks.len() * cfg.methods.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluations() {
        let p = SimParams { a: 0.0, b: 0.5, c: 3.75 };
        assert!((eval_functions(&p, 0.0)[0] - 1.0).abs() < 1e-15);
        // b + t integer makes the cubed sine vanish
        let q = SimParams { a: 0.7, b: 0.25, c: 2.0 };
        assert!((eval_functions(&q, 0.75)[1] - 0.7).abs() < 1e-12);
        assert!(eval_derivatives(&q, 0.25)[1].abs() < 1e-12);
        let z = SimParams { a: 0.0, b: 0.0, c: 0.0 };
        assert!((eval_functions(&z, 0.0)[3] - 2.0).abs() < 1e-15);
        assert!((eval_derivatives(&z, 0.0)[3] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..100 {
            let p = SimParams::draw(&mut rng);
            let t: f64 = rng.random_range(h..1.0 - h);
            let hi = eval_functions(&p, t + h);
            let lo = eval_functions(&p, t - h);
            let d = eval_derivatives(&p, t);
            for q in 0..4 {
                let fd = (hi[q] - lo[q]) / (2.0 * h);
                // relative guard for the steep start of the first feature
                assert!((fd - d[q]).abs() < 1e-4 * d[q].abs().max(1.0), "feature {q}: {fd} vs {}", d[q]);
            }
        }
    }

    #[test]
    fn parameter_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let draws: Vec<SimParams> = (0..n).map(|_| SimParams::draw_unscreened(&mut rng)).collect();
        let cols = |p: &SimParams| [p.a, p.b, p.c];
        let mean: Vec<f64> = (0..3).map(|r| draws.iter().map(|p| cols(p)[r]).sum::<f64>() / n as f64).collect();
        for r in 0..3 {
            let se = (PARAM_COV[r][r] / n as f64).sqrt();
            assert!((mean[r] - PARAM_MEAN[r]).abs() < 3.0 * se);
            for c in 0..3 {
                let cov = draws
                    .iter()
                    .map(|p| (cols(p)[r] - mean[r]) * (cols(p)[c] - mean[c]))
                    .sum::<f64>()
                    / (n - 1) as f64;
                // Var of a product moment under normality
                let se = ((PARAM_COV[r][r] * PARAM_COV[c][c] + PARAM_COV[r][c].powi(2)) / n as f64).sqrt();
                assert!((cov - PARAM_COV[r][c]).abs() < 3.0 * se, "{r}{c}: {cov}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_noise_independent() {
        let s = SimSetting { n_subjects: 12, ..SimSetting::preset(SettingLabel::SparseHigh, 3) };
        let (a, _) = generate::<f64>(&s, 2).unwrap();
        let (b, _) = generate::<f64>(&s, 2).unwrap();
        assert_eq!(a, b);
        let quiet = SimSetting { sigma: 0.0, ..s.clone() };
        let (c, _) = generate::<f64>(&quiet, 2).unwrap();
        for (x, y) in a.subjects().iter().zip(c.subjects()) {
            for (fx, fy) in x.features.iter().zip(&y.features) {
                assert_eq!(fx.len(), fy.len());
                assert!((10..=20).contains(&fx.len()));
                assert!(fx.iter().zip(fy).all(|(o, p)| o.t == p.t));
                assert!(fx.iter().zip(fy).any(|(o, p)| o.y != p.y));
            }
        }
        let (d, _) = generate::<f64>(&s, 3).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn dense_clean_observes_whole_grid() {
        let s = SimSetting { n_subjects: 5, ..SimSetting::preset(SettingLabel::DenseClean, 0) };
        let (sample, truth) = generate::<f64>(&s, 0).unwrap();
        assert!(sample.subjects().iter().all(|x| x.features.iter().all(|f| f.len() == 101)));
        assert_eq!(truth.derivatives.values[0].dim(), (5, 101));
        assert!(truth.eigen.orthonormality_defect() < 1e-8);
    }

    #[test]
    fn truth_self_comparison_is_exact() {
        let s = SimSetting { n_subjects: 30, ..SimSetting::preset(SettingLabel::DenseClean, 1) };
        let out = run_replication(&s, 0, &[StudyMethod::Truth], &FitConfig::default());
        assert!(out.failures.is_empty());
        assert_eq!(out.rows.len(), 7);
        for r in &out.rows {
            assert!(r.value < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn summary_quantiles() {
        let rows: Vec<StudyRow> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| StudyRow {
                setting: SettingLabel::DenseClean,
                method: StudyMethod::Dmfpca,
                replication: i,
                metric: Metric::Rmise,
                component: None,
                value: v,
            })
            .collect();
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].n, s[0].mean, s[0].median, s[0].q1, s[0].q3), (4, 2.5, 2.5, 1.75, 3.25));
    }
}
