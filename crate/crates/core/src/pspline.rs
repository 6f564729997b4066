//! Difference-penalised B-spline regression (P-splines) for curves and
//! tensor-product surfaces.
//!
//! Observations are first aggregated by unique abscissa, so a fit costs
//! `O(#unique points · degree²)` to assemble regardless of how many raw
//! observations share a location. Smoothing parameters are chosen by
//! generalised cross-validation; when the unpenalised Gram matrix is positive
//! definite the whole λ path is evaluated from one generalised eigen
//! decomposition, otherwise each λ is solved directly.

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use crate::bspline::{difference_penalty, BSplineBasis};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{cholesky, cholesky_solve, whiten, SymmetricEigen};
use crate::sample::Observation;
use crate::Real;

/// How the smoothing parameter of a fit is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Smoothing<T> {
    Fixed(T),
    Gcv(Vec<T>),
}

impl<T: Real> Smoothing<T> {
    /// GCV over `10^-6, 10^-5, …, 10^3`.
    pub fn default_gcv() -> Self {
        Smoothing::Gcv(log_lambda_grid(-6, 3))
    }
}

/// `10^lo, 10^(lo+1), …, 10^hi`.
pub fn log_lambda_grid<T: Real>(lo: i32, hi: i32) -> Vec<T> {
    (lo..=hi).map(|e| T::lit(10f64.powi(e))).collect()
}

/// Basis layout and penalty shared by every spline fit in a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineConfig<T> {
    pub degree: usize,
    /// Interior knots per unit length for curve fits.
    pub curve_knots_per_unit: usize,
    /// Interior knots per unit length, per axis, for covariance surfaces.
    pub surface_knots_per_unit: usize,
    pub penalty_order: usize,
    pub smoothing: Smoothing<T>,
    /// Subject folds used to choose λ for the pooled mean and covariance
    /// smoothers. Below 2, those fall back to GCV on the pooled data.
    pub pooled_folds: usize,
}

impl<T: Real> Default for SplineConfig<T> {
    fn default() -> Self {
        Self {
            degree: 3,
            curve_knots_per_unit: 30,
            surface_knots_per_unit: 12,
            penalty_order: 2,
            smoothing: Smoothing::default_gcv(),
            pooled_folds: 5,
        }
    }
}

impl<T: Real> SplineConfig<T> {
    fn basis_with(&self, lo: T, hi: T, per_unit: usize) -> Result<BSplineBasis<T>> {
        let len = (hi - lo).as_f64();
        let n = ((per_unit as f64) * len).round().max(1.0) as usize;
        BSplineBasis::uniform(lo, hi, n, self.degree)
    }

    pub fn curve_basis(&self, lo: T, hi: T) -> Result<BSplineBasis<T>> {
        self.basis_with(lo, hi, self.curve_knots_per_unit)
    }

    pub fn surface_basis(&self, lo: T, hi: T) -> Result<BSplineBasis<T>> {
        self.basis_with(lo, hi, self.surface_knots_per_unit)
    }
}

/// Penalised least-squares normal equations `(F + λP) c = b`.
///
/// `yy` is the full weighted sum of squares of the responses, including the
/// spread of responses that share an abscissa, so residual sums of squares
/// (and hence GCV) refer to the raw, unaggregated observations.
#[derive(Debug, Clone)]
pub(crate) struct PenalizedSystem<T> {
    gram: Array2<T>,
    rhs: Array1<T>,
    yy: T,
    n_obs: usize,
}

pub(crate) struct Solution<T> {
    pub coefficients: Array1<T>,
    pub edf: T,
    pub rss: T,
}

impl<T: Real> Solution<T> {
    fn gcv(&self, n_obs: usize) -> T {
        gcv_score(self.rss, self.edf, n_obs)
    }
}

fn gcv_score<T: Real>(rss: T, edf: T, n_obs: usize) -> T {
    let n = T::from_usize_lossy(n_obs);
    let denom = n - edf;
    if denom <= T::zero() {
        T::infinity()
    } else {
        n * rss.max(T::zero()) / (denom * denom)
    }
}

/// Aggregated responses at one location.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Cell<T> {
    pub count: usize,
    pub sum: T,
    pub sum_sq: T,
}

impl<T: Real> Cell<T> {
    pub fn push(&mut self, y: T) {
        self.count += 1;
        self.sum += y;
        self.sum_sq += y * y;
    }
}

struct Spectral<T> {
    chol: Array2<T>,
    vectors: Array2<T>,
    values: Array1<T>,
    projected: Array1<T>,
}

impl<T: Real> PenalizedSystem<T> {
    pub(crate) fn new(n_coef: usize) -> Self {
        Self {
            gram: Array2::zeros((n_coef, n_coef)),
            rhs: Array1::zeros(n_coef),
            yy: T::zero(),
            n_obs: 0,
        }
    }

    /// Adds a cell whose design row is nonzero at `idx` with values `vals`.
    pub(crate) fn add_cell(&mut self, idx: &[usize], vals: &[T], cell: &Cell<T>) {
        let w = T::from_usize_lossy(cell.count);
        for (a, &ia) in idx.iter().enumerate() {
            let va = vals[a];
            self.rhs[ia] += va * cell.sum;
            let wa = w * va;
            for (b, &ib) in idx.iter().enumerate() {
                self.gram[[ia, ib]] += wa * vals[b];
            }
        }
        self.yy += cell.sum_sq;
        self.n_obs += cell.count;
    }

    fn absorb(&mut self, other: &Self) {
        self.gram += &other.gram;
        self.rhs += &other.rhs;
        self.yy += other.yy;
        self.n_obs += other.n_obs;
    }

    fn without(&self, other: &Self) -> Self {
        Self {
            gram: &self.gram - &other.gram,
            rhs: &self.rhs - &other.rhs,
            yy: self.yy - other.yy,
            n_obs: self.n_obs - other.n_obs,
        }
    }

    fn rss(&self, c: &Array1<T>) -> T {
        let fc = self.gram.dot(c);
        self.yy - T::lit(2.0) * c.dot(&self.rhs) + c.dot(&fc)
    }

    fn factor(&self, penalty: &Array2<T>, lambda: T) -> Result<Array2<T>> {
        let a = &self.gram + &penalty.mapv(|v| v * lambda);
        let l = cholesky(a.view())
            .ok_or_else(|| Error::ill_posed("penalised normal equations are not positive definite"))?;
        check_conditioning(&l, &a)?;
        Ok(l)
    }

    pub(crate) fn solve(&self, penalty: &Array2<T>, lambda: T, with_edf: bool) -> Result<Solution<T>> {
        let l = self.factor(penalty, lambda)?;
        let coefficients = cholesky_solve(l.view(), self.rhs.view());
        let edf = if with_edf {
            let n = self.gram.nrows();
            let mut tr = T::zero();
            for j in 0..n {
                let col = cholesky_solve(l.view(), self.gram.column(j));
                tr += col[j];
            }
            tr
        } else {
            T::nan()
        };
        let rss = self.rss(&coefficients);
        Ok(Solution {
            coefficients,
            edf,
            rss,
        })
    }

    fn spectral(&self, penalty: &Array2<T>) -> Option<Spectral<T>> {
        let chol = cholesky(self.gram.view())?;
        if check_conditioning(&chol, &self.gram).is_err() {
            return None;
        }
        let m = whiten(chol.view(), penalty.view());
        let eig = SymmetricEigen::new(m.view());
        let z = crate::linalg::forward_substitute(chol.view(), self.rhs.view());
        let projected = eig.vectors.t().dot(&z);
        Some(Spectral {
            chol,
            values: eig.values.mapv(|v| v.max(T::zero())),
            vectors: eig.vectors,
            projected,
        })
    }

    /// GCV-optimal λ from `grid`, ties going to the larger λ.
    pub(crate) fn select_lambda(&self, penalty: &Array2<T>, grid: &[T]) -> Result<(T, T)> {
        validate_lambda_grid(grid)?;
        let mut sorted = grid.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let spectral = self.spectral(penalty);
        let mut best: Option<(T, T)> = None;
        for &lambda in &sorted {
            let score = match &spectral {
                Some(sp) => {
                    let (edf, rss) = sp.edf_rss(lambda, self.yy);
                    gcv_score(rss, edf, self.n_obs)
                }
                None => match self.solve(penalty, lambda, true) {
                    Ok(sol) => sol.gcv(self.n_obs),
                    Err(_) => T::infinity(),
                },
            };
            let take = match best {
                None => true,
                Some((_, b)) => score <= b + b.abs() * T::lit(1e-12),
            };
            if take && score.is_finite() {
                best = Some((lambda, score));
            } else if best.is_none() {
                best = Some((lambda, score));
            }
        }
        let (lambda, score) = best.expect("grid is nonempty");
        if !score.is_finite() {
            return Err(Error::ill_posed("no smoothing parameter gives a solvable fit"));
        }
        Ok((lambda, score))
    }

    /// Sum of the fold systems together with the λ minimising the held-out
    /// squared error when each fold is left out in turn. Ties go to the
    /// larger λ; a λ whose reduced system is singular is skipped.
    pub(crate) fn cross_validate(folds: &[Self], penalty: &Array2<T>, grid: &[T]) -> Result<(Self, T)> {
        validate_lambda_grid(grid)?;
        let mut total = Self::new(penalty.nrows());
        for f in folds {
            total.absorb(f);
        }
        let reduced: Vec<Self> = folds.iter().map(|f| total.without(f)).collect();
        let mut sorted = grid.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best: Option<(T, T)> = None;
        for &lambda in &sorted {
            let mut score = T::zero();
            for (f, r) in folds.iter().zip(&reduced) {
                if f.n_obs == 0 {
                    continue;
                }
                match r.factor(penalty, lambda) {
                    Ok(l) => score += f.rss(&cholesky_solve(l.view(), r.rhs.view())),
                    Err(_) => {
                        score = T::infinity();
                        break;
                    }
                }
            }
            if !score.is_finite() {
                continue;
            }
            if best.is_none_or(|(_, b)| score <= b + b.abs() * T::lit(1e-12)) {
                best = Some((lambda, score));
            }
        }
        match best {
            Some((lambda, _)) => Ok((total, lambda)),
            None => Err(Error::ill_posed("no smoothing parameter gives a solvable fit on every fold")),
        }
    }

    /// Solves at the configured smoothing, returning coefficients and λ.
    pub(crate) fn fit(&self, penalty: &Array2<T>, smoothing: &Smoothing<T>) -> Result<(Solution<T>, T)> {
        let lambda = match smoothing {
            Smoothing::Fixed(l) => {
                if *l < T::zero() || !l.is_finite() {
                    return Err(Error::invalid("smoothing parameter must be finite and nonnegative"));
                }
                *l
            }
            Smoothing::Gcv(grid) => self.select_lambda(penalty, grid)?.0,
        };
        Ok((self.solve(penalty, lambda, true)?, lambda))
    }
}

impl<T: Real> Spectral<T> {
    fn edf_rss(&self, lambda: T, yy: T) -> (T, T) {
        let two = T::lit(2.0);
        let mut edf = T::zero();
        let mut fitted = T::zero();
        for (&v, &g) in self.values.iter().zip(self.projected.iter()) {
            let s = T::one() / (T::one() + lambda * v);
            edf += s;
            fitted += g * g * (two * s - s * s);
        }
        (edf, yy - fitted)
    }

    #[allow(dead_code)]
    fn coefficients(&self, lambda: T) -> Array1<T> {
        let shrunk = Array1::from_iter(
            self.values
                .iter()
                .zip(self.projected.iter())
                .map(|(&v, &g)| g / (T::one() + lambda * v)),
        );
        let y = self.vectors.dot(&shrunk);
        crate::linalg::back_substitute_transposed(self.chol.view(), y.view())
    }
}

fn check_conditioning<T: Real>(l: &Array2<T>, a: &Array2<T>) -> Result<()> {
    let n = l.nrows();
    let max_diag = (0..n).map(|j| a[[j, j]].abs()).fold(T::zero(), T::max);
    let min_pivot = (0..n).map(|j| l[[j, j]] * l[[j, j]]).fold(T::infinity(), T::min);
    let tol = T::epsilon() * T::from_usize_lossy(n.max(1)) * T::lit(100.0);
    if !(min_pivot > tol * max_diag) {
        return Err(Error::ill_posed("penalised normal equations are numerically singular"));
    }
    Ok(())
}

fn validate_lambda_grid<T: Real>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("smoothing parameter grid is empty"));
    }
    if grid.iter().any(|&l| !(l >= T::zero()) || !l.is_finite()) {
        return Err(Error::invalid("smoothing parameters must be finite and nonnegative"));
    }
    Ok(())
}

fn key<T: Real>(x: T) -> u64 {
    x.as_f64().to_bits()
}

/// Aggregates observations by exact abscissa, in increasing order.
fn aggregate<T: Real>(obs: &[Observation<T>]) -> Vec<(T, Cell<T>)> {
    let mut map: HashMap<u64, (T, Cell<T>)> = HashMap::new();
    for o in obs {
        map.entry(key(o.t))
            .or_insert_with(|| (o.t, Cell::default()))
            .1
            .push(o.y);
    }
    let mut cells: Vec<_> = map.into_values().collect();
    cells.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    cells
}

/// A fitted P-spline curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PSplineFit<T> {
    pub basis: BSplineBasis<T>,
    pub coefficients: Vec<T>,
    pub lambda: T,
    pub penalty_order: usize,
    /// Effective degrees of freedom (trace of the hat matrix).
    pub edf: T,
    /// Residual sum of squares over the raw observations.
    pub rss: T,
    pub n_obs: usize,
}

impl<T: Real> PSplineFit<T> {
    pub fn evaluate(&self, x: T) -> T {
        self.basis.combine(&self.coefficients, x)
    }

    /// `d`-th derivative at arbitrary points inside the basis domain.
    pub fn derivative_at(&self, xs: &[T], d: usize) -> Result<Vec<T>> {
        let (basis, coefs) = self.basis.derivative(&self.coefficients, d)?;
        xs.iter()
            .map(|&x| {
                if !self.basis.contains(x) {
                    return Err(Error::OutOfDomain {
                        value: x.as_f64(),
                        lo: self.basis.lo().as_f64(),
                        hi: self.basis.hi().as_f64(),
                    });
                }
                Ok(basis.combine(&coefs, x))
            })
            .collect()
    }

    /// Residual standard deviation with `n − edf` degrees of freedom.
    pub fn residual_sd(&self) -> T {
        let dof = T::from_usize_lossy(self.n_obs) - self.edf;
        (self.rss.max(T::zero()) / dof).sqrt()
    }
}

fn curve_system<T: Real>(
    obs: &[Observation<T>],
    basis: &BSplineBasis<T>,
    penalty_order: usize,
) -> Result<(PenalizedSystem<T>, Array2<T>)> {
    if obs.iter().any(|o| !basis.contains(o.t)) {
        return Err(Error::invalid("observation outside the spline basis domain"));
    }
    let cells = aggregate(obs);
    if cells.len() < penalty_order + 1 {
        return Err(Error::ill_posed(format!(
            "{} distinct timepoints cannot support a penalty of order {penalty_order}",
            cells.len()
        )));
    }
    let n = basis.n_basis();
    let mut sys = PenalizedSystem::new(n);
    for (t, cell) in &cells {
        let (first, vals) = basis.eval_nonzero(*t);
        let idx: Vec<usize> = (first..first + vals.len()).collect();
        sys.add_cell(&idx, &vals, cell);
    }
    Ok((sys, difference_penalty(n, penalty_order)))
}

/// Solves `(BᵀB + λ DᵀD) c = Bᵀy` with `D` the `penalty_order`-th difference
/// matrix.
pub fn fit_curve<T: Real>(
    obs: &[Observation<T>],
    basis: &BSplineBasis<T>,
    lambda: T,
    penalty_order: usize,
) -> Result<PSplineFit<T>> {
    fit_curve_with(obs, basis, &Smoothing::Fixed(lambda), penalty_order)
}

/// Curve fit with either a fixed or a GCV-selected smoothing parameter.
pub fn fit_curve_with<T: Real>(
    obs: &[Observation<T>],
    basis: &BSplineBasis<T>,
    smoothing: &Smoothing<T>,
    penalty_order: usize,
) -> Result<PSplineFit<T>> {
    if let Smoothing::Fixed(l) = smoothing {
        if !(*l >= T::zero()) {
            return Err(Error::invalid("smoothing parameter must be nonnegative"));
        }
    }
    let (sys, penalty) = curve_system(obs, basis, penalty_order)?;
    let (sol, lambda) = sys.fit(&penalty, smoothing)?;
    Ok(PSplineFit {
        basis: basis.clone(),
        coefficients: sol.coefficients.to_vec(),
        lambda,
        penalty_order,
        edf: sol.edf,
        rss: sol.rss,
        n_obs: sys.n_obs,
    })
}

/// Curve fit to pooled groups of observations, typically one group per
/// subject. With a GCV grid and `folds ≥ 2`, λ is chosen by leaving out
/// whole groups (`group % folds`) instead, which stops correlated
/// observations within a group from pulling λ towards interpolation.
pub fn fit_curve_grouped<T: Real>(
    groups: &[&[Observation<T>]],
    basis: &BSplineBasis<T>,
    smoothing: &Smoothing<T>,
    penalty_order: usize,
    folds: usize,
) -> Result<PSplineFit<T>> {
    let pooled: Vec<Observation<T>> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let grid = match smoothing {
        Smoothing::Gcv(grid) if folds >= 2 && groups.len() >= folds => grid,
        _ => return fit_curve_with(&pooled, basis, smoothing, penalty_order),
    };
    // validates the pooled data before any fold is formed
    let (_, penalty) = curve_system(&pooled, basis, penalty_order)?;
    let mut parts = vec![Vec::new(); folds];
    for (i, g) in groups.iter().enumerate() {
        parts[i % folds].extend_from_slice(g);
    }
    let systems: Vec<_> = parts
        .iter()
        .map(|obs| fold_system(obs, basis))
        .collect();
    let (sys, lambda) = PenalizedSystem::cross_validate(&systems, &penalty, grid)?;
    let sol = sys.solve(&penalty, lambda, true)?;
    Ok(PSplineFit {
        basis: basis.clone(),
        coefficients: sol.coefficients.to_vec(),
        lambda,
        penalty_order,
        edf: sol.edf,
        rss: sol.rss,
        n_obs: sys.n_obs,
    })
}

/// One λ shared by several independent curve fits: the grid value with the
/// smallest sum of per-curve GCV scores, ties going to the larger λ. Curves
/// that cannot be fitted at a given λ are left out of its sum.
pub fn select_common_lambda<T: Real>(
    curves: &[&[Observation<T>]],
    basis: &BSplineBasis<T>,
    penalty_order: usize,
    lambda_grid: &[T],
) -> Result<T> {
    validate_lambda_grid(lambda_grid)?;
    let mut sorted = lambda_grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut totals = vec![T::zero(); sorted.len()];
    let mut any = false;
    for obs in curves {
        let Ok((sys, penalty)) = curve_system(obs, basis, penalty_order) else {
            continue;
        };
        let spectral = sys.spectral(&penalty);
        for (total, &lambda) in totals.iter_mut().zip(&sorted) {
            let score = match &spectral {
                Some(sp) => {
                    let (edf, rss) = sp.edf_rss(lambda, sys.yy);
                    gcv_score(rss, edf, sys.n_obs)
                }
                None => sys.solve(&penalty, lambda, true).map_or(T::infinity(), |s| s.gcv(sys.n_obs)),
            };
            if score.is_finite() {
                *total += score;
                any = true;
            }
        }
    }
    if !any {
        return Err(Error::ill_posed("no curve can be smoothed at any grid value"));
    }
    let mut best = 0;
    for j in 1..sorted.len() {
        if totals[j] <= totals[best] + totals[best].abs() * T::lit(1e-12) {
            best = j;
        }
    }
    Ok(sorted[best])
}

fn fold_system<T: Real>(obs: &[Observation<T>], basis: &BSplineBasis<T>) -> PenalizedSystem<T> {
    let mut sys = PenalizedSystem::new(basis.n_basis());
    for (t, cell) in &aggregate(obs) {
        let (first, vals) = basis.eval_nonzero(*t);
        let idx: Vec<usize> = (first..first + vals.len()).collect();
        sys.add_cell(&idx, &vals, cell);
    }
    sys
}

/// Tabulates the `d`-th derivative of a fitted curve on a grid.
pub fn eval_derivative<T: Real>(fit: &PSplineFit<T>, grid: &Grid<T>, d: usize) -> Result<Vec<T>> {
    fit.derivative_at(grid.points(), d)
}

/// Generalised cross-validation choice of λ over `lambda_grid`; among equal
/// scores the largest λ wins.
pub fn select_lambda_gcv<T: Real>(
    obs: &[Observation<T>],
    basis: &BSplineBasis<T>,
    penalty_order: usize,
    lambda_grid: &[T],
) -> Result<T> {
    validate_lambda_grid(lambda_grid)?;
    let (sys, penalty) = curve_system(obs, basis, penalty_order)?;
    Ok(sys.select_lambda(&penalty, lambda_grid)?.0)
}

/// A fitted tensor-product P-spline surface `f(s,t) = b_s(s)ᵀ A b_t(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFit<T> {
    pub basis_s: BSplineBasis<T>,
    pub basis_t: BSplineBasis<T>,
    /// `n_basis_s × n_basis_t`.
    pub coefficients: Array2<T>,
    pub lambda_s: T,
    pub lambda_t: T,
}

/// Surface data aggregated by exact `(s, t)` location.
#[derive(Debug, Clone, Default)]
pub(crate) struct SurfaceCells<T> {
    pub s: Vec<T>,
    pub t: Vec<T>,
    /// `(index into s, index into t, cell)`.
    pub cells: Vec<(usize, usize, Cell<T>)>,
}

impl<T: Real> SurfaceCells<T> {
    pub(crate) fn from_points(points: &[(T, T, T)]) -> Self {
        let mut s_keys: HashMap<u64, T> = HashMap::new();
        let mut t_keys: HashMap<u64, T> = HashMap::new();
        for &(s, t, _) in points {
            s_keys.entry(key(s)).or_insert(s);
            t_keys.entry(key(t)).or_insert(t);
        }
        let mut s: Vec<T> = s_keys.into_values().collect();
        let mut t: Vec<T> = t_keys.into_values().collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let s_index: HashMap<u64, usize> = s.iter().enumerate().map(|(i, &v)| (key(v), i)).collect();
        let t_index: HashMap<u64, usize> = t.iter().enumerate().map(|(i, &v)| (key(v), i)).collect();
        let mut map: HashMap<(usize, usize), Cell<T>> = HashMap::new();
        for &(ps, pt, v) in points {
            map.entry((s_index[&key(ps)], t_index[&key(pt)]))
                .or_default()
                .push(v);
        }
        let mut cells: Vec<_> = map.into_iter().map(|((a, b), c)| (a, b, c)).collect();
        cells.sort_by_key(|&(a, b, _)| (a, b));
        Self { s, t, cells }
    }
}

fn tensor_penalties<T: Real>(ns: usize, nt: usize, order: usize) -> (Array2<T>, Array2<T>) {
    let ps = difference_penalty::<T>(ns, order);
    let pt = difference_penalty::<T>(nt, order);
    let n = ns * nt;
    let mut row_pen = Array2::zeros((n, n));
    let mut col_pen = Array2::zeros((n, n));
    // vec index = i * nt + j
    for i in 0..ns {
        for k in 0..ns {
            let v = ps[[i, k]];
            if v != T::zero() {
                for j in 0..nt {
                    row_pen[[i * nt + j, k * nt + j]] = v;
                }
            }
        }
    }
    for i in 0..ns {
        for j in 0..nt {
            for l in 0..nt {
                let v = pt[[j, l]];
                if v != T::zero() {
                    col_pen[[i * nt + j, i * nt + l]] = v;
                }
            }
        }
    }
    (row_pen, col_pen)
}

fn surface_system<T: Real>(
    data: &SurfaceCells<T>,
    basis_s: &BSplineBasis<T>,
    basis_t: &BSplineBasis<T>,
) -> Result<PenalizedSystem<T>> {
    if data.s.iter().any(|&x| !basis_s.contains(x)) || data.t.iter().any(|&x| !basis_t.contains(x)) {
        return Err(Error::invalid("surface point outside the spline basis domain"));
    }
    let ns = basis_s.n_basis();
    let nt = basis_t.n_basis();
    let evals_s: Vec<_> = data.s.iter().map(|&x| basis_s.eval_nonzero(x)).collect();
    let evals_t: Vec<_> = data.t.iter().map(|&x| basis_t.eval_nonzero(x)).collect();
    let mut sys = PenalizedSystem::new(ns * nt);
    let mut idx = Vec::new();
    let mut vals = Vec::new();
    for (a, b, cell) in &data.cells {
        let (fs, vs) = &evals_s[*a];
        let (ft, vt) = &evals_t[*b];
        idx.clear();
        vals.clear();
        for (r, &x) in vs.iter().enumerate() {
            for (c, &y) in vt.iter().enumerate() {
                idx.push((fs + r) * nt + ft + c);
                vals.push(x * y);
            }
        }
        sys.add_cell(&idx, &vals, cell);
    }
    Ok(sys)
}

/// Penalty order used for surfaces; matches the curve default.
const SURFACE_PENALTY_ORDER: usize = 2;

pub(crate) fn fit_surface_cells<T: Real>(
    data: &SurfaceCells<T>,
    basis_s: &BSplineBasis<T>,
    basis_t: &BSplineBasis<T>,
    smoothing: &Smoothing<T>,
    penalty_order: usize,
) -> Result<SurfaceFit<T>> {
    let sys = surface_system(data, basis_s, basis_t)?;
    let (ps, pt) = tensor_penalties::<T>(basis_s.n_basis(), basis_t.n_basis(), penalty_order);
    let penalty = &ps + &pt;
    let (sol, lambda) = match smoothing {
        Smoothing::Fixed(l) => (sys.solve(&penalty, *l, false)?, *l),
        Smoothing::Gcv(grid) => {
            let (l, _) = sys.select_lambda(&penalty, grid)?;
            (sys.solve(&penalty, l, false)?, l)
        }
    };
    Ok(SurfaceFit {
        basis_s: basis_s.clone(),
        basis_t: basis_t.clone(),
        coefficients: sol
            .coefficients
            .into_shape_with_order((basis_s.n_basis(), basis_t.n_basis()))
            .expect("coefficient count matches basis sizes"),
        lambda_s: lambda,
        lambda_t: lambda,
    })
}

/// Surface fit with λ chosen by leaving out one group of cells at a time.
pub(crate) fn fit_surface_folds<T: Real>(
    folds: &[SurfaceCells<T>],
    basis_s: &BSplineBasis<T>,
    basis_t: &BSplineBasis<T>,
    grid: &[T],
    penalty_order: usize,
) -> Result<SurfaceFit<T>> {
    let systems = folds
        .iter()
        .map(|c| surface_system(c, basis_s, basis_t))
        .collect::<Result<Vec<_>>>()?;
    let (ps, pt) = tensor_penalties::<T>(basis_s.n_basis(), basis_t.n_basis(), penalty_order);
    let penalty = &ps + &pt;
    let (sys, lambda) = PenalizedSystem::cross_validate(&systems, &penalty, grid)?;
    let sol = sys.solve(&penalty, lambda, false)?;
    Ok(SurfaceFit {
        basis_s: basis_s.clone(),
        basis_t: basis_t.clone(),
        coefficients: sol
            .coefficients
            .into_shape_with_order((basis_s.n_basis(), basis_t.n_basis()))
            .expect("coefficient count matches basis sizes"),
        lambda_s: lambda,
        lambda_t: lambda,
    })
}

/// Tensor-product P-spline minimising
/// `Σ (v − f(s,t))² + λ_s ‖D_s A‖² + λ_t ‖A D_tᵀ‖²`.
pub fn fit_surface<T: Real>(
    points: &[(T, T, T)],
    basis_s: &BSplineBasis<T>,
    basis_t: &BSplineBasis<T>,
    lambda_s: T,
    lambda_t: T,
) -> Result<SurfaceFit<T>> {
    if !(lambda_s >= T::zero() && lambda_t >= T::zero()) {
        return Err(Error::invalid("smoothing parameters must be nonnegative"));
    }
    let data = SurfaceCells::from_points(points);
    let sys = surface_system(&data, basis_s, basis_t)?;
    let (ps, pt) =
        tensor_penalties::<T>(basis_s.n_basis(), basis_t.n_basis(), SURFACE_PENALTY_ORDER);
    let penalty = &ps.mapv(|v| v * lambda_s) + &pt.mapv(|v| v * lambda_t);
    let sol = sys.solve(&penalty, T::one(), false)?;
    Ok(SurfaceFit {
        basis_s: basis_s.clone(),
        basis_t: basis_t.clone(),
        coefficients: sol
            .coefficients
            .into_shape_with_order((basis_s.n_basis(), basis_t.n_basis()))
            .expect("coefficient count matches basis sizes"),
        lambda_s,
        lambda_t,
    })
}

impl<T: Real> SurfaceFit<T> {
    /// Basis pair and coefficient matrix of `∂_s^{d_s} ∂_t^{d_t} f`.
    pub fn partial(&self, d_s: usize, d_t: usize) -> Result<(BSplineBasis<T>, BSplineBasis<T>, Array2<T>)> {
        let (ns, nt) = self.coefficients.dim();
        let mut bs = self.basis_s.clone();
        let mut a = self.coefficients.clone();
        if d_s > 0 {
            let mut out = None;
            for j in 0..nt {
                let col = a.column(j).to_vec();
                let (b, c) = self.basis_s.derivative(&col, d_s)?;
                let m = out.get_or_insert_with(|| Array2::zeros((c.len(), nt)));
                m.column_mut(j).assign(&Array1::from(c));
                bs = b;
            }
            a = out.unwrap_or_else(|| Array2::zeros((ns, nt)));
        }
        let mut bt = self.basis_t.clone();
        if d_t > 0 {
            let rows = a.nrows();
            let mut out = None;
            for i in 0..rows {
                let row = a.row(i).to_vec();
                let (b, c) = self.basis_t.derivative(&row, d_t)?;
                let m = out.get_or_insert_with(|| Array2::zeros((rows, c.len())));
                m.row_mut(i).assign(&Array1::from(c));
                bt = b;
            }
            a = out.unwrap_or_else(|| Array2::zeros((rows, nt)));
        }
        Ok((bs, bt, a))
    }

    /// Value of the surface at a single point.
    pub fn evaluate(&self, s: T, t: T) -> T {
        let bs = self.basis_s.eval(s);
        let bt = self.basis_t.eval(t);
        Array1::from(bs).dot(&self.coefficients.dot(&Array1::from(bt)))
    }
}

/// Tabulates `∂_s^{d_s} ∂_t^{d_t}` of a fitted surface on `grid_s × grid_t`.
pub fn eval_surface_partial<T: Real>(
    fit: &SurfaceFit<T>,
    grid_s: &Grid<T>,
    grid_t: &Grid<T>,
    d_s: usize,
    d_t: usize,
) -> Result<Array2<T>> {
    for (grid, basis) in [(grid_s, &fit.basis_s), (grid_t, &fit.basis_t)] {
        if !basis.contains(grid.lo()) || !basis.contains(grid.hi()) {
            return Err(Error::OutOfDomain {
                value: grid.hi().as_f64(),
                lo: basis.lo().as_f64(),
                hi: basis.hi().as_f64(),
            });
        }
    }
    let (bs, bt, a) = fit.partial(d_s, d_t)?;
    let ds = bs.design(grid_s.points());
    let dt = bt.design(grid_t.points());
    Ok(ds.dot(&a).dot(&dt.t()))
}
