//! Univariate FPCA of one feature: eigen decomposition of a tabulated
//! covariance kernel and prediction of the component scores.
//!
//! The discretised eigenproblem is `W^½ C W^½ u = λ u` with `W` the diagonal
//! of trapezoidal weights, so the eigenfunctions `φ = W^{-½} u` are
//! orthonormal under the same quadrature used everywhere else.

use ndarray::{Array1, Array2, ArrayView1};

use crate::covariance::{CovarianceSurface, CrossOrderSurface};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{asymmetry, cholesky, cholesky_solve, SymmetricEigen};
use crate::sample::{DenseCurves, FunctionalSample};
use crate::Real;

/// How many components a decomposition keeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentSelector {
    /// Smallest count whose cumulative share of the positive spectrum reaches
    /// the threshold.
    Pve(f64),
    /// Exactly this many, capped by the numerical rank.
    Fixed(usize),
}

impl Default for ComponentSelector {
    fn default() -> Self {
        ComponentSelector::Pve(0.99)
    }
}

/// Leading eigenpairs of one feature's (derivative) covariance operator.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateEigenSystem<T> {
    pub feature: usize,
    pub d: usize,
    pub grid: Grid<T>,
    /// Nonincreasing, strictly positive.
    pub eigenvalues: Vec<T>,
    /// `K × G`, one eigenfunction per row.
    pub eigenfunctions: Array2<T>,
    /// Share of the positive spectrum carried by the kept components.
    pub pve: T,
    /// Total magnitude of the negative eigenvalues that were clipped to zero.
    pub clipped_mass: T,
    /// Sum of the positive eigenvalues.
    pub total: T,
}

impl<T: Real> UnivariateEigenSystem<T> {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenfunction(&self, k: usize) -> ArrayView1<'_, T> {
        self.eigenfunctions.row(k)
    }
}

/// `N × K` univariate scores of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateScores<T> {
    pub feature: usize,
    pub d: usize,
    pub scores: Array2<T>,
    /// Subjects whose covariance block needed a ridge to be solvable.
    pub ridged: Vec<usize>,
}

/// Decomposes a tabulated covariance surface.
pub fn eigendecompose<T: Real>(
    surface: &CovarianceSurface<T>,
    selector: ComponentSelector,
) -> Result<UnivariateEigenSystem<T>> {
    eigendecompose_kernel(&surface.values, &surface.grid, surface.feature, surface.d, selector)
}

/// Decomposes the symmetric kernel `values` tabulated on `grid × grid`.
pub fn eigendecompose_kernel<T: Real>(
    values: &Array2<T>,
    grid: &Grid<T>,
    feature: usize,
    d: usize,
    selector: ComponentSelector,
) -> Result<UnivariateEigenSystem<T>> {
    let g = grid.len();
    if values.dim() != (g, g) {
        return Err(Error::invalid(format!(
            "kernel is {:?} but grid has {g} points",
            values.dim()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("kernel has non-finite entries"));
    }
    let scale = values.iter().fold(T::one(), |m, v| m.max(v.abs()));
    if asymmetry(values.view()) > T::lit(1e-6) * scale {
        return Err(Error::invalid("covariance kernel is not symmetric"));
    }

    let sqrt_w: Vec<T> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut a = Array2::zeros((g, g));
    for j in 0..g {
        for l in 0..g {
            a[[j, l]] = sqrt_w[j] * values[[j, l]] * sqrt_w[l];
        }
    }
    let eig = SymmetricEigen::new(a.view());

    let total: T = eig.values.iter().filter(|v| **v > T::zero()).copied().sum();
    let clipped_mass: T = eig.values.iter().filter(|v| **v < T::zero()).map(|v| -*v).sum();
    let lead = eig.values.first().copied().unwrap_or_else(T::zero);
    // eigenvalues this close to zero are rounding noise, not components
    let floor = lead * T::epsilon() * T::from_usize_lossy(g);
    let rank = eig.values.iter().take_while(|v| **v > floor && **v > T::zero()).count();
    if rank == 0 {
        return Err(Error::ill_posed(format!(
            "covariance of feature {feature} has no positive eigenvalue"
        )));
    }
    let k = match selector {
        ComponentSelector::Fixed(k) => {
            if k == 0 {
                return Err(Error::invalid("at least one component must be kept"));
            }
            k.min(rank)
        }
        ComponentSelector::Pve(th) => {
            if !(th > 0.0 && th <= 1.0) {
                return Err(Error::invalid(format!("pve threshold {th} outside (0, 1]")));
            }
            let th = T::lit(th);
            let mut acc = T::zero();
            let mut k = rank;
            for (i, &v) in eig.values.iter().take(rank).enumerate() {
                acc += v;
                if acc >= th * total {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };

    let mut phi = Array2::zeros((k, g));
    for c in 0..k {
        for j in 0..g {
            phi[[c, j]] = eig.vectors[[j, c]] / sqrt_w[j];
        }
        orient(grid, phi.row_mut(c));
    }
    let eigenvalues: Vec<T> = eig.values.iter().take(k).copied().collect();
    let kept: T = eigenvalues.iter().copied().sum();
    Ok(UnivariateEigenSystem {
        feature,
        d,
        grid: grid.clone(),
        eigenvalues,
        eigenfunctions: phi,
        pve: kept / total,
        clipped_mass,
        total,
    })
}

/// Flips `f` so its integral is nonnegative, or, when the integral vanishes,
/// so its first clearly nonzero value is positive.
pub(crate) fn orient<T: Real>(grid: &Grid<T>, mut f: ndarray::ArrayViewMut1<'_, T>) {
    let s = grid.integrate_unchecked(f.as_slice().expect("contiguous row"));
    let flip = if s.abs() >= T::lit(1e-10) {
        s < T::zero()
    } else {
        let big = f.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let tol = big * T::lit(1e-8);
        f.iter().find(|v| v.abs() > tol).is_some_and(|v| *v < T::zero())
    };
    if flip {
        f.mapv_inplace(|v| -v);
    }
}

/// Quadrature projections `ξ_ik = Σ_j w_j x_i(t_j) φ_k(t_j)` of the curves of
/// feature `eig.feature`.
pub fn scores_by_integration<T: Real>(
    curves: &DenseCurves<T>,
    eig: &UnivariateEigenSystem<T>,
) -> Result<UnivariateScores<T>> {
    let p = eig.feature;
    if p >= curves.n_features() || curves.grids[p] != eig.grid {
        return Err(Error::invalid(format!(
            "curves of feature {p} are not tabulated on the eigenfunction grid"
        )));
    }
    let w = Array1::from(eig.grid.weights().to_vec());
    let weighted = &eig.eigenfunctions * &w;
    let scores = curves.values[p].dot(&weighted.t());
    Ok(UnivariateScores {
        feature: p,
        d: eig.d,
        scores,
        ridged: Vec::new(),
    })
}

fn bilinear<T: Real>(m: &Array2<T>, s: (usize, T), t: (usize, T)) -> T {
    let (j, a) = s;
    let (l, b) = t;
    let one = T::one();
    m[[j, l]] * (one - a) * (one - b)
        + m[[j + 1, l]] * a * (one - b)
        + m[[j, l + 1]] * (one - a) * b
        + m[[j + 1, l + 1]] * a * b
}

/// Share of the positive spectrum of `C` kept in the BLUP covariance blocks.
pub const BLUP_MASS: f64 = 0.9999;

/// Best linear unbiased predictions `ξ̂_ik = η_kᵀ Σ_i⁻¹ Y_i` of the scores of
/// a centred sample.
///
/// `[η_k]_m = ∫ ∂_s^d C(s, T_im) φ_k(s) ds` comes from `cross` and
/// `Σ_i = C(T_i, T_i) + σ² I` from `cov0`; both are bilinearly interpolated
/// at the observation times. A subject whose `Σ_i` is numerically singular
/// gets a ridge of `1e-8 · tr(Σ_i)/M` and is listed in `ridged`.
pub fn scores_by_blup<T: Real>(
    sample: &FunctionalSample<T>,
    eig: &UnivariateEigenSystem<T>,
    cross: &CrossOrderSurface<T>,
    cov0: &CovarianceSurface<T>,
    sigma2: T,
) -> Result<UnivariateScores<T>> {
    let p = eig.feature;
    if cross.feature != p || cov0.feature != p || p >= sample.n_features() {
        return Err(Error::invalid("BLUP inputs describe different features"));
    }
    if cross.grid != eig.grid || cov0.grid != eig.grid {
        return Err(Error::invalid("BLUP inputs are tabulated on different grids"));
    }
    if cross.d != eig.d || cov0.d != 0 {
        return Err(Error::invalid("BLUP needs the cross-order surface of the eigen order and C itself"));
    }
    if !(sigma2 >= T::zero()) {
        return Err(Error::invalid("noise variance must be nonnegative"));
    }
    let grid = &eig.grid;
    let k = eig.n_components();
    // Σ_i and η both live on the leading eigenbasis of C, so η never points
    // into directions that Σ_i only covers through σ²
    let (vals, basis) = leading_basis(&cov0.values, grid, BLUP_MASS);
    let cov = expand(&vals, &basis);
    let w = Array1::from(grid.weights().to_vec());
    // a[k, l] = Σ_j w_j φ_k(s_j) cross(s_j, t_l), then projected in t
    let a = (&eig.eigenfunctions * &w).dot(&cross.values);
    let a = (&a * &w).dot(&basis.t()).dot(&basis);

    let n = sample.n_subjects();
    let mut scores = Array2::zeros((n, k));
    let mut ridged = Vec::new();
    for (i, subject) in sample.subjects().iter().enumerate() {
        let obs = &subject.features[p];
        let m = obs.len();
        if m == 0 {
            continue;
        }
        let loc = obs
            .iter()
            .map(|o| grid.locate(o.t))
            .collect::<Result<Vec<_>>>()?;
        let mut sigma = Array2::zeros((m, m));
        for r in 0..m {
            for c in 0..=r {
                let v = bilinear(&cov, loc[r], loc[c]);
                sigma[[r, c]] = v;
                sigma[[c, r]] = v;
            }
            sigma[[r, r]] += sigma2;
        }
        let y = Array1::from_iter(obs.iter().map(|o| o.y));
        let l = match factor(&sigma) {
            Some(l) => l,
            None => {
                let trace: T = (0..m).map(|r| sigma[[r, r]]).sum();
                let ridge = T::lit(1e-8) * trace.abs().max(T::min_positive_value())
                    / T::from_usize_lossy(m);
                for r in 0..m {
                    sigma[[r, r]] += ridge;
                }
                ridged.push(i);
                factor(&sigma).or_else(|| cholesky(sigma.view())).ok_or_else(|| {
                    Error::ill_posed(format!(
                        "covariance block of subject {} is singular even after ridging",
                        subject.id
                    ))
                })?
            }
        };
        let z = cholesky_solve(l.view(), y.view());
        for c in 0..k {
            let row = a.row(c);
            let mut acc = T::zero();
            for (r, &(j, f)) in loc.iter().enumerate() {
                let eta = row[j] + (row[j + 1] - row[j]) * f;
                acc += eta * z[r];
            }
            scores[[i, c]] = acc;
        }
    }
    Ok(UnivariateScores {
        feature: p,
        d: eig.d,
        scores,
        ridged,
    })
}

/// Leading quadrature eigenpairs of `C` carrying a fraction `mass` of its
/// positive spectrum. Rows of the returned matrix are `L²`-orthonormal.
pub fn leading_basis<T: Real>(c: &Array2<T>, grid: &Grid<T>, mass: f64) -> (Vec<T>, Array2<T>) {
    let g = grid.len();
    let sw: Vec<T> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let a = Array2::from_shape_fn((g, g), |(j, l)| sw[j] * c[[j, l]] * sw[l]);
    let eig = SymmetricEigen::new(a.view());
    let positive: T = eig.values.iter().filter(|v| **v > T::zero()).copied().sum();
    let target = T::lit(mass) * positive;
    let mut vals = Vec::new();
    let mut acc = T::zero();
    for &lam in eig.values.iter() {
        if lam <= T::zero() || (acc >= target && !vals.is_empty()) {
            break;
        }
        acc += lam;
        vals.push(lam);
    }
    let basis = Array2::from_shape_fn((vals.len(), g), |(m, j)| eig.vectors[[j, m]] / sw[j]);
    (vals, basis)
}

/// `C` with its negative quadrature eigenvalues set to zero, so every block
/// interpolated from it is positive semi-definite.
pub fn psd_projection<T: Real>(c: &Array2<T>, grid: &Grid<T>) -> Array2<T> {
    let (vals, basis) = leading_basis(c, grid, 1.0);
    expand(&vals, &basis)
}

fn expand<T: Real>(vals: &[T], basis: &Array2<T>) -> Array2<T> {
    let scaled = Array2::from_shape_fn(basis.dim(), |(m, j)| vals[m] * basis[[m, j]]);
    let mut out = basis.t().dot(&scaled);
    crate::linalg::symmetrize(&mut out);
    out
}

/// Cholesky factor when `a` is comfortably positive definite.
fn factor<T: Real>(a: &Array2<T>) -> Option<Array2<T>> {
    let l = cholesky(a.view())?;
    let m = a.nrows();
    let max_diag = (0..m).fold(T::zero(), |acc, r| acc.max(a[[r, r]]));
    let min_pivot = (0..m).fold(T::infinity(), |acc, r| acc.min(l[[r, r]]));
    let tol = T::lit(100.0) * T::epsilon() * T::from_usize_lossy(m) * max_diag;
    (min_pivot * min_pivot > tol).then_some(l)
}

/// Sample covariance `XᵀX/(N−1)` of already-centred curves of feature `p`.
pub fn empirical_covariance<T: Real>(curves: &DenseCurves<T>, p: usize) -> Result<Array2<T>> {
    let n = curves.n_curves();
    if n < 2 {
        return Err(Error::invalid("empirical covariance needs at least two curves"));
    }
    let x = &curves.values[p];
    let mut c = x.t().dot(x);
    c.mapv_inplace(|v| v / T::from_usize_lossy(n - 1));
    crate::linalg::symmetrize(&mut c);
    Ok(c)
}
