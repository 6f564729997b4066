//! Multivariate FPCA assembled from univariate decompositions.
//!
//! The univariate scores of all features are stacked into `Ξ` (`N × ΣK_p`)
//! and `Z = ΞᵀΞ/(N−1)` is eigen-decomposed. Each eigenvector `c_k` maps the
//! univariate eigenfunctions to a multivariate one,
//! `ψ_k^{(p)} = Σ_m [c_k]^{(p)}_m φ_m^{(p)}`, with scores `ρ_k = Ξ c_k`.

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::SymmetricEigen;
use crate::sample::DenseCurves;
use crate::ufpca::{
    eigendecompose_kernel, empirical_covariance, scores_by_integration, ComponentSelector,
    UnivariateEigenSystem, UnivariateScores,
};
use crate::Real;

/// Multivariate eigenvalues and eigenfunctions of order `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateEigenSystem<T> {
    pub d: usize,
    /// Nonincreasing, length `K`.
    pub eigenvalues: Vec<T>,
    /// Per feature, `K × G_p`.
    pub eigenfunctions: Vec<Array2<T>>,
    pub grids: Vec<Grid<T>>,
    /// `ΣK_p × K`, univariate-to-multivariate coefficients.
    pub combination: Array2<T>,
    /// Every eigenvalue of `Z`, negatives clipped to zero; the denominator of
    /// the proportion of variance explained.
    pub spectrum: Vec<T>,
}

/// `N × K` multivariate scores of order `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateScores<T> {
    pub d: usize,
    pub scores: Array2<T>,
}

impl<T: Real> MultivariateEigenSystem<T> {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_features(&self) -> usize {
        self.grids.len()
    }

    /// Largest deviation of the multivariate Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> T {
        let k = self.n_components();
        let mut worst = T::zero();
        for a in 0..k {
            for b in a..k {
                let mut ip = T::zero();
                for (g, psi) in self.grids.iter().zip(&self.eigenfunctions) {
                    for (j, &w) in g.weights().iter().enumerate() {
                        ip += w * psi[[a, j]] * psi[[b, j]];
                    }
                }
                let target = if a == b { T::one() } else { T::zero() };
                worst = worst.max((ip - target).abs());
            }
        }
        worst
    }

    /// The first `k` components only.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k > self.n_components() {
            return Err(Error::invalid(format!(
                "cannot keep {k} of {} components",
                self.n_components()
            )));
        }
        Ok(Self {
            d: self.d,
            eigenvalues: self.eigenvalues[..k].to_vec(),
            eigenfunctions: self
                .eigenfunctions
                .iter()
                .map(|e| e.slice(s![..k, ..]).to_owned())
                .collect(),
            grids: self.grids.clone(),
            combination: self.combination.slice(s![.., ..k]).to_owned(),
            spectrum: self.spectrum.clone(),
        })
    }
}

impl<T: Real> MultivariateScores<T> {
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k > self.scores.ncols() {
            return Err(Error::invalid(format!(
                "cannot keep {k} of {} score columns",
                self.scores.ncols()
            )));
        }
        Ok(Self {
            d: self.d,
            scores: self.scores.slice(s![.., ..k]).to_owned(),
        })
    }
}

/// Combines per-feature decompositions, given in feature order, into `k`
/// multivariate components.
pub fn combine<T: Real>(
    univariate: &[(UnivariateEigenSystem<T>, UnivariateScores<T>)],
    k: usize,
) -> Result<(MultivariateEigenSystem<T>, MultivariateScores<T>)> {
    if univariate.is_empty() {
        return Err(Error::invalid("no features to combine"));
    }
    let n = univariate[0].1.scores.nrows();
    if n < 2 {
        return Err(Error::invalid("multivariate FPCA needs at least two subjects"));
    }
    let d = univariate[0].0.d;
    let mut offsets = Vec::with_capacity(univariate.len() + 1);
    offsets.push(0);
    for (eig, sc) in univariate {
        if sc.scores.nrows() != n {
            return Err(Error::invalid("score matrices disagree on the number of subjects"));
        }
        if sc.scores.ncols() != eig.n_components() {
            return Err(Error::invalid(format!(
                "feature {} has {} eigenfunctions but {} score columns",
                eig.feature,
                eig.n_components(),
                sc.scores.ncols()
            )));
        }
        if eig.d != d || sc.d != d {
            return Err(Error::invalid("features were decomposed at different derivative orders"));
        }
        offsets.push(offsets.last().unwrap() + eig.n_components());
    }
    let total = *offsets.last().unwrap();
    if k == 0 || k > total {
        return Err(Error::invalid(format!(
            "requested K = {k} but the univariate decompositions provide ΣK_p = {total} components"
        )));
    }

    let mut xi = Array2::zeros((n, total));
    for (p, (_, sc)) in univariate.iter().enumerate() {
        xi.slice_mut(s![.., offsets[p]..offsets[p + 1]]).assign(&sc.scores);
    }
    let mut z = xi.t().dot(&xi);
    z.mapv_inplace(|v| v / T::from_usize_lossy(n - 1));
    crate::linalg::symmetrize(&mut z);
    let eig = SymmetricEigen::new(z.view());

    let mut c = eig.vectors.slice(s![.., ..k]).to_owned();
    let mut psi: Vec<Array2<T>> = univariate
        .iter()
        .enumerate()
        .map(|(p, (e, _))| c.slice(s![offsets[p]..offsets[p + 1], ..]).t().dot(&e.eigenfunctions))
        .collect();

    for comp in 0..k {
        if orientation_flip(univariate, &psi, comp) {
            c.column_mut(comp).mapv_inplace(|v| -v);
            for f in psi.iter_mut() {
                f.row_mut(comp).mapv_inplace(|v| -v);
            }
        }
    }
    let rho = xi.dot(&c);
    let spectrum: Vec<T> = eig.values.iter().map(|v| v.max(T::zero())).collect();
    Ok((
        MultivariateEigenSystem {
            d,
            eigenvalues: spectrum[..k].to_vec(),
            eigenfunctions: psi,
            grids: univariate.iter().map(|(e, _)| e.grid.clone()).collect(),
            combination: c,
            spectrum,
        },
        MultivariateScores { d, scores: rho },
    ))
}

/// Sign rule: the first feature whose component has a clearly nonzero
/// integral decides; failing that, the first clearly nonzero value.
fn orientation_flip<T: Real>(
    univariate: &[(UnivariateEigenSystem<T>, UnivariateScores<T>)],
    psi: &[Array2<T>],
    comp: usize,
) -> bool {
    for ((e, _), f) in univariate.iter().zip(psi) {
        let row = f.row(comp);
        let s = e.grid.integrate_unchecked(row.as_slice().expect("contiguous row"));
        if s.abs() >= T::lit(1e-10) {
            return s < T::zero();
        }
    }
    let big = psi
        .iter()
        .flat_map(|f| f.row(comp).to_vec())
        .fold(T::zero(), |m, v| m.max(v.abs()));
    let tol = big * T::lit(1e-8);
    psi.iter()
        .flat_map(|f| f.row(comp).to_vec())
        .find(|v| v.abs() > tol)
        .is_some_and(|v| v < T::zero())
}

/// MFPCA of fully tabulated, already centred curves: per-feature quadrature
/// eigen decomposition of the empirical covariance, then [`combine`].
pub fn dense_mfpca<T: Real>(
    curves: &DenseCurves<T>,
    selector: ComponentSelector,
    k: usize,
    d: usize,
) -> Result<(MultivariateEigenSystem<T>, MultivariateScores<T>, Vec<UnivariateEigenSystem<T>>)> {
    let mut uni = Vec::with_capacity(curves.n_features());
    for p in 0..curves.n_features() {
        let c = empirical_covariance(curves, p)?;
        let e = eigendecompose_kernel(&c, &curves.grids[p], p, d, selector)?;
        let s = scores_by_integration(curves, &e)?;
        uni.push((e, s));
    }
    let (eig, scores) = combine(&uni, k)?;
    Ok((eig, scores, uni.into_iter().map(|(e, _)| e).collect()))
}

/// Truncated expansion `Σ_{k ≤ k_use} ρ_ik ψ_k` on each feature grid. The
/// mean is not included.
pub fn reconstruct<T: Real>(
    eig: &MultivariateEigenSystem<T>,
    scores: &MultivariateScores<T>,
    k_use: usize,
) -> Result<DenseCurves<T>> {
    if k_use > eig.n_components() || k_use > scores.scores.ncols() {
        return Err(Error::invalid(format!(
            "cannot reconstruct with {k_use} of {} components",
            eig.n_components()
        )));
    }
    let rho = scores.scores.slice(s![.., ..k_use]);
    let values = eig
        .eigenfunctions
        .iter()
        .map(|psi| rho.dot(&psi.slice(s![..k_use, ..])))
        .collect();
    DenseCurves::new(eig.grids.clone(), values)
}

/// Cumulative proportion of variance explained by the kept components.
pub fn pve<T: Real>(eig: &MultivariateEigenSystem<T>) -> Result<Vec<T>> {
    let total: T = eig.spectrum.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::UndefinedPve);
    }
    let mut acc = T::zero();
    Ok(eig
        .eigenvalues
        .iter()
        .map(|&v| {
            acc += v;
            acc / total
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_uniform_grid;
    use std::f64::consts::PI;

    fn sines(g: &Grid<f64>, k: usize) -> Array2<f64> {
        Array2::from_shape_fn((k, g.len()), |(m, j)| {
            2f64.sqrt() * ((m + 1) as f64 * PI * g.points()[j]).sin()
        })
    }

    fn system(g: &Grid<f64>, phi: Array2<f64>, feature: usize) -> UnivariateEigenSystem<f64> {
        UnivariateEigenSystem {
            feature,
            d: 0,
            grid: g.clone(),
            eigenvalues: vec![1.0; phi.nrows()],
            eigenfunctions: phi,
            pve: 1.0,
            clipped_mass: 0.0,
            total: 1.0,
        }
    }

    #[test]
    fn orthogonal_score_columns() {
        let g = make_uniform_grid((0.0, 1.0), 51).unwrap();
        let phi = sines(&g, 2);
        // columns orthogonal with sample variances 4 and 1
        let xi = ndarray::array![[2.0, 1.0], [-2.0, 1.0], [2.0, -1.0], [-2.0, -1.0]];
        let xi = xi.mapv(|v: f64| v * (3.0f64 / 4.0).sqrt());
        let uni = vec![(system(&g, phi.clone(), 0), UnivariateScores { feature: 0, d: 0, scores: xi, ridged: vec![] })];
        let (eig, _) = combine(&uni, 2).unwrap();
        assert!((eig.eigenvalues[0] - 4.0).abs() < 1e-10);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-10);
        for k in 0..2 {
            for j in 0..51 {
                assert!((eig.eigenfunctions[0][[k, j]].abs() - phi[[k, j]].abs()).abs() < 1e-10);
            }
        }
        assert!(eig.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn pve_arithmetic() {
        let g = make_uniform_grid((0.0, 1.0), 3).unwrap();
        let mk = |vals: Vec<f64>, spec: Vec<f64>| MultivariateEigenSystem {
            d: 0,
            eigenvalues: vals.clone(),
            eigenfunctions: vec![Array2::zeros((vals.len(), 3))],
            grids: vec![g.clone()],
            combination: Array2::zeros((vals.len(), vals.len())),
            spectrum: spec,
        };
        assert_eq!(pve(&mk(vec![3.0, 1.0], vec![3.0, 1.0])).unwrap(), vec![0.75, 1.0]);
        assert_eq!(pve(&mk(vec![2.0], vec![2.0])).unwrap(), vec![1.0]);
        assert!(matches!(pve(&mk(vec![0.0], vec![0.0])), Err(Error::UndefinedPve)));
    }

    #[test]
    fn rejects_too_many_components() {
        let g = make_uniform_grid((0.0, 1.0), 11).unwrap();
        let uni = vec![(
            system(&g, sines(&g, 2), 0),
            UnivariateScores { feature: 0, d: 0, scores: Array2::ones((5, 2)), ridged: vec![] },
        )];
        let err = combine(&uni, 3).unwrap_err();
        assert!(err.to_string().contains("ΣK_p = 2"));
    }

    /// Two features driven by three latent scores.
    fn synthetic(n: usize) -> (Vec<(UnivariateEigenSystem<f64>, UnivariateScores<f64>)>, DenseCurves<f64>) {
        let g = make_uniform_grid((0.0, 1.0), 41).unwrap();
        let phi = sines(&g, 3);
        let mut x1 = Array2::zeros((n, 41));
        let mut x2 = Array2::zeros((n, 41));
        for i in 0..n {
            let t = i as f64;
            let z = [(t * 0.37).sin() * 3.0, (t * 1.91).cos() * 1.5, (t * 2.73).sin() * 0.5];
            for j in 0..41 {
                x1[[i, j]] = z[0] * phi[[0, j]] + z[1] * phi[[1, j]];
                x2[[i, j]] = z[0] * phi[[2, j]] - z[2] * phi[[1, j]];
            }
        }
        let curves = DenseCurves::new(vec![g.clone(), g.clone()], vec![x1, x2]).unwrap();
        let centred = curves.subtract(&curves.mean_curve()).unwrap();
        let uni = (0..2)
            .map(|p| {
                let c = empirical_covariance(&centred, p).unwrap();
                let e = eigendecompose_kernel(&c, &g, p, 0, ComponentSelector::Pve(0.999999)).unwrap();
                let s = scores_by_integration(&centred, &e).unwrap();
                (e, s)
            })
            .collect();
        (uni, centred)
    }

    #[test]
    fn reconstruction_in_span_and_monotone() {
        let (uni, centred) = synthetic(60);
        let (eig, sc) = combine(&uni, 3).unwrap();
        assert!(eig.orthonormality_defect() < 1e-8);
        let mut last = f64::INFINITY;
        for k in 0..=3 {
            let r = reconstruct(&eig, &sc, k).unwrap();
            let mut err = 0.0;
            for p in 0..2 {
                let diff = &centred.values[p] - &r.values[p];
                for row in diff.rows() {
                    err += eig.grids[p].inner(row.as_slice().unwrap(), row.as_slice().unwrap()).unwrap();
                }
            }
            assert!(err <= last + 1e-12);
            last = err;
        }
        assert!(last < 1e-12 * 60.0);
        assert!(reconstruct(&eig, &sc, 4).is_err());
        let zero = MultivariateScores { d: 0, scores: Array2::zeros((60, 3)) };
        assert!(reconstruct(&eig, &zero, 3).unwrap().values.iter().all(|v| v.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn feature_order_does_not_change_spectrum() {
        let (uni, _) = synthetic(40);
        let (a, _) = combine(&uni, 3).unwrap();
        let swapped: Vec<_> = uni.iter().rev().cloned().collect();
        let (b, _) = combine(&swapped, 3).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((x - y).abs() < 1e-10);
        }
        for k in 0..3 {
            let sign = if (a.eigenfunctions[0].row(k).dot(&b.eigenfunctions[1].row(k))) < 0.0 { -1.0 } else { 1.0 };
            for j in 0..41 {
                assert!((a.eigenfunctions[0][[k, j]] - sign * b.eigenfunctions[1][[k, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn single_feature_equals_univariate() {
        let (uni, _) = synthetic(50);
        let one = vec![uni[0].clone()];
        let k = one[0].0.n_components();
        let (eig, _) = combine(&one, k).unwrap();
        // integration scores of an eigenbasis reproduce its eigenvalues
        for (a, b) in eig.eigenvalues.iter().zip(&one[0].0.eigenvalues) {
            assert!((a - b).abs() < 1e-8 * b.max(1.0));
        }
    }
}
