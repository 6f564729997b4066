//! Evaluation grids with trapezoidal quadrature.

use crate::error::{Error, Result};
use crate::Real;

/// Ordered evaluation points on a feature domain, with trapezoidal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    points: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> Grid<T> {
    /// Builds a grid from strictly increasing points; weights are the
    /// trapezoidal rule on those points.
    pub fn new(points: Vec<T>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("grid points must be finite"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid points must be strictly increasing"));
        }
        let n = points.len();
        let half = T::lit(0.5);
        let mut weights = vec![T::zero(); n];
        for j in 0..n - 1 {
            let h = (points[j + 1] - points[j]) * half;
            weights[j] += h;
            weights[j + 1] += h;
        }
        Ok(Self { points, weights })
    }

    /// `n_points` equidistant points spanning `[lo, hi]`.
    pub fn uniform(lo: T, hi: T, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::invalid(format!(
                "uniform grid needs at least 2 points, got {n_points}"
            )));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("grid interval must be finite and nondegenerate"));
        }
        let step = (hi - lo) / T::from_usize_lossy(n_points - 1);
        let mut points: Vec<T> = (0..n_points)
            .map(|j| lo + step * T::from_usize_lossy(j))
            .collect();
        // pin the right end exactly
        points[n_points - 1] = hi;
        Self::new(points)
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lo(&self) -> T {
        self.points[0]
    }

    pub fn hi(&self) -> T {
        self.points[self.points.len() - 1]
    }

    /// Trapezoidal approximation of the integral of the tabulated `f`.
    pub fn integrate(&self, f: &[T]) -> Result<T> {
        self.check_len(f.len())?;
        Ok(self.integrate_unchecked(f))
    }

    pub(crate) fn integrate_unchecked(&self, f: &[T]) -> T {
        self.weights
            .iter()
            .zip(f)
            .fold(T::zero(), |acc, (&w, &v)| acc + w * v)
    }

    /// Quadrature inner product of two tabulated functions.
    pub fn inner(&self, f: &[T], g: &[T]) -> Result<T> {
        self.check_len(f.len())?;
        self.check_len(g.len())?;
        Ok(self
            .weights
            .iter()
            .zip(f.iter().zip(g))
            .fold(T::zero(), |acc, (&w, (&a, &b))| acc + w * a * b))
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.points.len() {
            return Err(Error::invalid(format!(
                "tabulated function has {len} values but grid has {} points",
                self.points.len()
            )));
        }
        Ok(())
    }

    /// Index `j` with `points[j] <= t <= points[j+1]` and the interpolation
    /// fraction, or an out-of-domain error.
    pub(crate) fn locate(&self, t: T) -> Result<(usize, T)> {
        let lo = self.lo();
        let hi = self.hi();
        let slack = (hi - lo) * T::lit(1e-12);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::OutOfDomain {
                value: t.as_f64(),
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        let t = t.max(lo).min(hi);
        let n = self.points.len();
        // partition_point gives the first index with point > t
        let upper = self.points.partition_point(|&p| p <= t);
        let j = upper.saturating_sub(1).min(n - 2);
        let span = self.points[j + 1] - self.points[j];
        let frac = ((t - self.points[j]) / span).max(T::zero()).min(T::one());
        Ok((j, frac))
    }

    /// Linear interpolation of a tabulated function at `t`.
    pub fn interpolate(&self, f: &[T], t: T) -> Result<T> {
        self.check_len(f.len())?;
        let (j, frac) = self.locate(t)?;
        Ok(f[j] + (f[j + 1] - f[j]) * frac)
    }

    /// Exact index of `t` when it coincides with a grid point.
    pub fn index_of(&self, t: T) -> Option<usize> {
        let k = self.points.partition_point(|&p| p < t);
        (k < self.points.len() && self.points[k] == t).then_some(k)
    }
}

/// `n_points` equidistant points on `interval` with trapezoidal weights.
pub fn make_uniform_grid<T: Real>(interval: (T, T), n_points: usize) -> Result<Grid<T>> {
    Grid::uniform(interval.0, interval.1, n_points)
}

/// Trapezoidal integral of `f` tabulated on `grid`.
pub fn integrate<T: Real>(grid: &Grid<T>, f: &[T]) -> Result<T> {
    grid.integrate(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_101_has_spacing_001() {
        let g = make_uniform_grid((0.0f64, 1.0), 101).unwrap();
        assert_eq!(g.len(), 101);
        for w in g.points().windows(2) {
            assert!((w[1] - w[0] - 0.01).abs() < 1e-12);
        }
        assert_eq!(g.hi(), 1.0);
    }

    #[test]
    fn two_point_trapezoid() {
        let g = make_uniform_grid((0.0, 1.0), 2).unwrap();
        assert_eq!(g.points(), &[0.0, 1.0]);
        assert_eq!(g.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn eleven_point_weights_sum_to_length() {
        let g = make_uniform_grid((0.0, 1.0), 11).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_and_degenerate() {
        assert!(matches!(
            make_uniform_grid((0.0, 1.0), 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(make_uniform_grid((1.0, 1.0), 5).is_err());
        assert!(Grid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn integrates_constant_linear_and_quadratic() {
        let g = make_uniform_grid((0.0f64, 1.0), 101).unwrap();
        let one = vec![1.0; 101];
        assert!((integrate(&g, &one).unwrap() - 1.0).abs() < 1e-12);
        let lin: Vec<f64> = g.points().to_vec();
        assert!((integrate(&g, &lin).unwrap() - 0.5).abs() < 1e-12);
        let sq: Vec<f64> = g.points().iter().map(|t| t * t).collect();
        // trapezoid error is h²/6 · (f'(1)-f'(0))/2 = 1.67e-5
        assert!((integrate(&g, &sq).unwrap() - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn integrate_length_mismatch() {
        let g = make_uniform_grid((0.0, 1.0), 5).unwrap();
        assert!(matches!(
            integrate(&g, &[1.0, 2.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn interpolation_and_domain() {
        let g = make_uniform_grid((0.0f64, 1.0), 3).unwrap();
        let f = [0.0, 1.0, 4.0];
        assert!((g.interpolate(&f, 0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((g.interpolate(&f, 1.0).unwrap() - 4.0).abs() < 1e-15);
        assert!(matches!(
            g.interpolate(&f, 1.5),
            Err(Error::OutOfDomain { .. })
        ));
        assert_eq!(g.index_of(0.5), Some(1));
        assert_eq!(g.index_of(0.3), None);
    }

    #[test]
    fn works_in_single_precision() {
        let g = make_uniform_grid((0.0f32, 2.0f32), 21).unwrap();
        let s: f32 = g.weights().iter().sum();
        assert!((s - 2.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn integrate_is_linear(
            f in proptest::collection::vec(-10.0f64..10.0, 17),
            g in proptest::collection::vec(-10.0f64..10.0, 17),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let grid = make_uniform_grid((-1.0, 2.0), 17).unwrap();
            let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let lhs = integrate(&grid, &combo).unwrap();
            let rhs = a * integrate(&grid, &f).unwrap() + b * integrate(&grid, &g).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn uniform_weights_symmetric(n in 2usize..200, lo in -5.0f64..5.0, len in 0.1f64..10.0) {
            let grid = make_uniform_grid((lo, lo + len), n).unwrap();
            let w = grid.weights();
            for j in 0..n {
                prop_assert!((w[j] - w[n - 1 - j]).abs() < 1e-12 * len.max(1.0));
            }
            let total: f64 = w.iter().sum();
            prop_assert!((total - len).abs() < 1e-12 * len.max(1.0) * 10.0);
        }
    }
}
