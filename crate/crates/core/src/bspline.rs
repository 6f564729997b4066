//! B-spline bases and difference penalties.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Real;

/// B-spline basis of a given degree on `[lo, hi]`.
///
/// [`BSplineBasis::uniform`] builds the equally spaced layout whose knots run
/// `degree` spacings past each end of the domain; every basis function is then
/// a translate of the others and polynomials of degree below the penalty order
/// lie in the null space of the difference penalty.
/// [`BSplineBasis::clamped`] repeats the boundary knots instead.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis<T> {
    degree: usize,
    lo: T,
    hi: T,
    knots: Vec<T>,
}

impl<T: Real> BSplineBasis<T> {
    /// Clamped basis with explicit interior knots, which must lie strictly
    /// inside `(lo, hi)` in increasing order.
    pub fn clamped(lo: T, hi: T, interior: Vec<T>, degree: usize) -> Result<Self> {
        check_interior(lo, hi, &interior)?;
        let mut knots = Vec::with_capacity(interior.len() + 2 * (degree + 1));
        knots.extend(std::iter::repeat(lo).take(degree + 1));
        knots.extend(interior.iter().copied());
        knots.extend(std::iter::repeat(hi).take(degree + 1));
        Ok(Self {
            degree,
            lo,
            hi,
            knots,
        })
    }

    /// `n_interior` equally spaced interior knots, extended by `degree`
    /// equally spaced knots beyond each boundary.
    pub fn uniform(lo: T, hi: T, n_interior: usize, degree: usize) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("spline domain must be finite and nondegenerate"));
        }
        let segments = n_interior + 1;
        let step = (hi - lo) / T::from_usize_lossy(segments);
        let n_knots = segments + 1 + 2 * degree;
        let knots = (0..n_knots)
            .map(|j| {
                if j == degree {
                    lo
                } else if j == degree + segments {
                    hi
                } else {
                    lo + step * (T::from_usize_lossy(j) - T::from_usize_lossy(degree))
                }
            })
            .collect();
        Ok(Self {
            degree,
            lo,
            hi,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Knots strictly inside the domain.
    pub fn interior_knots(&self) -> &[T] {
        let n = self.n_basis();
        &self.knots[self.degree + 1..n]
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn lo(&self) -> T {
        self.lo
    }

    pub fn hi(&self) -> T {
        self.hi
    }

    pub fn contains(&self, x: T) -> bool {
        let slack = (self.hi() - self.lo()) * T::lit(1e-12);
        x >= self.lo() - slack && x <= self.hi() + slack
    }

    /// Index of the first nonzero basis function at `x` and the `degree + 1`
    /// nonzero values. `x` is clamped to the domain.
    pub fn eval_nonzero(&self, x: T) -> (usize, Vec<T>) {
        let q = self.degree;
        let n = self.n_basis();
        let u = &self.knots;
        let x = x.max(self.lo()).min(self.hi());
        // span k with u[k] <= x < u[k+1], q <= k <= n-1
        let k = if x >= u[n] {
            n - 1
        } else {
            (u.partition_point(|&v| v <= x) - 1).clamp(q, n - 1)
        };
        let mut vals = vec![T::zero(); q + 1];
        let mut left = vec![T::zero(); q + 1];
        let mut right = vec![T::zero(); q + 1];
        vals[0] = T::one();
        for j in 1..=q {
            left[j] = x - u[k + 1 - j];
            right[j] = u[k + j] - x;
            let mut saved = T::zero();
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        (k - q, vals)
    }

    /// All basis functions at `x`.
    pub fn eval(&self, x: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_basis()];
        let (first, vals) = self.eval_nonzero(x);
        out[first..first + vals.len()].copy_from_slice(&vals);
        out
    }

    /// Dense design matrix `B[i, j] = B_j(x_i)`.
    pub fn design(&self, xs: &[T]) -> Array2<T> {
        let mut b = Array2::zeros((xs.len(), self.n_basis()));
        for (i, &x) in xs.iter().enumerate() {
            let (first, vals) = self.eval_nonzero(x);
            for (r, v) in vals.into_iter().enumerate() {
                b[[i, first + r]] = v;
            }
        }
        b
    }

    /// Basis of one degree lower on the same interior knots, which carries
    /// the derivative of any spline in this basis.
    pub fn derivative_basis(&self) -> Option<Self> {
        (self.degree > 0).then(|| Self {
            degree: self.degree - 1,
            lo: self.lo,
            hi: self.hi,
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
        })
    }

    /// Coefficients of the derivative spline in `derivative_basis()`.
    ///
    /// `d_j = q (c_{j+1} − c_j) / (u_{j+q+1} − u_{j+1})`.
    pub fn differentiate_coefficients(&self, coefs: &[T]) -> Vec<T> {
        let q = self.degree;
        assert!(q > 0, "cannot differentiate a degree-0 spline");
        let u = &self.knots;
        let qf = T::from_usize_lossy(q);
        coefs
            .windows(2)
            .enumerate()
            .map(|(j, c)| {
                let span = u[j + q + 1] - u[j + 1];
                if span > T::zero() {
                    qf * (c[1] - c[0]) / span
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    /// Basis and coefficients of the `d`-th derivative.
    pub fn derivative(&self, coefs: &[T], d: usize) -> Result<(Self, Vec<T>)> {
        if d > self.degree {
            return Err(Error::invalid(format!(
                "derivative order {d} exceeds spline degree {}",
                self.degree
            )));
        }
        let mut basis = self.clone();
        let mut c = coefs.to_vec();
        for _ in 0..d {
            c = basis.differentiate_coefficients(&c);
            basis = basis.derivative_basis().expect("degree checked above");
        }
        Ok((basis, c))
    }

    /// Evaluates `Σ c_j B_j(x)`.
    pub fn combine(&self, coefs: &[T], x: T) -> T {
        let (first, vals) = self.eval_nonzero(x);
        vals.iter()
            .zip(&coefs[first..])
            .fold(T::zero(), |acc, (&b, &c)| acc + b * c)
    }
}

fn check_interior<T: Real>(lo: T, hi: T, interior: &[T]) -> Result<()> {
    if !(hi > lo) {
        return Err(Error::invalid("spline domain must be nondegenerate"));
    }
    if interior.iter().any(|&k| !(k > lo && k < hi)) {
        return Err(Error::invalid("interior knots must lie strictly inside the domain"));
    }
    if interior.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("interior knots must be strictly increasing"));
    }
    Ok(())
}

/// `order`-th difference operator as an `(n − order) × n` matrix.
pub fn difference_matrix<T: Real>(n: usize, order: usize) -> Array2<T> {
    let mut d = Array2::<T>::eye(n);
    for _ in 0..order {
        let rows = d.nrows();
        if rows < 2 {
            return Array2::zeros((0, n));
        }
        let next = Array2::from_shape_fn((rows - 1, n), |(i, j)| d[[i + 1, j]] - d[[i, j]]);
        d = next;
    }
    d
}

/// Penalty `DᵀD` for the `order`-th difference operator.
pub fn difference_penalty<T: Real>(n: usize, order: usize) -> Array2<T> {
    let d = difference_matrix::<T>(n, order);
    d.t().dot(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_count() {
        let b = BSplineBasis::<f64>::uniform(0.0, 1.0, 30, 3).unwrap();
        assert_eq!(b.n_basis(), 34);
        assert_eq!(b.knots().len(), 34 + 4);
        assert_eq!(b.interior_knots().len(), 30);
        let c = BSplineBasis::<f64>::clamped(0.0, 1.0, vec![0.25, 0.5, 0.75], 3).unwrap();
        assert_eq!(c.n_basis(), 7);
        assert_eq!(c.interior_knots(), &[0.25, 0.5, 0.75]);
    }

    #[test]
    fn partition_of_unity_at_random_points() {
        let b = BSplineBasis::<f64>::uniform(0.0, 1.0, 30, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: f64 = rng.random_range(0.0..1.0);
            let s: f64 = b.eval(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert!((b.eval(1.0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((b.eval(0.0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = BSplineBasis::<f64>::clamped(0.0, 1.0, vec![0.3, 0.6], 3).unwrap();
        assert!((c.eval(1.0)[c.n_basis() - 1] - 1.0).abs() < 1e-12);
        for _ in 0..100 {
            let x: f64 = rng.random_range(0.0..1.0);
            assert!((c.eval(x).iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_of_coefficients_matches_finite_difference() {
        let b = BSplineBasis::<f64>::uniform(0.0, 2.0, 7, 3).unwrap();
        let coefs: Vec<f64> = (0..b.n_basis()).map(|j| ((j * 7) % 5) as f64 - 2.0).collect();
        let (db, dc) = b.derivative(&coefs, 1).unwrap();
        let h = 1e-6;
        for k in 1..40 {
            let x = 2.0 * k as f64 / 40.0;
            let fd = (b.combine(&coefs, x + h) - b.combine(&coefs, x - h)) / (2.0 * h);
            assert!((db.combine(&dc, x) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn clamped_derivative_matches_finite_difference() {
        let b = BSplineBasis::<f64>::clamped(0.0, 1.0, vec![0.2, 0.45, 0.7], 3).unwrap();
        let coefs = [0.3, -1.0, 2.0, 0.5, 1.5, -0.2, 0.8];
        let (db, dc) = b.derivative(&coefs, 2).unwrap();
        let h = 1e-4;
        // off the knots, where the third derivative jumps
        for k in 0..20 {
            let x = (k as f64 + 0.5) / 20.0;
            let fd = (b.combine(&coefs, x + h) - 2.0 * b.combine(&coefs, x) + b.combine(&coefs, x - h)) / (h * h);
            assert!((db.combine(&dc, x) - fd).abs() < 1e-4, "x={x} {} {fd}", db.combine(&dc, x));
        }
    }

    #[test]
    fn linear_coefficients_in_penalty_null_space() {
        // coefficients of t on a uniform basis are the (equally spaced)
        // Greville abscissae
        let b = BSplineBasis::<f64>::uniform(0.0, 1.0, 9, 3).unwrap();
        let q = b.degree();
        let greville: Vec<f64> = (0..b.n_basis())
            .map(|j| b.knots()[j + 1..=j + q].iter().sum::<f64>() / q as f64)
            .collect();
        for x in [0.0, 0.13, 0.5, 0.99, 1.0] {
            assert!((b.combine(&greville, x) - x).abs() < 1e-12);
        }
        let d = difference_matrix::<f64>(b.n_basis(), 2);
        assert!(d.dot(&ndarray::Array1::from(greville)).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn derivative_order_above_degree_rejected() {
        let b = BSplineBasis::<f64>::uniform(0.0, 1.0, 3, 2).unwrap();
        assert!(b.derivative(&vec![0.0; b.n_basis()], 3).is_err());
        assert!(b.derivative(&vec![0.0; b.n_basis()], 2).is_ok());
    }

    #[test]
    fn second_difference_annihilates_linear() {
        let d = difference_matrix::<f64>(6, 2);
        assert_eq!(d.dim(), (4, 6));
        let lin = ndarray::Array1::from_iter((0..6).map(|j| 2.0 * j as f64 + 1.0));
        assert!(d.dot(&lin).iter().all(|v| v.abs() < 1e-12));
    }
}
