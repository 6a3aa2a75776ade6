//! Dense linear-algebra helpers: matrix exponential and Hermitian spectra.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

fn norm1(a: &DMatrix<C64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé(8)
/// approximant. The scaled norm is kept below 1/2, where the truncation error
/// is below double precision.
pub fn expm(a: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    assert!(a.is_square());
    let n = a.nrows();
    let nrm = norm1(a);
    let squarings = if nrm > 0.5 {
        (nrm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * C64::new(0.5f64.powi(squarings), 0.0);

    // Padé(q,q) coefficients c_k = (2q-k)! q! / ((2q)! k! (q-k)!)
    const Q: usize = 8;
    let mut coeff = vec![1.0f64; Q + 1];
    for k in 1..=Q {
        coeff[k] = coeff[k - 1] * (Q + 1 - k) as f64 / (k as f64 * (2 * Q + 1 - k) as f64);
    }
    let id = DMatrix::<C64>::identity(n, n);
    let mut num = id.clone();
    let mut den = id.clone();
    let mut power = id;
    for (k, &c) in coeff.iter().enumerate().skip(1) {
        power = &power * &scaled;
        let term = &power * C64::new(c, 0.0);
        num += &term;
        if k % 2 == 0 {
            den += &term;
        } else {
            den -= &term;
        }
    }
    let mut result = den.lu().solve(&num).ok_or(Error::Singular("expm"))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Smallest eigenvalue of the Hermitian part of `a`.
pub fn min_hermitian_eigenvalue(a: &DMatrix<C64>) -> f64 {
    let herm = (a + a.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest absolute entry.
pub fn max_abs(a: &DMatrix<C64>) -> f64 {
    a.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponential_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(-3.0, 0.0),
            C64::new(0.0, 2.0),
            C64::new(5.0, -1.0),
        ]));
        let e = expm(&a).unwrap();
        for i in 0..3 {
            let expect = a[(i, i)].exp();
            assert_abs_diff_eq!((e[(i, i)] - expect).norm() / expect.norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn rotation_generator() {
        // exp(-i θ σ_x) = cos θ - i sin θ σ_x
        let theta = 7.3;
        let mut a = DMatrix::<C64>::zeros(2, 2);
        a[(0, 1)] = C64::new(0.0, -theta);
        a[(1, 0)] = C64::new(0.0, -theta);
        let e = expm(&a).unwrap();
        assert_abs_diff_eq!((e[(0, 0)] - C64::new(theta.cos(), 0.0)).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((e[(0, 1)] - C64::new(0.0, -theta.sin())).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nilpotent_block() {
        let mut a = DMatrix::<C64>::zeros(2, 2);
        a[(0, 1)] = C64::new(4.0, 0.0);
        let e = expm(&a).unwrap();
        assert_abs_diff_eq!((e[(0, 1)] - C64::new(4.0, 0.0)).norm(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!((e[(0, 0)] - C64::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-13);
    }
}
