//! Small dense complex solvers used by the beamformer.

use ndarray::Array2;
use num_complex::Complex64;

/// Solve A X = B for X with LU decomposition and partial pivoting.
/// A is n x n, B is n x k. Returns None if A is numerically singular.
pub fn lu_solve(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Option<Array2<Complex64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.nrows(), n);
    let k = b.ncols();

    let mut lu = a.clone();
    let mut x = b.clone();

    for col in 0..n {
        // pivot
        let mut pivot = col;
        let mut pmax = lu[(col, col)].norm();
        for row in col + 1..n {
            let v = lu[(row, col)].norm();
            if v > pmax {
                pmax = v;
                pivot = row;
            }
        }
        if pmax == 0.0 || !pmax.is_finite() {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                lu.swap((col, j), (pivot, j));
            }
            for j in 0..k {
                x.swap((col, j), (pivot, j));
            }
        }
        let d = lu[(col, col)];
        for row in col + 1..n {
            let factor = lu[(row, col)] / d;
            lu[(row, col)] = factor;
            for j in col + 1..n {
                let upd = lu[(col, j)] * factor;
                lu[(row, j)] -= upd;
            }
            for j in 0..k {
                let upd = x[(col, j)] * factor;
                x[(row, j)] -= upd;
            }
        }
    }

    // back substitution
    for j in 0..k {
        for row in (0..n).rev() {
            let mut s = x[(row, j)];
            for c in row + 1..n {
                s -= lu[(row, c)] * x[(c, j)];
            }
            x[(row, j)] = s / lu[(row, row)];
        }
    }
    if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Eigenvalues of a 2x2 Hermitian matrix given as (b11, b12, b22),
/// returned as (min, max).
pub fn herm2_eigs(b11: f64, b12: Complex64, b22: f64) -> (f64, f64) {
    let t = 0.5 * (b11 + b22);
    let d = 0.5 * (b11 - b22);
    let r = (d * d + b12.norm_sqr()).sqrt();
    (t - r, t + r)
}
