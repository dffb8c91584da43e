use ndarray::{Array1, Array2};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place lower Cholesky factor (row-oriented). Returns `false` if the matrix is not
/// numerically positive definite. Only the lower triangle of the result is meaningful.
fn cholesky(a: &mut Array2<f64>) -> bool {
    let n = a.nrows();
    let Some(m) = a.as_slice_mut() else {
        return false;
    };
    for i in 0..n {
        let (done, rest) = m.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..i {
            let row_j = &done[j * n..j * n + n];
            let s = row_i[j] - dot(&row_i[..j], &row_j[..j]);
            row_i[j] = s / row_j[j];
        }
        let d = row_i[i] - dot(&row_i[..i], &row_i[..i]);
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        row_i[i] = d.sqrt();
    }
    true
}

fn solve_factored(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut z = b.clone();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    z
}

/// Ridge values tried in turn when the plain system is singular.
pub const RIDGE_LADDER: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Solves `(a + ridge*I) x = b` for symmetric `a`, first with no ridge and then with each
/// value of [`RIDGE_LADDER`] until the factorization succeeds. Returns the solution and
/// the ridge used.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Option<(Array1<f64>, f64)> {
    std::iter::once(0.0).chain(RIDGE_LADDER).find_map(|ridge| {
        let mut m = a.clone();
        if ridge > 0.0 {
            m.diag_mut().iter_mut().for_each(|d| *d += ridge);
        }
        cholesky(&mut m).then(|| {
            let x = solve_factored(&m, b);
            x.iter().all(|v| v.is_finite()).then_some((x, ridge))
        })?
    })
}
