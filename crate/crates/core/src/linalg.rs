//! Dense linear algebra and random-matrix primitives.
//!
//! Thin wrappers over `nalgebra` that enforce symmetry checks, descending
//! eigenvalue order with deterministic tie-breaking, and rank-tolerant
//! projections.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{HsvarError, Result};

/// Eigen-decomposition with eigenvalues in non-increasing order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Singular value decomposition `a = u * diag(s) * v'` with `s` non-increasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Checks symmetry within `1e-8 * (1 + max|entry|)` and returns the
/// symmetrized matrix `(A + A')/2`.
pub fn symmetrize_checked(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(HsvarError::DimensionMismatch(format!("expected square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(HsvarError::NotPositiveDefinite);
    }
    let asym = max_abs(&(a - a.transpose()));
    let tol = 1e-8 * (1.0 + max_abs(a));
    if asym > tol {
        return Err(HsvarError::NotSymmetric { asymmetry: asym });
    }
    Ok((a + a.transpose()) * 0.5)
}

/// Lower-triangular Cholesky factor `L` with `L L' = omega`.
pub fn cholesky_lower(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize_checked(omega)?;
    let n = sym.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = sym[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(HsvarError::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = sym[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix with non-zero diagonal.
pub fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    l.solve_lower_triangular(&id).expect("lower-triangular factor with positive diagonal")
}

/// Symmetric eigen-decomposition, eigenvalues in descending order.
///
/// Near-ties (relative gap below `1e-10`) are ordered by the row index of the
/// largest-magnitude entry of each eigenvector. Each eigenvector is signed so
/// that its largest-magnitude entry is positive.
pub fn sym_eigen_desc(omega: &DMatrix<f64>) -> Result<SymEigen> {
    let sym = symmetrize_checked(omega)?;
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let argmax = |k: usize| -> usize {
        let col = eig.eigenvectors.column(k);
        let mut best = 0;
        for i in 1..n {
            if col[i].abs() > col[best].abs() + 1e-12 {
                best = i;
            }
        }
        best
    };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let scale = 1.0 + eig.eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let tol = 1e-10 * scale;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eig.eigenvalues[idx[end - 1]] - eig.eigenvalues[idx[end]] <= tol {
            end += 1;
        }
        idx[start..end].sort_by_key(|&k| argmax(k));
        start = end;
    }

    let mut values = DVector::<f64>::zeros(n);
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        let k = argmax(src);
        if col[k] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(SymEigen { values, vectors })
}

/// Full singular value decomposition of a square matrix.
pub fn svd_decomp(a: &DMatrix<f64>) -> Result<Svd> {
    if !a.is_square() {
        return Err(HsvarError::DimensionMismatch("svd_decomp expects a square matrix".into()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(HsvarError::DimensionMismatch("non-finite entry".into()));
    }
    let n = a.nrows();
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let mut uu = DMatrix::zeros(n, n);
    let mut vv = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    for (dst, &src) in idx.iter().enumerate() {
        s[dst] = svd.singular_values[src];
        uu.set_column(dst, &u.column(src));
        vv.set_column(dst, &vt.row(src).transpose());
    }
    Ok(Svd { u: uu, s, v: vv })
}

/// Orthonormal basis of the column span of `basis`, dropping directions whose
/// singular value is below `1e-12` relative to the largest.
pub fn orthonormal_span(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    if basis.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = SVD::new(basis.clone(), true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, x| m.max(*x));
    if smax == 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > 1e-12 * smax.max(1.0)).collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_column(dst, &u.column(src));
    }
    out
}

/// Orthonormal basis of the orthogonal complement of the column span of `basis`.
pub fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let span = orthonormal_span(basis);
    let proj = DMatrix::<f64>::identity(n, n) - &span * span.transpose();
    let eig = sym_eigen_desc(&((&proj + proj.transpose()) * 0.5)).expect("projector is symmetric");
    let k = n - span.ncols();
    eig.vectors.columns(0, k).into_owned()
}

/// Residual of `z` after least-squares projection onto the columns of `basis`.
pub fn project_out(z: &DVector<f64>, basis: &DMatrix<f64>) -> DVector<f64> {
    let u = orthonormal_span(basis);
    if u.ncols() == 0 {
        return z.clone();
    }
    let mut r = z - &u * (u.transpose() * z);
    // second pass removes rounding left by the first
    r -= &u * (u.transpose() * &r);
    r
}

/// Draw from the inverse-Wishart distribution with mean `scale / (dof - n - 1)`.
///
/// Uses the Bartlett decomposition of the Wishart draw of the inverse.
pub fn draw_inverse_wishart<R: Rng + ?Sized>(scale: &DMatrix<f64>, dof: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let n = scale.nrows();
    if !(dof > n as f64 + 1.0) {
        return Err(HsvarError::DofTooSmall { dof, min: n as f64 + 1.0 });
    }
    let s = symmetrize_checked(scale)?;
    let s_inv = s.clone().try_inverse().ok_or(HsvarError::NotPositiveDefinite)?;
    let l = cholesky_lower(&((&s_inv + s_inv.transpose()) * 0.5))?;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new(dof - i as f64).expect("positive dof");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let t = &l * a;
    // (T T')^{-1} = T^{-T} T^{-1}
    let t_inv = t.solve_lower_triangular(&DMatrix::identity(n, n)).ok_or(HsvarError::NotPositiveDefinite)?;
    let omega = t_inv.transpose() * t_inv;
    Ok((&omega + omega.transpose()) * 0.5)
}

/// Frobenius norm of a matrix.
pub fn frob(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

/// Symmetric positive-definite inverse via Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cholesky_lower(a)?;
    let li = lower_inverse(&l);
    Ok(li.transpose() * li)
}

/// Log-determinant of an SPD matrix.
pub fn spd_logdet(a: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky_lower(a)?;
    Ok(2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = random_matrix(n, n, rng);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn cholesky_trivial_cases() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(cholesky_lower(&i3).unwrap(), i3);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let l = cholesky_lower(&d).unwrap();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-15 && (l[(1, 1)] - 3.0).abs() < 1e-15);
        assert_eq!(l[(1, 0)], 0.0);
    }

    #[test]
    fn cholesky_errors() {
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_lower(&not_pd), Err(HsvarError::NotPositiveDefinite)));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(cholesky_lower(&asym), Err(HsvarError::NotSymmetric { .. })));
    }

    #[test]
    fn cholesky_random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..6 {
            let om = random_spd(n, &mut rng);
            let l = cholesky_lower(&om).unwrap();
            for i in 0..n {
                assert!(l[(i, i)] > 0.0);
                for j in (i + 1)..n {
                    assert_eq!(l[(i, j)], 0.0);
                }
            }
            assert!(frob(&(&l * l.transpose() - &om)) < 1e-10 * frob(&om).max(1.0));
        }
    }

    #[test]
    fn eigen_trivial_cases() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let e = sym_eigen_desc(&d).unwrap();
        assert_eq!(e.values.as_slice(), &[3.0, 2.0, 1.0]);
        for (k, row) in [2usize, 1, 0].iter().enumerate() {
            assert!((e.vectors[(*row, k)].abs() - 1.0).abs() < 1e-14);
        }
        let e = sym_eigen_desc(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0, 1.0]);
        // tie-break puts e1, e2, e3 in index order
        assert!(frob(&(e.vectors - DMatrix::<f64>::identity(3, 3))) < 1e-14);
    }

    #[test]
    fn eigen_random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..7 {
            let a = random_matrix(n, n, &mut rng);
            let s = (&a + a.transpose()) * 0.5;
            let e = sym_eigen_desc(&s).unwrap();
            let rec = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
            assert!(frob(&(rec - &s)) < 1e-10);
            for k in 1..n {
                assert!(e.values[k - 1] >= e.values[k]);
            }
        }
    }

    #[test]
    fn svd_trivial_and_random() {
        let s = svd_decomp(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.s.as_slice(), &[1.0, 1.0, 1.0]);
        let d = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -2.0]);
        let s = svd_decomp(&d).unwrap();
        assert!((s.s[0] - 3.0).abs() < 1e-14 && (s.s[1] - 2.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..6 {
            let a = random_matrix(n, n, &mut rng);
            let s = svd_decomp(&a).unwrap();
            let rec = &s.u * DMatrix::from_diagonal(&s.s) * s.v.transpose();
            assert!(frob(&(rec - &a)) < 1e-10);
        }
    }

    #[test]
    fn project_out_cases() {
        let z = DVector::from_vec(vec![1.0, 1.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let r = project_out(&z, &b);
        assert!((r[0]).abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
        assert_eq!(project_out(&z, &DMatrix::zeros(2, 0)), z);
    }

    #[test]
    fn project_out_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let z = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = random_matrix(6, 3, &mut rng);
            let btb = b.transpose() * &b;
            let coef = btb.try_inverse().unwrap() * b.transpose() * &z;
            let oracle = &z - &b * coef;
            let r = project_out(&z, &b);
            assert!((&r - &oracle).norm() < 1e-10);
            assert!((b.transpose() * &r).norm() < 1e-10);
        }
    }

    #[test]
    fn project_out_rank_deficient() {
        let b = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let z = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let r = project_out(&z, &b);
        assert!((r - DVector::from_vec(vec![0.0, 2.0, 3.0])).norm() < 1e-12);
    }

    #[test]
    fn inverse_wishart_mean_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let dof = 8.0;
        let draws = 100_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..draws {
            acc += draw_inverse_wishart(&scale, dof, &mut rng).unwrap();
        }
        acc /= draws as f64;
        let oracle = &scale / (dof - 2.0 - 1.0);
        for i in 0..2 {
            for j in 0..2 {
                let rel = (acc[(i, j)] - oracle[(i, j)]).abs() / oracle[(i, j)].abs();
                assert!(rel < 0.03, "entry ({i},{j}) rel error {rel}");
            }
        }
    }

    #[test]
    fn inverse_wishart_univariate() {
        // n = 1: s / chi2(dof), mean s/(dof-2), var 2 s^2 / ((dof-2)^2 (dof-4))
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = 3.0;
        let dof = 10.0;
        let m = 50_000;
        let scale = DMatrix::from_element(1, 1, s);
        let xs: Vec<f64> = (0..m).map(|_| draw_inverse_wishart(&scale, dof, &mut rng).unwrap()[(0, 0)]).collect();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let oracle = s / (dof - 2.0);
        let sd = (2.0 * s * s / ((dof - 2.0).powi(2) * (dof - 4.0))).sqrt();
        assert!((mean - oracle).abs() < 4.0 * sd / (m as f64).sqrt());
    }

    #[test]
    fn inverse_wishart_dof_and_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(draw_inverse_wishart(&s, 4.0, &mut rng), Err(HsvarError::DofTooSmall { .. })));
        for _ in 0..200 {
            let w = draw_inverse_wishart(&s, 5.5, &mut rng).unwrap();
            assert!(cholesky_lower(&w).is_ok());
        }
    }

    #[test]
    fn inverse_wishart_reproducible() {
        let s = DMatrix::<f64>::identity(3, 3);
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let a = draw_inverse_wishart(&s, 7.0, &mut r1).unwrap();
            let b = draw_inverse_wishart(&s, 7.0, &mut r2).unwrap();
            assert_eq!(a, b);
        }
    }

    proptest! {
        #[test]
        fn prop_cholesky_roundtrip(seed in 0u64..10_000, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let om = random_spd(n, &mut rng);
            let l = cholesky_lower(&om).unwrap();
            prop_assert!(frob(&(&l * l.transpose() - &om)) <= 1e-10 * frob(&om));
        }

        #[test]
        fn prop_eigen_matches_squared_singular_values(seed in 0u64..10_000, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(n, n, &mut rng);
            let om = &a * a.transpose();
            let e = sym_eigen_desc(&om).unwrap();
            let s = svd_decomp(&a).unwrap();
            for k in 0..n {
                prop_assert!((e.values[k] - s.s[k] * s.s[k]).abs() < 1e-8 * (1.0 + e.values[0]));
            }
        }

        #[test]
        fn prop_project_out_idempotent(seed in 0u64..10_000, k in 0usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = random_matrix(5, k, &mut rng);
            let once = project_out(&z, &b);
            let twice = project_out(&once, &b);
            prop_assert!((once - twice).norm() < 1e-12);
        }
    }
}
