//! Identification through heteroskedasticity: eigen and SVD solutions,
//! normalization, observational equivalents, eigenvalue pooling and the
//! sequential point-identification construction.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HsvarError, Result};
use crate::linalg::{cholesky_lower, lower_inverse, orthonormal_span, svd_decomp, sym_eigen_desc};
use crate::reduced_form::ReducedForm;
use crate::restrictions::OrderedProgram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SignRule {
    /// Diagonal of `A_0 = Q' Omega_1tr^{-1}` non-negative.
    #[default]
    DiagA0Nonneg,
    /// Diagonal of `C = Omega_1tr Q` non-negative.
    DiagCNonneg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OrderRule {
    #[default]
    LambdaDescending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NormalizationRule {
    pub sign_rule: SignRule,
    pub order_rule: OrderRule,
}

/// Contiguous grouping of eigenvalue positions (descending order) into blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    sizes: Vec<usize>,
}

impl Partition {
    pub fn new(sizes: Vec<usize>, n: usize) -> Result<Self> {
        if sizes.iter().any(|&s| s == 0) {
            return Err(HsvarError::InvalidPartition("empty block".into()));
        }
        let total: usize = sizes.iter().sum();
        if total != n {
            return Err(HsvarError::InvalidPartition(format!("block sizes sum to {total}, expected {n}")));
        }
        Ok(Partition { sizes })
    }

    pub fn singletons(n: usize) -> Self {
        Partition { sizes: vec![1; n] }
    }

    /// Builds a partition from pooled ranges of 0-based positions (inclusive);
    /// positions not covered form singleton blocks.
    pub fn from_pools(n: usize, pools: &[(usize, usize)]) -> Result<Self> {
        let mut owner = vec![usize::MAX; n];
        for (k, &(a, b)) in pools.iter().enumerate() {
            if a > b || b >= n {
                return Err(HsvarError::InvalidPartition(format!("pool {}..{} outside 1..{n}", a + 1, b + 1)));
            }
            for p in owner.iter_mut().take(b + 1).skip(a) {
                if *p != usize::MAX {
                    return Err(HsvarError::InvalidPartition("overlapping pools".into()));
                }
                *p = k;
            }
        }
        let mut sizes = Vec::new();
        let mut i = 0;
        while i < n {
            if owner[i] == usize::MAX {
                sizes.push(1);
                i += 1;
            } else {
                let k = owner[i];
                let start = i;
                while i < n && owner[i] == k {
                    i += 1;
                }
                sizes.push(i - start);
            }
        }
        Partition::new(sizes, n)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn blocks(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect()
    }

    pub fn block_of(&self, position: usize) -> usize {
        self.blocks().iter().position(|r| r.contains(&position)).expect("position within partition")
    }
}

/// Solution of the eigen problem together with the declared partition.
#[derive(Debug, Clone)]
pub struct EigenIdentification {
    pub lambda: DVector<f64>,
    pub q: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Lower Cholesky factor of `Omega_1`.
    pub omega1_chol: DMatrix<f64>,
    pub partition: Partition,
    /// Columns whose sign-rule entry was exactly zero (kept positive).
    pub degenerate_signs: Vec<usize>,
}

impl EigenIdentification {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// `A_0 = Q' Omega_1tr^{-1}`.
    pub fn a0(&self) -> DMatrix<f64> {
        self.q.transpose() * lower_inverse(&self.omega1_chol)
    }

    /// Orthonormal basis of the eigenspace of block `k`.
    pub fn block_basis(&self, k: usize) -> DMatrix<f64> {
        let r = &self.partition.blocks()[k];
        self.q.columns(r.start, r.len()).into_owned()
    }

    /// Eigenvectors of every block other than `k`.
    pub fn complement_basis(&self, k: usize) -> DMatrix<f64> {
        let r = &self.partition.blocks()[k];
        let n = self.n();
        let idx: Vec<usize> = (0..n).filter(|i| !r.contains(i)).collect();
        DMatrix::from_fn(n, idx.len(), |i, j| self.q[(i, idx[j])])
    }

    /// `Omega_2` implied by the current `(Q, lambda)`.
    pub fn implied_omega2(&self) -> DMatrix<f64> {
        &self.c * DMatrix::from_diagonal(&self.lambda) * self.c.transpose()
    }

    fn refresh_c(&mut self) {
        self.c = &self.omega1_chol * &self.q;
    }
}

/// Structural parameters `(A_0, A_+, Lambda)` with the matching impact matrix.
#[derive(Debug, Clone)]
pub struct StructuralParams {
    pub a0: DMatrix<f64>,
    pub a_plus: DMatrix<f64>,
    pub lambda: DVector<f64>,
    /// `A_0^{-1}`.
    pub c: DMatrix<f64>,
    /// Rotation, columns in shock order.
    pub q: DMatrix<f64>,
}

fn sign_entry(l: &DMatrix<f64>, l_inv: &DMatrix<f64>, q: &DMatrix<f64>, j: usize, rule: SignRule) -> f64 {
    match rule {
        SignRule::DiagA0Nonneg => q.column(j).dot(&l_inv.column(j)),
        SignRule::DiagCNonneg => l.row(j).transpose().dot(&q.column(j)),
    }
}

/// Reorders by descending eigenvalue (stable) and applies the sign rule.
pub fn normalize(sol: &EigenIdentification, norm: &NormalizationRule) -> EigenIdentification {
    let n = sol.n();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| sol.lambda[b].total_cmp(&sol.lambda[a]));
    let mut q = DMatrix::zeros(n, n);
    let mut lambda = DVector::zeros(n);
    for (dst, &src) in idx.iter().enumerate() {
        q.set_column(dst, &sol.q.column(src));
        lambda[dst] = sol.lambda[src];
    }
    let l_inv = lower_inverse(&sol.omega1_chol);
    let mut degenerate = Vec::new();
    for j in 0..n {
        let s = sign_entry(&sol.omega1_chol, &l_inv, &q, j, norm.sign_rule);
        if s == 0.0 {
            degenerate.push(j);
        } else if s < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = EigenIdentification {
        lambda,
        q,
        c: DMatrix::zeros(n, n),
        omega1_chol: sol.omega1_chol.clone(),
        partition: sol.partition.clone(),
        degenerate_signs: degenerate,
    };
    out.refresh_c();
    out
}

/// Solves `Omega_1tr^{-1} Omega_2 Omega_1tr^{-1}' = Q Lambda Q'`.
pub fn solve_eigen(rf: &ReducedForm, norm: &NormalizationRule) -> Result<EigenIdentification> {
    let l = cholesky_lower(&rf.omega1)?;
    let l_inv = lower_inverse(&l);
    cholesky_lower(&rf.omega2)?;
    let m = &l_inv * &rf.omega2 * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = sym_eigen_desc(&m)?;
    let n = rf.n();
    let raw = EigenIdentification {
        lambda: eig.values,
        q: eig.vectors,
        c: DMatrix::zeros(n, n),
        omega1_chol: l,
        partition: Partition::singletons(n),
        degenerate_signs: Vec::new(),
    };
    Ok(normalize(&raw, norm))
}

/// Solves through the SVD of `Omega_1tr^{-1} Omega_2tr`: `Lambda` is the squared
/// singular values and `Q` the left singular vectors.
pub fn solve_svd(rf: &ReducedForm, norm: &NormalizationRule) -> Result<EigenIdentification> {
    let l1 = cholesky_lower(&rf.omega1)?;
    let l2 = cholesky_lower(&rf.omega2)?;
    let a = lower_inverse(&l1) * l2;
    let svd = svd_decomp(&a)?;
    let n = rf.n();
    let raw = EigenIdentification {
        lambda: svd.s.map(|s| s * s),
        q: svd.u,
        c: DMatrix::zeros(n, n),
        omega1_chol: l1,
        partition: Partition::singletons(n),
        degenerate_signs: Vec::new(),
    };
    Ok(normalize(&raw, norm))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Permutation matrix with `P[i, perm[i]] = 1`.
pub fn permutation_matrix(perm: &[usize]) -> DMatrix<f64> {
    let n = perm.len();
    let mut p = DMatrix::zeros(n, n);
    for (i, &j) in perm.iter().enumerate() {
        p[(i, j)] = 1.0;
    }
    p
}

pub const ENUMERATION_LIMIT: usize = 4;

/// All `2^n n!` pairs `(C S P', diag(P Lambda P'))`.
pub fn enumerate_observational_equivalents(
    c: &DMatrix<f64>,
    lambda: &DVector<f64>,
) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
    let n = c.ncols();
    if n > ENUMERATION_LIMIT {
        return Err(HsvarError::DimensionTooLarge { n, limit: ENUMERATION_LIMIT });
    }
    let lam = DMatrix::from_diagonal(lambda);
    let perms = permutations(n);
    let mut out = Vec::with_capacity((1 << n) * perms.len());
    for mask in 0..(1usize << n) {
        let s = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }));
        for perm in &perms {
            let p = permutation_matrix(perm);
            let cc = c * &s * p.transpose();
            let ll = (&p * &lam * p.transpose()).diagonal();
            out.push((cc, ll));
        }
    }
    Ok(out)
}

/// Replaces eigenvalues by their block means and re-orthonormalizes the
/// block eigenvectors.
pub fn pool_eigenvalues(sol: &EigenIdentification, partition: &Partition) -> Result<EigenIdentification> {
    let n = sol.n();
    if partition.n() != n {
        return Err(HsvarError::InvalidPartition(format!(
            "partition covers {} positions, expected {n}",
            partition.n()
        )));
    }
    let mut out = sol.clone();
    out.partition = partition.clone();
    for r in partition.blocks() {
        if r.len() < 2 {
            continue;
        }
        let mean = sol.lambda.rows(r.start, r.len()).sum() / r.len() as f64;
        for k in r.clone() {
            out.lambda[k] = mean;
        }
        let block = sol.q.columns(r.start, r.len()).into_owned();
        let qr = block.clone().qr();
        let mut qb = qr.q();
        let rr = qr.r();
        for k in 0..r.len() {
            if rr[(k, k)] < 0.0 {
                qb.column_mut(k).neg_mut();
            }
        }
        out.q.columns_mut(r.start, r.len()).copy_from(&qb);
    }
    out.refresh_c();
    Ok(out)
}

/// Orthonormal basis of `{v in span(space) : rows v = 0}` and the rank of
/// `rows` restricted to `space`. Rows are scaled to unit length first.
pub fn constrained_basis(space: &DMatrix<f64>, rows: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let m = space.ncols();
    if rows.nrows() == 0 {
        return (space.clone(), 0);
    }
    let mut scaled = rows.clone();
    for mut r in scaled.row_iter_mut() {
        let nr = r.norm();
        if nr > 0.0 {
            r /= nr;
        }
    }
    let a = &scaled * space; // k x m
    let gram = a.transpose() * &a;
    let eig = sym_eigen_desc(&((&gram + gram.transpose()) * 0.5)).expect("gram is symmetric");
    let tol = 1e-10;
    let rank = eig.values.iter().filter(|&&v| v > tol).count();
    let null = eig.vectors.columns(rank, m - rank).into_owned();
    (orthonormal_span(&(space * null)), rank)
}

/// Sequential construction of a point-identified rotation.
///
/// Within every block, shocks are visited in the program's order; each column
/// is the unique unit vector of the block eigenspace orthogonal to the earlier
/// columns and to the shock's zero-restriction rows, signed by its
/// normalization row. Columns of the result follow user shock order.
pub fn exact_point_identify(
    rf: &ReducedForm,
    sol: &EigenIdentification,
    program: &OrderedProgram,
) -> Result<StructuralParams> {
    let n = sol.n();
    let prog = &program.program;
    let mut q_user = DMatrix::zeros(n, n);
    for (k, order) in program.order.iter().enumerate() {
        let space = sol.block_basis(k);
        let mut built: Vec<DVector<f64>> = Vec::new();
        for &shock in order {
            let f = &prog.zeros[shock];
            let mut rows = DMatrix::zeros(f.nrows() + built.len(), n);
            rows.rows_mut(0, f.nrows()).copy_from(f);
            for (i, b) in built.iter().enumerate() {
                rows.row_mut(f.nrows() + i).copy_from(&b.transpose());
            }
            let (basis, rank) = constrained_basis(&space, &rows);
            if rank < rows.nrows() || basis.ncols() != 1 {
                return Err(HsvarError::RedundantRestrictions { shock });
            }
            let mut q = basis.column(0).into_owned();
            if prog.norm_rows[shock].dot(&q) < 0.0 {
                q.neg_mut();
            }
            q_user.set_column(shock, &q);
            built.push(q);
        }
    }
    let lambda = DVector::from_fn(n, |j, _| sol.lambda[prog.position[j]]);
    Ok(structural_from_rotation(rf, &sol.omega1_chol, q_user, lambda))
}

/// Assembles `(A_0, A_+, Lambda)` from a rotation in shock order.
pub fn structural_from_rotation(
    rf: &ReducedForm,
    omega1_chol: &DMatrix<f64>,
    q: DMatrix<f64>,
    lambda: DVector<f64>,
) -> StructuralParams {
    let a0 = q.transpose() * lower_inverse(omega1_chol);
    let a_plus = &a0 * &rf.b;
    let c = omega1_chol * &q;
    StructuralParams { a0, a_plus, lambda, c, q }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frob;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rf_from(c: &DMatrix<f64>, lambda: &[f64]) -> ReducedForm {
        let n = c.nrows();
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
        ReducedForm { b: DMatrix::zeros(n, n + 1), omega1: c * c.transpose(), omega2: c * lam * c.transpose() }
    }

    fn random_c(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            let z: f64 = rng.sample(StandardNormal);
            if i == j {
                1.5 + z.abs()
            } else {
                0.5 * z
            }
        })
    }

    #[test]
    fn identity_covariances() {
        let rf = rf_from(&DMatrix::identity(3, 3), &[1.0, 1.0, 1.0]);
        let sol = solve_eigen(&rf, &NormalizationRule::default()).unwrap();
        assert!((sol.lambda.clone() - DVector::from_element(3, 1.0)).amax() < 1e-12);
        assert!((sol.q.clone() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn forward_construction_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let c0 = random_c(3, &mut rng);
            let rf = rf_from(&c0, &[4.0, 1.0, 0.25]);
            let sol = solve_eigen(&rf, &NormalizationRule::default()).unwrap();
            // normalize the truth by the same rule: diag(A0) >= 0
            let a0 = c0.clone().try_inverse().unwrap();
            let mut c_ref = c0.clone();
            for j in 0..3 {
                if a0[(j, j)] < 0.0 {
                    c_ref.column_mut(j).neg_mut();
                }
            }
            assert!((sol.c.clone() - c_ref).amax() < 1e-8);
            assert!((sol.lambda.clone() - DVector::from_vec(vec![4.0, 1.0, 0.25])).amax() < 1e-8);
            assert!(frob(&(&sol.c * sol.c.transpose() - &rf.omega1)) < 1e-8);
            assert!(frob(&(sol.implied_omega2() - &rf.omega2)) < 1e-8);
        }
    }

    #[test]
    fn svd_proportional_and_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c0 = random_c(3, &mut rng);
        let om1 = &c0 * c0.transpose();
        let rf = ReducedForm { b: DMatrix::zeros(3, 4), omega1: om1.clone(), omega2: &om1 * 4.0 };
        let s = solve_svd(&rf, &NormalizationRule::default()).unwrap();
        assert!((s.lambda.clone() - DVector::from_element(3, 4.0)).amax() < 1e-10);
        let e = solve_eigen(&rf, &NormalizationRule::default()).unwrap();
        assert!((e.lambda.clone() - DVector::from_element(3, 4.0)).amax() < 1e-10);

        let rf = rf_from(&c0, &[2.5, 1.1, 0.3]);
        let e = solve_eigen(&rf, &NormalizationRule::default()).unwrap();
        let s = solve_svd(&rf, &NormalizationRule::default()).unwrap();
        assert!((e.lambda - s.lambda).amax() < 1e-8);
        assert!((e.q - s.q).amax() < 1e-7);
    }

    #[test]
    fn enumeration_counts_and_validity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_c(3, &mut rng);
        let lam = DVector::from_vec(vec![3.0, 1.0, 0.5]);
        let om1 = &c * c.transpose();
        let om2 = &c * DMatrix::from_diagonal(&lam) * c.transpose();
        let all = enumerate_observational_equivalents(&c, &lam).unwrap();
        assert_eq!(all.len(), 48);
        for (cc, ll) in &all {
            assert!(frob(&(cc * cc.transpose() - &om1)) < 1e-10);
            assert!(frob(&(cc * DMatrix::from_diagonal(ll) * cc.transpose() - &om2)) < 1e-10);
        }
        let c2 = random_c(2, &mut rng);
        assert_eq!(enumerate_observational_equivalents(&c2, &DVector::from_vec(vec![2.0, 1.0])).unwrap().len(), 8);
        assert!(matches!(
            enumerate_observational_equivalents(&DMatrix::identity(5, 5), &DVector::from_element(5, 1.0)),
            Err(HsvarError::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn normalize_idempotent_and_restores_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rf = rf_from(&random_c(3, &mut rng), &[3.0, 2.0, 0.4]);
        for rule in [SignRule::DiagA0Nonneg, SignRule::DiagCNonneg] {
            let norm = NormalizationRule { sign_rule: rule, ..Default::default() };
            let sol = solve_eigen(&rf, &norm).unwrap();
            let again = normalize(&sol, &norm);
            assert_eq!(again.q, sol.q);
            let mut flipped = sol.clone();
            flipped.q.column_mut(1).neg_mut();
            let restored = normalize(&flipped, &norm);
            assert!((restored.q - &sol.q).amax() < 1e-15);
            let a0 = sol.a0();
            for j in 0..3 {
                match rule {
                    SignRule::DiagA0Nonneg => assert!(a0[(j, j)] >= 0.0),
                    SignRule::DiagCNonneg => assert!(sol.c[(j, j)] >= 0.0),
                }
            }
        }
    }

    #[test]
    fn normalize_flags_zero_diagonal() {
        // Q with a column orthogonal to the matching column of Omega_1tr^{-1} = I
        let sol = EigenIdentification {
            lambda: DVector::from_vec(vec![2.0, 1.0]),
            q: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            c: DMatrix::zeros(2, 2),
            omega1_chol: DMatrix::identity(2, 2),
            partition: Partition::singletons(2),
            degenerate_signs: vec![],
        };
        let out = normalize(&sol, &NormalizationRule::default());
        assert_eq!(out.degenerate_signs, vec![0, 1]);
        assert_eq!(out.q, sol.q);
    }

    #[test]
    fn pooling_block_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rf = rf_from(&random_c(3, &mut rng), &[3.712, 0.341, 0.159]);
        let sol = solve_eigen(&rf, &NormalizationRule::default()).unwrap();
        let p = Partition::new(vec![1, 2], 3).unwrap();
        let pooled = pool_eigenvalues(&sol, &p).unwrap();
        assert!((pooled.lambda[0] - 3.712).abs() < 1e-9);
        assert!((pooled.lambda[1] - 0.25).abs() < 1e-9 && (pooled.lambda[2] - 0.25).abs() < 1e-9);
        assert!((pooled.q.clone() - &sol.q).amax() < 1e-12);
        let same = pool_eigenvalues(&sol, &Partition::singletons(3)).unwrap();
        assert_eq!(same.lambda, sol.lambda);
        assert!(pool_eigenvalues(&sol, &Partition::singletons(2)).is_err());
    }

    #[test]
    fn partition_from_pools() {
        let p = Partition::from_pools(4, &[(1, 2)]).unwrap();
        assert_eq!(p.sizes(), &[1, 2, 1]);
        assert_eq!(p.block_of(2), 1);
        assert!(Partition::from_pools(3, &[(0, 1), (1, 2)]).is_err());
        assert!(Partition::from_pools(3, &[(2, 3)]).is_err());
        assert!(Partition::new(vec![2, 0, 1], 3).is_err());
    }
}
