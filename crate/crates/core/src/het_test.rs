//! Test of equal eigenvalues (identification through heteroskedasticity) with
//! kurtosis-robust scaling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{HsvarError, Result};
use crate::ident::EigenIdentification;
use crate::reduced_form::{Dataset, ReducedForm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HetTestResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Offset: the tested eigenvalues are positions `s+1 ..= s+r` (1-based).
    pub s: usize,
    pub r: usize,
}

fn regime_kurtosis(u: &DMatrix<f64>, regime: usize) -> Result<f64> {
    let n = u.nrows();
    let t = u.ncols();
    if t <= 4 {
        return Err(HsvarError::RegimeTooShort { regime, len: t });
    }
    let tf = t as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let row = u.row(i);
        let mean = row.sum() / tf;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / tf;
        let m4: f64 = row.iter().map(|x| (x - mean).powi(4)).sum();
        let omega4 = var * var;
        let z = (m4 - 6.0 * omega4) / (tf - 4.0);
        let w = tf / (tf - 1.0) * (omega4 - z / tf);
        if !(var > 0.0) || !(w.abs() > 0.0) || !(z / w).is_finite() {
            return Err(HsvarError::DegenerateMoments { regime, variable: i });
        }
        acc += z / w;
    }
    Ok(acc / (3.0 * n as f64) - 1.0)
}

/// Kurtosis estimates `(kappa1, kappa2)` from regime residuals (`n x T_m`).
pub fn estimate_kurtosis(u1: &DMatrix<f64>, u2: &DMatrix<f64>) -> Result<(f64, f64)> {
    Ok((regime_kurtosis(u1, 1)?, regime_kurtosis(u2, 2)?))
}

/// Degrees of freedom `(r + 2)(r - 1)/2`.
pub fn het_dof(r: usize) -> usize {
    (r + 2) * (r - 1) / 2
}

/// Scaling `c^2 = ((1 + kappa1)/tau + (1 + kappa2)/(1 - tau))^{-1}`.
pub fn c_squared(tau: f64, kappa1: f64, kappa2: f64) -> f64 {
    1.0 / ((1.0 + kappa1) / tau + (1.0 + kappa2) / (1.0 - tau))
}

/// Statistic for `H0: lambda_{s+1} = ... = lambda_{s+r}`.
pub fn h_test(
    lambda_hat: &[f64],
    s: usize,
    r: usize,
    kappa1: f64,
    kappa2: f64,
    t: usize,
    t_b: usize,
) -> Result<HetTestResult> {
    let n = lambda_hat.len();
    if r < 2 || s + r > n {
        return Err(HsvarError::InvalidRange { s, r, n });
    }
    if t_b == 0 || t_b >= t {
        return Err(HsvarError::InvalidRegime(format!("break {t_b} outside 1..{t}")));
    }
    let block = &lambda_hat[s..s + r];
    if block.iter().any(|&l| !(l > 0.0)) {
        return Err(HsvarError::InvalidRange { s, r, n });
    }
    let tau = t_b as f64 / t as f64;
    let c2 = c_squared(tau, kappa1, kappa2);
    let tf = t as f64;
    let sum_log: f64 = block.iter().map(|l| l.ln()).sum();
    let mean = block.iter().sum::<f64>() / r as f64;
    let statistic = (-c2 * (tf * sum_log - tf * r as f64 * mean.ln())).max(0.0);
    let dof = het_dof(r);
    let chi = ChiSquared::new(dof as f64).expect("positive dof");
    let p_value = chi.sf(statistic).clamp(0.0, 1.0);
    Ok(HetTestResult { statistic, dof, p_value, kappa1, kappa2, s, r })
}

/// Full-equality test followed by every adjacent pair; a single test for `n = 2`.
pub fn test_suite(sol: &EigenIdentification, data: &Dataset, rf: &ReducedForm) -> Result<Vec<HetTestResult>> {
    let n = sol.n();
    if n < 2 {
        return Ok(Vec::new());
    }
    let u = rf.residuals(data);
    let tb = data.break_index;
    let t = data.t();
    let u1 = u.columns(0, tb).into_owned();
    let u2 = u.columns(tb, t - tb).into_owned();
    let (k1, k2) = estimate_kurtosis(&u1, &u2)?;
    let lam: Vec<f64> = sol.lambda.iter().copied().collect();
    let mut out = vec![h_test(&lam, 0, n, k1, k2, t, tb)?];
    if n > 2 {
        for s in 0..(n - 1) {
            out.push(h_test(&lam, s, 2, k1, k2, t, tb)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{StandardNormal, StudentT};

    #[test]
    fn gaussian_kurtosis_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u1 = DMatrix::from_fn(3, 10_000, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u2 = DMatrix::from_fn(3, 10_000, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
        let (k1, k2) = estimate_kurtosis(&u1, &u2).unwrap();
        // sd of the pooled excess-kurtosis estimate ~ sqrt(24/T)/3/sqrt(n)
        assert!(k1.abs() < 0.05 && k2.abs() < 0.05, "{k1} {k2}");
    }

    #[test]
    fn student_t_kurtosis_positive() {
        let t5 = StudentT::new(5.0).unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = DMatrix::from_fn(3, 10_000, |_, _| rng.sample(t5));
            let (k1, _) = estimate_kurtosis(&u, &u).unwrap();
            assert!(k1 > 0.3, "seed {seed}: {k1}");
        }
    }

    #[test]
    fn kurtosis_guards() {
        let c = DMatrix::from_element(2, 50, 1.0);
        assert!(matches!(estimate_kurtosis(&c, &c), Err(HsvarError::DegenerateMoments { .. })));
        let short = DMatrix::from_fn(2, 4, |i, j| (i + j) as f64);
        assert!(matches!(estimate_kurtosis(&short, &short), Err(HsvarError::RegimeTooShort { .. })));
    }

    #[test]
    fn dof_mapping() {
        assert_eq!(het_dof(2), 2);
        assert_eq!(het_dof(3), 5);
        assert_eq!(het_dof(4), 9);
    }

    #[test]
    fn equal_block_gives_zero() {
        let r = h_test(&[3.0, 0.5, 0.5], 1, 2, 0.2, 0.4, 500, 200).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_ranges() {
        assert!(matches!(h_test(&[1.0, 0.5], 0, 3, 0.0, 0.0, 100, 50), Err(HsvarError::InvalidRange { .. })));
        assert!(matches!(h_test(&[1.0, 0.5], 1, 2, 0.0, 0.0, 100, 50), Err(HsvarError::InvalidRange { .. })));
        assert!(matches!(h_test(&[1.0, 0.5, 0.2], 0, 1, 0.0, 0.0, 100, 50), Err(HsvarError::InvalidRange { .. })));
    }

    #[test]
    fn p_value_of_two_dof_tail() {
        // chi2(2) survival is exp(-x/2)
        let lam = [2.0, 0.7];
        let r = h_test(&lam, 0, 2, 0.1, 0.3, 400, 150).unwrap();
        assert!((r.p_value - (-r.statistic / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn suite_sizes() {
        use crate::ident::{solve_eigen, NormalizationRule};
        use crate::reduced_form::ols_estimate;
        use crate::simulate::{simulate, SimulationTruth};
        use nalgebra::DVector;
        for n in [2usize, 3] {
            let truth = SimulationTruth {
                b: DMatrix::zeros(n, n + 1),
                c: DMatrix::identity(n, n),
                lambda: DVector::from_fn(n, |i, _| 1.0 + i as f64),
            };
            let d = simulate(&truth, 300, 150, 2).unwrap();
            let rf = ols_estimate(&d).unwrap();
            let sol = solve_eigen(&rf, &NormalizationRule::default()).unwrap();
            let suite = test_suite(&sol, &d, &rf).unwrap();
            assert_eq!(suite.len(), if n == 2 { 1 } else { 3 });
            assert_eq!(suite[0].r, n);
        }
    }

    proptest! {
        #[test]
        fn prop_scale_invariant(a in 0.1f64..5.0, b in 0.1f64..5.0, c in 0.1f64..5.0, k in 0.01f64..100.0) {
            let mut lam = [a, b, c];
            lam.sort_by(|x, y| y.total_cmp(x));
            let scaled: Vec<f64> = lam.iter().map(|x| x * k).collect();
            let h1 = h_test(&lam, 0, 3, 0.5, 1.0, 600, 250).unwrap().statistic;
            let h2 = h_test(&scaled, 0, 3, 0.5, 1.0, 600, 250).unwrap().statistic;
            prop_assert!((h1 - h2).abs() <= 1e-9 * (1.0 + h1));
        }

        #[test]
        fn prop_zero_iff_equal(a in 0.1f64..5.0, d in 1e-3f64..2.0) {
            let h = h_test(&[a + d, a], 0, 2, 0.0, 0.0, 300, 100).unwrap().statistic;
            prop_assert!(h > 0.0);
            let h0 = h_test(&[a, a], 0, 2, 0.0, 0.0, 300, 100).unwrap().statistic;
            prop_assert_eq!(h0, 0.0);
        }

        #[test]
        fn prop_c2_decreasing_in_kurtosis(tau in 0.05f64..0.95, k1 in 0.0f64..5.0, k2 in 0.0f64..5.0, dk in 0.01f64..2.0) {
            let base = c_squared(tau, k1, k2);
            prop_assert!(c_squared(tau, k1 + dk, k2) < base);
            prop_assert!(c_squared(tau, k1, k2 + dk) < base);
        }
    }
}
