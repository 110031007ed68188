//! Reduced-form VAR with two volatility regimes: data layout, OLS, feasible
//! GLS, Gaussian ML and moving-average machinery.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HsvarError, Result};
use crate::linalg::{cholesky_lower, lower_inverse, spd_inverse, spd_logdet};

/// Observed series split into presample and estimation sample.
///
/// `observations` is `n x T` (variables in rows); regime 1 covers the first
/// `break_index` columns of the estimation sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub observations: DMatrix<f64>,
    pub presample: DMatrix<f64>,
    pub lags: usize,
    pub break_index: usize,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(
        observations: DMatrix<f64>,
        presample: DMatrix<f64>,
        lags: usize,
        break_index: usize,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = observations.nrows();
        let t = observations.ncols();
        if lags == 0 {
            return Err(HsvarError::InvalidRegime("lag order must be at least 1".into()));
        }
        if presample.nrows() != n || presample.ncols() != lags {
            return Err(HsvarError::DimensionMismatch(format!(
                "presample must be {n}x{lags}, got {}x{}",
                presample.nrows(),
                presample.ncols()
            )));
        }
        if names.len() != n {
            return Err(HsvarError::DimensionMismatch(format!("{} names for {n} variables", names.len())));
        }
        if !(break_index > 1 && break_index < t) {
            return Err(HsvarError::InvalidRegime(format!("break index {break_index} must satisfy 1 < T_B < T = {t}")));
        }
        if observations.iter().chain(presample.iter()).any(|x| !x.is_finite()) {
            return Err(HsvarError::InvalidRegime("non-finite observation".into()));
        }
        Ok(Dataset { observations, presample, lags, break_index, names })
    }

    /// Splits a full `n x (l + T)` series: the first `lags` columns become the
    /// presample. `break_index` counts periods of the estimation sample.
    pub fn from_full(full: &DMatrix<f64>, lags: usize, break_index: usize, names: Vec<String>) -> Result<Self> {
        if full.ncols() <= lags {
            return Err(HsvarError::InvalidRegime("series shorter than the lag order".into()));
        }
        let presample = full.columns(0, lags).into_owned();
        let obs = full.columns(lags, full.ncols() - lags).into_owned();
        Dataset::new(obs, presample, lags, break_index, names)
    }

    pub fn n(&self) -> usize {
        self.observations.nrows()
    }

    pub fn t(&self) -> usize {
        self.observations.ncols()
    }

    /// Number of regressors per equation, `n * l + 1`.
    pub fn m(&self) -> usize {
        self.n() * self.lags + 1
    }

    /// Regime sample sizes `(T_1, T_2)`.
    pub fn regime_sizes(&self) -> (usize, usize) {
        (self.break_index, self.t() - self.break_index)
    }

    /// Regressor matrix `X` (`m x T`), columns `(1, y_{t-1}', ..., y_{t-l}')'`.
    pub fn regressors(&self) -> DMatrix<f64> {
        let n = self.n();
        let l = self.lags;
        let t = self.t();
        let mut x = DMatrix::zeros(self.m(), t);
        for s in 0..t {
            x[(0, s)] = 1.0;
            for lag in 1..=l {
                // position of y_{s-lag} in the concatenated [presample, observations]
                let pos = s as isize - lag as isize;
                for i in 0..n {
                    let v = if pos >= 0 {
                        self.observations[(i, pos as usize)]
                    } else {
                        self.presample[(i, (l as isize + pos) as usize)]
                    };
                    x[(1 + (lag - 1) * n + i, s)] = v;
                }
            }
        }
        x
    }

    /// `(Y_1, X_1, Y_2, X_2)` split at the break.
    pub fn regime_blocks(&self) -> [(DMatrix<f64>, DMatrix<f64>); 2] {
        let x = self.regressors();
        let y = &self.observations;
        let tb = self.break_index;
        let t = self.t();
        [
            (y.columns(0, tb).into_owned(), x.columns(0, tb).into_owned()),
            (y.columns(tb, t - tb).into_owned(), x.columns(tb, t - tb).into_owned()),
        ]
    }
}

/// Reduced-form parameters `phi = (B, Omega_1, Omega_2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedForm {
    /// `n x (n l + 1)`, intercept in the first column.
    pub b: DMatrix<f64>,
    pub omega1: DMatrix<f64>,
    pub omega2: DMatrix<f64>,
}

impl ReducedForm {
    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn lags(&self) -> usize {
        (self.b.ncols() - 1) / self.n()
    }

    pub fn intercept(&self) -> DVector<f64> {
        self.b.column(0).into_owned()
    }

    /// Lag matrix `B_i`, `i` starting at 1.
    pub fn lag_matrix(&self, i: usize) -> DMatrix<f64> {
        let n = self.n();
        self.b.columns(1 + (i - 1) * n, n).into_owned()
    }

    pub fn sum_lags(&self) -> DMatrix<f64> {
        let n = self.n();
        (1..=self.lags()).fold(DMatrix::zeros(n, n), |acc, i| acc + self.lag_matrix(i))
    }

    /// Companion matrix of the lag polynomial.
    pub fn companion(&self) -> DMatrix<f64> {
        let n = self.n();
        let l = self.lags();
        let mut c = DMatrix::zeros(n * l, n * l);
        c.view_mut((0, 0), (n, n * l)).copy_from(&self.b.columns(1, n * l));
        for k in 1..l {
            for i in 0..n {
                c[(k * n + i, (k - 1) * n + i)] = 1.0;
            }
        }
        c
    }

    /// Largest modulus among companion eigenvalues.
    pub fn spectral_radius(&self) -> f64 {
        self.companion().complex_eigenvalues().iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }

    /// True when every root of the lag polynomial lies outside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Residuals `Y - B X` over the whole sample.
    pub fn residuals(&self, data: &Dataset) -> DMatrix<f64> {
        &data.observations - &self.b * data.regressors()
    }
}

/// Moving-average coefficients `C_0 = I, ..., C_H`.
#[derive(Debug, Clone)]
pub struct VmaCoefficients {
    pub c: Vec<DMatrix<f64>>,
}

impl VmaCoefficients {
    pub fn horizons(&self) -> usize {
        self.c.len() - 1
    }
}

/// Solves `A X = rhs` for SPD `A`, returning `None` when `A` is numerically
/// singular (smallest Cholesky pivot below `1e-12` of the largest diagonal).
fn spd_solve(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let l = cholesky_lower(&sym).ok()?;
    let dmax = sym.diagonal().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let pmin = l.diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x * x));
    if !(pmin > 1e-12 * dmax) {
        return None;
    }
    let z = l.solve_lower_triangular(rhs)?;
    l.transpose().solve_upper_triangular(&z)
}

fn cov_with_divisor(u: &DMatrix<f64>, divisor: f64) -> DMatrix<f64> {
    let s = u * u.transpose() / divisor;
    (&s + s.transpose()) * 0.5
}

fn regime_covariances(data: &Dataset, b: &DMatrix<f64>, ml: bool) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let nm = (data.n() * data.m()) as f64;
    let mut out = Vec::with_capacity(2);
    for (k, (y, x)) in data.regime_blocks().iter().enumerate() {
        let t = y.ncols() as f64;
        let divisor = if ml { t } else { t - nm };
        if divisor <= 0.0 {
            return Err(HsvarError::InvalidRegime(format!(
                "regime {} has {} periods; the covariance divisor T_i - n m is not positive",
                k + 1,
                y.ncols()
            )));
        }
        out.push(cov_with_divisor(&(y - b * x), divisor));
    }
    let o2 = out.pop().unwrap();
    let o1 = out.pop().unwrap();
    Ok((o1, o2))
}

/// Equation-by-equation OLS with regime covariances scaled by `T_i - n m`.
pub fn ols_estimate(data: &Dataset) -> Result<ReducedForm> {
    let x = data.regressors();
    let y = &data.observations;
    let xx = &x * x.transpose();
    let xy = &x * y.transpose();
    let bt = spd_solve(&xx, &xy).ok_or(HsvarError::SingularRegressors)?;
    let b = bt.transpose();
    let (omega1, omega2) = regime_covariances(data, &b, false)?;
    Ok(ReducedForm { b, omega1, omega2 })
}

/// GLS coefficient matrix for given regime covariances.
pub fn gls_coefficients(data: &Dataset, omega1: &DMatrix<f64>, omega2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (precision, rhs) = gls_moments(data, omega1, omega2)?;
    let phi = spd_solve(&precision, &rhs).ok_or(HsvarError::SingularWeighting)?;
    Ok(DMatrix::from_column_slice(data.n(), data.m(), phi.as_slice()))
}

/// `(sum_i X_i X_i' (x) Omega_i^{-1}, vec(sum_i Omega_i^{-1} Y_i X_i'))`.
pub(crate) fn gls_moments(
    data: &Dataset,
    omega1: &DMatrix<f64>,
    omega2: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = data.n();
    let m = data.m();
    let mut precision = DMatrix::zeros(n * m, n * m);
    let mut cross = DMatrix::zeros(n, m);
    for ((y, x), om) in data.regime_blocks().iter().zip([omega1, omega2]) {
        let oi = spd_inverse(om)?;
        precision += (x * x.transpose()).kronecker(&oi);
        cross += &oi * y * x.transpose();
    }
    let rhs = DMatrix::from_column_slice(n * m, 1, cross.as_slice());
    Ok((precision, rhs))
}

/// Feasible GLS: OLS covariances as weights, then covariances re-estimated
/// from the GLS residuals.
pub fn gls_estimate(data: &Dataset) -> Result<ReducedForm> {
    let ols = ols_estimate(data)?;
    let b = gls_coefficients(data, &ols.omega1, &ols.omega2)?;
    let (omega1, omega2) = regime_covariances(data, &b, false)?;
    Ok(ReducedForm { b, omega1, omega2 })
}

/// Exact Gaussian log-likelihood conditional on the presample.
pub fn log_likelihood(data: &Dataset, rf: &ReducedForm) -> Result<f64> {
    let n = data.n() as f64;
    let mut ll = -0.5 * n * data.t() as f64 * (2.0 * std::f64::consts::PI).ln();
    for ((y, x), om) in data.regime_blocks().iter().zip([&rf.omega1, &rf.omega2]) {
        let l = cholesky_lower(om)?;
        let logdet = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let w = lower_inverse(&l) * (y - &rf.b * x);
        ll -= 0.5 * y.ncols() as f64 * logdet + 0.5 * w.norm_squared();
    }
    Ok(ll)
}

/// Outcome of the ML zig-zag iteration.
#[derive(Debug, Clone)]
pub struct MlEstimate {
    pub rf: ReducedForm,
    pub iterations: usize,
    /// Log-likelihood at the initial value followed by each iterate.
    pub trace: Vec<f64>,
}

pub const ML_TOLERANCE: f64 = 1e-8;
pub const ML_MAX_ITER: usize = 500;

/// Gaussian ML by alternating GLS (given covariances) and regime covariances
/// with divisor `T_i` (given coefficients).
pub fn ml_estimate(data: &Dataset, init: &ReducedForm) -> Result<MlEstimate> {
    let mut current = init.clone();
    let mut ll = log_likelihood(data, &current)?;
    let mut trace = vec![ll];
    for it in 1..=ML_MAX_ITER {
        let b = gls_coefficients(data, &current.omega1, &current.omega2)?;
        let (omega1, omega2) = regime_covariances(data, &b, true)?;
        let next = ReducedForm { b, omega1, omega2 };
        let ll_next = log_likelihood(data, &next)?;
        trace.push(ll_next);
        let improvement = ll_next - ll;
        if ll_next > ll {
            current = next;
            ll = ll_next;
        }
        if improvement < ML_TOLERANCE {
            return Ok(MlEstimate { rf: current, iterations: it, trace });
        }
    }
    Err(HsvarError::NoConvergence { iterations: ML_MAX_ITER, last: Box::new(current), trace })
}

/// `C_j = sum_{i=1}^{min(j,l)} B_i C_{j-i}` for `j = 0..=horizons`.
pub fn vma_coefficients(rf: &ReducedForm, horizons: usize) -> VmaCoefficients {
    let n = rf.n();
    let l = rf.lags();
    let lag_mats: Vec<DMatrix<f64>> = (1..=l).map(|i| rf.lag_matrix(i)).collect();
    let mut c = Vec::with_capacity(horizons + 1);
    c.push(DMatrix::identity(n, n));
    for j in 1..=horizons {
        let mut cj = DMatrix::zeros(n, n);
        for i in 1..=j.min(l) {
            cj += &lag_mats[i - 1] * &c[j - i];
        }
        c.push(cj);
    }
    VmaCoefficients { c }
}

/// `IR^h = C_h * C_struct` for `h = 0..=horizons`.
pub fn impulse_responses(rf: &ReducedForm, c_struct: &DMatrix<f64>, horizons: usize) -> Vec<DMatrix<f64>> {
    vma_coefficients(rf, horizons).c.iter().map(|ch| ch * c_struct).collect()
}

/// Long-run matrices `(IR_inf, CIR_inf)`.
///
/// `IR_inf = (I - sum B_j) C_struct` literally; `CIR_inf = (I - sum B_j)^{-1} C_struct`,
/// the total multiplier of the moving-average sum.
pub fn long_run_responses(rf: &ReducedForm, c_struct: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let radius = rf.spectral_radius();
    if !(radius < 1.0) {
        return Err(HsvarError::UnstableVar { radius });
    }
    let n = rf.n();
    let a1 = DMatrix::<f64>::identity(n, n) - rf.sum_lags();
    let ir_inf = &a1 * c_struct;
    let inv = a1.try_inverse().ok_or(HsvarError::UnstableVar { radius })?;
    Ok((ir_inf, inv * c_struct))
}

/// `(I - sum B_j)^{-1}`, the cumulated moving-average sum.
pub fn long_run_multiplier(rf: &ReducedForm) -> Result<DMatrix<f64>> {
    let radius = rf.spectral_radius();
    if !(radius < 1.0) {
        return Err(HsvarError::UnstableVar { radius });
    }
    let n = rf.n();
    (DMatrix::<f64>::identity(n, n) - rf.sum_lags()).try_inverse().ok_or(HsvarError::UnstableVar { radius })
}

/// Log-determinant helper re-exported for callers that score covariances.
pub fn covariance_logdet(om: &DMatrix<f64>) -> Result<f64> {
    spd_logdet(om)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate, SimulationTruth};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn univariate_data(seed: u64, t: usize, b1: f64, s1: f64, s2: f64) -> Dataset {
        let truth = SimulationTruth {
            b: DMatrix::from_row_slice(1, 2, &[0.0, b1]),
            c: DMatrix::from_element(1, 1, s1),
            lambda: DVector::from_element(1, (s2 / s1).powi(2)),
        };
        simulate(&truth, t, t / 2, seed).unwrap()
    }

    fn trivariate_truth() -> SimulationTruth {
        let b = DMatrix::from_row_slice(3, 4, &[0.1, 0.5, 0.1, 0.0, -0.2, 0.0, 0.4, 0.1, 0.0, 0.1, 0.0, 0.3]);
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 1.0, 0.0, -0.3, 0.2, 1.0]);
        SimulationTruth { b, c, lambda: DVector::from_vec(vec![4.0, 1.0, 0.25]) }
    }

    #[test]
    fn regressor_layout() {
        let full = DMatrix::from_row_slice(2, 5, &[1., 2., 3., 4., 5., 10., 20., 30., 40., 50.]);
        let d = Dataset::from_full(&full, 2, 2, vec!["a".into(), "b".into()]).unwrap();
        let x = d.regressors();
        assert_eq!(x.nrows(), 5);
        // first estimation period is column 2 of `full`: lags are columns 1 and 0
        assert_eq!(x.column(0).as_slice(), &[1.0, 2.0, 20.0, 1.0, 10.0]);
        assert_eq!(x.column(2).as_slice(), &[1.0, 4.0, 40.0, 3.0, 30.0]);
    }

    #[test]
    fn dataset_validation() {
        let full = DMatrix::from_fn(1, 10, |_, j| j as f64);
        assert!(Dataset::from_full(&full, 1, 1, vec!["y".into()]).is_err());
        assert!(Dataset::from_full(&full, 1, 9, vec!["y".into()]).is_err());
        assert!(Dataset::from_full(&full, 0, 3, vec!["y".into()]).is_err());
        assert!(Dataset::from_full(&full, 1, 3, vec!["y".into()]).is_ok());
    }

    #[test]
    fn ols_univariate_recovers_slope() {
        let d = univariate_data(3, 4000, 0.5, 1.0, 1.0);
        let rf = ols_estimate(&d).unwrap();
        // closed-form univariate OLS slope
        let y = &d.observations;
        let x = d.regressors();
        let t = d.t() as f64;
        let xm = x.row(1).sum() / t;
        let ym = y.row(0).sum() / t;
        let sxy: f64 = (0..d.t()).map(|s| (x[(1, s)] - xm) * (y[(0, s)] - ym)).sum();
        let sxx: f64 = (0..d.t()).map(|s| (x[(1, s)] - xm).powi(2)).sum();
        assert!((rf.b[(0, 1)] - sxy / sxx).abs() < 1e-10);
        let se = ((1.0 - 0.25) / t).sqrt();
        assert!((rf.b[(0, 1)] - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn ols_constant_series_singular() {
        let full = DMatrix::from_element(1, 50, 2.0);
        let d = Dataset::from_full(&full, 1, 20, vec!["y".into()]).unwrap();
        assert!(matches!(ols_estimate(&d), Err(HsvarError::SingularRegressors)));
    }

    #[test]
    fn ols_residuals_orthogonal_to_regressors() {
        let d = simulate(&trivariate_truth(), 500, 250, 8).unwrap();
        let rf = ols_estimate(&d).unwrap();
        let u = rf.residuals(&d);
        let xu = d.regressors() * u.transpose();
        assert!(xu.amax() < 1e-8 * d.t() as f64);
    }

    #[test]
    fn gls_equals_ols_under_equal_weights() {
        let d = simulate(&trivariate_truth(), 400, 200, 2).unwrap();
        let ols = ols_estimate(&d).unwrap();
        let b = gls_coefficients(&d, &ols.omega1, &ols.omega1).unwrap();
        assert!((b - &ols.b).amax() < 1e-10);
    }

    #[test]
    fn gls_univariate_matches_weighted_least_squares() {
        let d = univariate_data(4, 600, 0.3, 1.0, 3.0);
        let (w1, w2) = (1.3_f64, 7.1_f64);
        let b = gls_coefficients(&d, &DMatrix::from_element(1, 1, w1), &DMatrix::from_element(1, 1, w2)).unwrap();
        // hand-coded WLS normal equations
        let x = d.regressors();
        let y = &d.observations;
        let mut a = nalgebra::Matrix2::<f64>::zeros();
        let mut r = nalgebra::Vector2::<f64>::zeros();
        for s in 0..d.t() {
            let w = if s < d.break_index { 1.0 / w1 } else { 1.0 / w2 };
            let xs = nalgebra::Vector2::new(x[(0, s)], x[(1, s)]);
            a += xs * xs.transpose() * w;
            r += xs * y[(0, s)] * w;
        }
        let oracle = a.try_inverse().unwrap() * r;
        assert!((b[(0, 0)] - oracle[0]).abs() < 1e-10);
        assert!((b[(0, 1)] - oracle[1]).abs() < 1e-10);
    }

    #[test]
    fn log_likelihood_scalar_by_hand() {
        let full = DMatrix::from_row_slice(1, 3, &[0.3, 1.0, -0.4]);
        let d = Dataset {
            observations: full.columns(1, 2).into_owned(),
            presample: full.columns(0, 1).into_owned(),
            lags: 1,
            break_index: 1,
            names: vec!["y".into()],
        };
        let rf = ReducedForm {
            b: DMatrix::from_row_slice(1, 2, &[0.1, 0.5]),
            omega1: DMatrix::from_element(1, 1, 0.8),
            omega2: DMatrix::from_element(1, 1, 2.5),
        };
        let dens =
            |x: f64, mu: f64, v: f64| -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (x - mu).powi(2) / (2.0 * v);
        let oracle = dens(1.0, 0.1 + 0.5 * 0.3, 0.8) + dens(-0.4, 0.1 + 0.5 * 1.0, 2.5);
        assert!((log_likelihood(&d, &rf).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_scaling_identity() {
        let d = simulate(&trivariate_truth(), 300, 100, 5).unwrap();
        let rf = ols_estimate(&d).unwrap();
        let c = 1.7;
        let scaled = ReducedForm { b: rf.b.clone(), omega1: &rf.omega1 * c, omega2: &rf.omega2 * c };
        let quad = |r: &ReducedForm| {
            let mut q = 0.0;
            for ((y, x), om) in d.regime_blocks().iter().zip([&r.omega1, &r.omega2]) {
                let u = y - &r.b * x;
                q += (u.transpose() * spd_inverse(om).unwrap() * &u).trace();
            }
            q
        };
        let q0 = quad(&rf);
        let q1 = quad(&scaled);
        assert!((q1 - q0 / c).abs() < 1e-8 * q0);
        let n = 3.0;
        let t = d.t() as f64;
        let diff = log_likelihood(&d, &scaled).unwrap() - log_likelihood(&d, &rf).unwrap();
        let oracle = -0.5 * (q1 - q0) - 0.5 * t * n * c.ln();
        assert!((diff - oracle).abs() < 1e-7 * q0);
    }

    #[test]
    fn log_likelihood_invariant_to_within_regime_order() {
        let d = simulate(&trivariate_truth(), 200, 100, 6).unwrap();
        let rf = ols_estimate(&d).unwrap();
        let base = log_likelihood(&d, &rf).unwrap();
        // permute residual columns within regime 1 via the quadratic form directly
        let [(y1, x1), (y2, x2)] = d.regime_blocks();
        let u1 = &y1 - &rf.b * &x1;
        let u2 = &y2 - &rf.b * &x2;
        let mut order: Vec<usize> = (0..u1.ncols()).collect();
        order.reverse();
        let u1p = DMatrix::from_fn(3, u1.ncols(), |i, j| u1[(i, order[j])]);
        let ll = |u: &DMatrix<f64>, om: &DMatrix<f64>| {
            let t = u.ncols() as f64;
            -0.5 * t * 3.0 * (2.0 * std::f64::consts::PI).ln()
                - 0.5 * t * spd_logdet(om).unwrap()
                - 0.5 * (u.transpose() * spd_inverse(om).unwrap() * u).trace()
        };
        let permuted = ll(&u1p, &rf.omega1) + ll(&u2, &rf.omega2);
        assert!((base - permuted).abs() < 1e-8 * base.abs());
    }

    #[test]
    fn likelihood_prefers_truth_on_average() {
        let truth = trivariate_truth();
        let mut wins = 0;
        for seed in 0..100 {
            let d = simulate(&truth, 200, 100, 100 + seed).unwrap();
            let rf = truth.reduced_form();
            let mut pert = rf.clone();
            pert.b[(0, 1)] += 0.2;
            pert.omega2 *= 1.5;
            if log_likelihood(&d, &rf).unwrap() > log_likelihood(&d, &pert).unwrap() {
                wins += 1;
            }
        }
        assert!(wins > 90, "truth preferred in {wins}/100");
    }

    #[test]
    fn ml_monotone_and_fixed_point() {
        let d = simulate(&trivariate_truth(), 800, 400, 12).unwrap();
        let init = gls_estimate(&d).unwrap();
        let ml = ml_estimate(&d, &init).unwrap();
        for w in ml.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        assert!(ml.trace.last().unwrap() >= &ml.trace[0]);
        let again = ml_estimate(&d, &ml.rf).unwrap();
        assert_eq!(again.iterations, 1);
        assert!((&again.rf.b - &ml.rf.b).amax() < 1e-6);
    }

    #[test]
    fn ml_homoskedastic_matches_pooled_ols() {
        let mut truth = trivariate_truth();
        truth.lambda = DVector::from_element(3, 1.0);
        let d = simulate(&truth, 600, 300, 13).unwrap();
        let ols = ols_estimate(&d).unwrap();
        let u = ols.residuals(&d);
        let pooled = cov_with_divisor(&u, d.t() as f64);
        let init = ReducedForm { b: ols.b.clone(), omega1: pooled.clone(), omega2: pooled };
        // with both regime covariances forced equal the GLS step returns OLS
        let b = gls_coefficients(&d, &init.omega1, &init.omega2).unwrap();
        assert!((&b - &ols.b).amax() < 1e-6);
        let ml = ml_estimate(&d, &init).unwrap();
        assert!(ml.trace.last().unwrap() >= &ml.trace[0]);
    }

    #[test]
    fn vma_trivial_and_companion() {
        let rf0 =
            ReducedForm { b: DMatrix::zeros(2, 3), omega1: DMatrix::identity(2, 2), omega2: DMatrix::identity(2, 2) };
        let v = vma_coefficients(&rf0, 5);
        assert_eq!(v.c[0], DMatrix::identity(2, 2));
        assert!(v.c[1..].iter().all(|c| c.amax() == 0.0));

        let rf1 = ReducedForm {
            b: DMatrix::from_row_slice(1, 2, &[0.0, 0.5]),
            omega1: DMatrix::identity(1, 1),
            omega2: DMatrix::identity(1, 1),
        };
        let v = vma_coefficients(&rf1, 10);
        for (j, c) in v.c.iter().enumerate() {
            assert!((c[(0, 0)] - 0.5_f64.powi(j as i32)).abs() < 1e-15);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 3;
        let l = 2;
        let b = DMatrix::from_fn(n, n * l + 1, |_, _| 0.2 * rng.sample::<f64, _>(StandardNormal));
        let rf = ReducedForm { b, omega1: DMatrix::identity(n, n), omega2: DMatrix::identity(n, n) };
        let v = vma_coefficients(&rf, 12);
        let comp = rf.companion();
        let mut power = DMatrix::<f64>::identity(n * l, n * l);
        for j in 0..=12 {
            let block = power.view((0, 0), (n, n)).into_owned();
            assert!((block - &v.c[j]).amax() < 1e-10);
            power = &comp * power;
        }
    }

    #[test]
    fn impulse_response_identities() {
        let truth = trivariate_truth();
        let rf = truth.reduced_form();
        let ir = impulse_responses(&rf, &truth.c, 4);
        assert_eq!(ir[0], truth.c);

        let rf_diag = ReducedForm {
            b: DMatrix::from_row_slice(2, 3, &[0.0, 0.5, 0.0, 0.0, 0.0, -0.3]),
            omega1: DMatrix::identity(2, 2),
            omega2: DMatrix::identity(2, 2),
        };
        let cd = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        for (h, m) in impulse_responses(&rf_diag, &cd, 6).iter().enumerate() {
            assert_eq!(m[(0, 1)], 0.0);
            assert_eq!(m[(1, 0)], 0.0);
            assert!((m[(0, 0)] - 2.0 * 0.5_f64.powi(h as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn long_run_cases() {
        let rf0 =
            ReducedForm { b: DMatrix::zeros(2, 3), omega1: DMatrix::identity(2, 2), omega2: DMatrix::identity(2, 2) };
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.4, 2.0]);
        let (ir, cir) = long_run_responses(&rf0, &c).unwrap();
        assert_eq!(cir, c);
        assert_eq!(ir, c);

        let rf1 = ReducedForm {
            b: DMatrix::from_row_slice(1, 2, &[0.0, 0.5]),
            omega1: DMatrix::identity(1, 1),
            omega2: DMatrix::identity(1, 1),
        };
        let (ir, cir) = long_run_responses(&rf1, &DMatrix::identity(1, 1)).unwrap();
        assert!((cir[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((ir[(0, 0)] - 0.5).abs() < 1e-14);

        let truth = trivariate_truth();
        let rf = truth.reduced_form();
        let (_, cir) = long_run_responses(&rf, &truth.c).unwrap();
        let ir = impulse_responses(&rf, &truth.c, 500);
        let sum = ir.iter().fold(DMatrix::zeros(3, 3), |a, m| a + m);
        assert!((sum - cir).amax() < 1e-6);

        let unstable = ReducedForm {
            b: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            omega1: DMatrix::identity(1, 1),
            omega2: DMatrix::identity(1, 1),
        };
        assert!(matches!(long_run_responses(&unstable, &DMatrix::identity(1, 1)), Err(HsvarError::UnstableVar { .. })));
    }
}
