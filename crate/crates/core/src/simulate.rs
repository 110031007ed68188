//! Synthetic HSVAR data generation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HsvarError, Result};
use crate::reduced_form::{Dataset, ReducedForm};

/// Data-generating structural model: `y_t = B x_t + C e_t` with
/// `Var(e_t) = I` before the break and `diag(lambda)` after it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationTruth {
    /// `n x (n l + 1)`, intercept first.
    pub b: DMatrix<f64>,
    /// Impact matrix `A_0^{-1}`.
    pub c: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl SimulationTruth {
    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn lags(&self) -> usize {
        (self.b.ncols() - 1) / self.n()
    }

    pub fn reduced_form(&self) -> ReducedForm {
        let omega1 = &self.c * self.c.transpose();
        let omega2 = &self.c * DMatrix::from_diagonal(&self.lambda) * self.c.transpose();
        ReducedForm {
            b: self.b.clone(),
            omega1: (&omega1 + omega1.transpose()) * 0.5,
            omega2: (&omega2 + omega2.transpose()) * 0.5,
        }
    }
}

const BURN_IN: usize = 200;

/// Simulates `T` estimation periods plus an `l`-period presample, starting
/// from the unconditional mean after a regime-1 burn-in.
pub fn simulate(truth: &SimulationTruth, t: usize, break_index: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with(truth, t, break_index, &mut rng, |r| r.sample(StandardNormal))
}

/// As [`simulate`], with a caller-supplied unit-variance innovation draw.
pub fn simulate_with<R: Rng, F: FnMut(&mut R) -> f64>(
    truth: &SimulationTruth,
    t: usize,
    break_index: usize,
    rng: &mut R,
    mut innovation: F,
) -> Result<Dataset> {
    let rf = truth.reduced_form();
    let radius = rf.spectral_radius();
    if !(radius < 1.0) {
        return Err(HsvarError::UnstableVar { radius });
    }
    let n = truth.n();
    let l = truth.lags();
    let mean = crate::reduced_form::long_run_multiplier(&rf)? * rf.intercept();
    let total = BURN_IN + l + t;
    let mut y = DMatrix::<f64>::zeros(n, total + l);
    for s in 0..l {
        y.set_column(s, &mean);
    }
    let sd2 = truth.lambda.map(|v| v.sqrt());
    let lag_mats: Vec<DMatrix<f64>> = (1..=l).map(|i| rf.lag_matrix(i)).collect();
    for s in l..(total + l) {
        let est_period = s as isize - (l + BURN_IN + l) as isize;
        let regime2 = est_period >= break_index as isize;
        let mut e = DVector::<f64>::from_fn(n, |_, _| innovation(rng));
        if regime2 {
            e.component_mul_assign(&sd2);
        }
        let mut v = rf.intercept() + &truth.c * e;
        for (i, bi) in lag_mats.iter().enumerate() {
            v += bi * y.column(s - i - 1);
        }
        y.set_column(s, &v);
    }
    let full = y.columns(l + BURN_IN, l + t).into_owned();
    let names = (1..=n).map(|i| format!("y{i}")).collect();
    Dataset::from_full(&full, l, break_index, names)
}
