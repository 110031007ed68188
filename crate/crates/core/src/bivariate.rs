//! Closed-form results for bivariate (price, quantity) SVARs.
//!
//! With `q_1 = (cos t, sin t)'` and `omega_1, omega_2` the columns of
//! `Omega_1tr^{-1}`, the structural slopes are
//! `beta = -(q_1' omega_2)/(q_1' omega_1)` and `alpha = -(q_2' omega_1)/(q_2' omega_2)`;
//! the sign normalization asks `q_1' omega_1 > 0` and `q_2' omega_2 > 0`.

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{HsvarError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateCovariances {
    pub omega_p2: f64,
    pub omega_q2: f64,
    pub omega_pq: f64,
}

impl BivariateCovariances {
    pub fn new(omega_p2: f64, omega_q2: f64, omega_pq: f64) -> Self {
        BivariateCovariances { omega_p2, omega_q2, omega_pq }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        BivariateCovariances { omega_p2: m[(0, 0)], omega_q2: m[(1, 1)], omega_pq: 0.5 * (m[(0, 1)] + m[(1, 0)]) }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.omega_p2, self.omega_pq, self.omega_pq, self.omega_q2])
    }

    pub fn det(&self) -> f64 {
        self.omega_p2 * self.omega_q2 - self.omega_pq * self.omega_pq
    }

    pub fn is_spd(&self) -> bool {
        self.omega_p2 > 0.0 && self.det() > 0.0
    }

    /// Columns of `Omega_tr^{-1}`.
    pub fn inverse_cholesky_columns(&self) -> (Vector2<f64>, Vector2<f64>) {
        let wp = self.omega_p2.sqrt();
        let gamma = 1.0 / (self.omega_q2 - self.omega_pq * self.omega_pq / self.omega_p2).sqrt();
        (Vector2::new(1.0 / wp, -self.omega_pq / self.omega_p2 * gamma), Vector2::new(0.0, gamma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Endpoint {
    Closed(f64),
    Open(f64),
    NegInfinity,
    PosInfinity,
}

impl Endpoint {
    /// Numeric value, infinite ends mapped to `+-inf`.
    pub fn value(&self) -> f64 {
        match *self {
            Endpoint::Closed(v) | Endpoint::Open(v) => v,
            Endpoint::NegInfinity => f64::NEG_INFINITY,
            Endpoint::PosInfinity => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Endpoint::Closed(_) | Endpoint::Open(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Endpoint,
    pub hi: Endpoint,
}

impl Interval {
    fn unbounded() -> Self {
        Interval { lo: Endpoint::NegInfinity, hi: Endpoint::PosInfinity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BivariateRestrictions {
    /// Sign normalization only.
    NormOnly,
    /// Normalization plus `alpha >= 0` and `beta <= 0`.
    NormPlusSigns,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateSet {
    pub alpha: Interval,
    pub beta: Interval,
}

fn upper(v: f64) -> Endpoint {
    if v.is_finite() {
        Endpoint::Closed(v)
    } else {
        Endpoint::PosInfinity
    }
}

/// Identified intervals for `(alpha, beta)`.
pub fn bivariate_identified_set(omega: &BivariateCovariances, restrictions: BivariateRestrictions) -> BivariateSet {
    let BivariateCovariances { omega_p2: p2, omega_q2: q2, omega_pq: pq } = *omega;
    let case_one = pq >= 0.0;
    match (restrictions, case_one) {
        (BivariateRestrictions::NormOnly, true) => BivariateSet {
            alpha: Interval { lo: Endpoint::NegInfinity, hi: upper(q2 / pq) },
            beta: Interval::unbounded(),
        },
        (BivariateRestrictions::NormOnly, false) => {
            BivariateSet { alpha: Interval::unbounded(), beta: Interval::unbounded() }
        }
        (BivariateRestrictions::NormPlusSigns, true) => BivariateSet {
            alpha: Interval { lo: Endpoint::Closed(pq / p2), hi: upper(q2 / pq) },
            beta: Interval { lo: Endpoint::NegInfinity, hi: Endpoint::Closed(0.0) },
        },
        (BivariateRestrictions::NormPlusSigns, false) => BivariateSet {
            alpha: Interval { lo: Endpoint::Closed(0.0), hi: Endpoint::PosInfinity },
            beta: Interval { lo: Endpoint::Closed(p2 / pq), hi: Endpoint::Closed(pq / q2) },
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointRestriction {
    BetaZero,
    AlphaZero,
}

/// OLS ratios: `alpha = omega_pq / omega_p^2` when `beta = 0`, and
/// `beta = omega_pq / omega_q^2` when `alpha = 0`.
pub fn bivariate_ols_point(omega: &BivariateCovariances, restriction: PointRestriction) -> Result<f64> {
    match restriction {
        PointRestriction::BetaZero if omega.omega_pq >= 0.0 => Ok(omega.omega_pq / omega.omega_p2),
        PointRestriction::AlphaZero if omega.omega_pq < 0.0 => Ok(omega.omega_pq / omega.omega_q2),
        _ => Err(HsvarError::CaseMismatch),
    }
}

/// `(alpha, beta)` at rotation angle `theta`, or `None` when `q_1` violates the
/// normalization. `q_2` is the orthogonal unit vector satisfying it.
pub fn slopes_at_angle(omega: &BivariateCovariances, theta: f64) -> Option<(f64, f64)> {
    let (w1, w2) = omega.inverse_cholesky_columns();
    let q1 = Vector2::new(theta.cos(), theta.sin());
    let mut q2 = Vector2::new(-theta.sin(), theta.cos());
    if q2.dot(&w2) < 0.0 {
        q2 = -q2;
    }
    let a = q1.dot(&w1);
    let b = q2.dot(&w2);
    if !(a > 0.0) || !(b > 0.0) {
        return None;
    }
    Some((-q2.dot(&w1) / b, -q1.dot(&w2) / a))
}

/// Extremes of `(alpha, beta)` over a uniform angle grid, with the largest
/// change between neighbouring admissible grid points at each extreme.
#[derive(Debug, Clone, Copy)]
pub struct AngleHull {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Local grid resolution at `(alpha_min, alpha_max, beta_min, beta_max)`.
    pub resolution: [f64; 4],
    pub admissible: usize,
}

pub fn angle_grid_hull(omega: &BivariateCovariances, restrictions: BivariateRestrictions, points: usize) -> AngleHull {
    let step = 2.0 * std::f64::consts::PI / points as f64;
    let vals: Vec<Option<(f64, f64)>> = (0..points)
        .map(|k| {
            slopes_at_angle(omega, k as f64 * step).filter(|&(a, b)| match restrictions {
                BivariateRestrictions::NormOnly => true,
                BivariateRestrictions::NormPlusSigns => a >= 0.0 && b <= 0.0,
            })
        })
        .collect();
    let mut ext = [(f64::INFINITY, 0usize), (f64::NEG_INFINITY, 0), (f64::INFINITY, 0), (f64::NEG_INFINITY, 0)];
    let mut admissible = 0;
    for (k, v) in vals.iter().enumerate() {
        if let Some((a, b)) = *v {
            admissible += 1;
            if a < ext[0].0 {
                ext[0] = (a, k);
            }
            if a > ext[1].0 {
                ext[1] = (a, k);
            }
            if b < ext[2].0 {
                ext[2] = (b, k);
            }
            if b > ext[3].0 {
                ext[3] = (b, k);
            }
        }
    }
    let local = |k: usize, alpha: bool| -> f64 {
        let pick = |v: (f64, f64)| if alpha { v.0 } else { v.1 };
        let here = vals[k].map(pick).unwrap_or(0.0);
        [(k + points - 1) % points, (k + 1) % points]
            .iter()
            .filter_map(|&j| vals[j].map(pick))
            .map(|v| (v - here).abs())
            .fold(0.0, f64::max)
    };
    AngleHull {
        alpha_min: ext[0].0,
        alpha_max: ext[1].0,
        beta_min: ext[2].0,
        beta_max: ext[3].0,
        resolution: [local(ext[0].1, true), local(ext[1].1, true), local(ext[2].1, false), local(ext[3].1, false)],
        admissible,
    }
}

/// Eigenvalues `lambda_1 >= lambda_2` of `Omega_1tr^{-1} Omega_2 Omega_1tr^{-1}'`
/// and the discriminant root `Delta`.
pub fn bivariate_eigen(omega1: &BivariateCovariances, omega2: &BivariateCovariances) -> (f64, f64, f64) {
    let (p1, q1, pq1) = (omega1.omega_p2, omega1.omega_q2, omega1.omega_pq);
    let (p2, q2, pq2) = (omega2.omega_p2, omega2.omega_q2, omega2.omega_pq);
    let num = p1 * q2 + p2 * q1 - 2.0 * pq1 * pq2;
    let disc = (p1 * q2 - p2 * q1).powi(2) + 4.0 * (p1 * pq2 - p2 * pq1) * (q1 * pq2 - q2 * pq1);
    let delta = disc.max(0.0).sqrt();
    let den = 2.0 * omega1.det();
    ((num + delta) / den, (num - delta) / den, delta)
}

/// Coefficients `(b, c)` of the monic characteristic polynomial
/// `lambda^2 + b lambda + c`.
pub fn bivariate_characteristic(omega1: &BivariateCovariances, omega2: &BivariateCovariances) -> (f64, f64) {
    let (p1, q1, pq1) = (omega1.omega_p2, omega1.omega_q2, omega1.omega_pq);
    let (p2, q2, pq2) = (omega2.omega_p2, omega2.omega_q2, omega2.omega_pq);
    let d1 = omega1.det();
    (-(p1 * q2 + p2 * q1 - 2.0 * pq1 * pq2) / d1, omega2.det() / d1)
}
