//! Gibbs sampler for the reduced form under a Normal prior on `vec(B)` and
//! independent inverse-Wishart priors on the regime covariances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{HsvarError, Result};
use crate::linalg::{cholesky_lower, draw_inverse_wishart, spd_inverse};
use crate::reduced_form::{ols_estimate, Dataset, ReducedForm};

/// Prior hyperparameters.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    pub mu_phi: DVector<f64>,
    pub v_phi: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub d1: f64,
    pub d2: f64,
}

impl PriorSpec {
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let k = n * m;
        if self.mu_phi.len() != k || self.v_phi.nrows() != k || self.v_phi.ncols() != k {
            return Err(HsvarError::DimensionMismatch(format!("prior on vec(B) must have dimension {k}")));
        }
        if self.s1.nrows() != n || self.s2.nrows() != n {
            return Err(HsvarError::DimensionMismatch(format!("prior scale must be {n}x{n}")));
        }
        for d in [self.d1, self.d2] {
            if !(d > n as f64 + 1.0) {
                return Err(HsvarError::DofTooSmall { dof: d, min: n as f64 + 1.0 });
            }
        }
        cholesky_lower(&self.v_phi)?;
        cholesky_lower(&self.s1)?;
        cholesky_lower(&self.s2)?;
        Ok(())
    }

    /// Prior precision `V_phi^{-1}`.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.v_phi)
    }
}

/// Diffuse default: `mu = 0`, `V = 1e4 I`, `d_i = n + 2`, `S_i = I`.
pub fn default_diffuse_prior(n: usize, m: usize) -> PriorSpec {
    let d = n as f64 + 2.0;
    let s = DMatrix::identity(n, n) * (d - n as f64 - 1.0);
    PriorSpec {
        mu_phi: DVector::zeros(n * m),
        v_phi: DMatrix::identity(n * m, n * m) * 1e4,
        s1: s.clone(),
        s2: s,
        d1: d,
        d2: d,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub draws: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig { burn_in: 1000, draws: 1000, thinning: 1, seed: 0 }
    }
}

/// Retained posterior draws with a per-draw stability flag.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub draws: Vec<ReducedForm>,
    pub stable: Vec<bool>,
}

/// Sufficient statistics per regime: `X X'`, `Y X'`, `Y Y'`, `T_i`.
#[derive(Debug, Clone)]
struct RegimeMoments {
    xx: DMatrix<f64>,
    yx: DMatrix<f64>,
    yy: DMatrix<f64>,
    t: usize,
}

fn regime_moments(data: &Dataset) -> [RegimeMoments; 2] {
    let [(y1, x1), (y2, x2)] = data.regime_blocks();
    let mk = |y: &DMatrix<f64>, x: &DMatrix<f64>| RegimeMoments {
        xx: x * x.transpose(),
        yx: y * x.transpose(),
        yy: y * y.transpose(),
        t: y.ncols(),
    };
    [mk(&y1, &x1), mk(&y2, &x2)]
}

/// Posterior mean and precision of `vec(B)` given the covariances. Passing
/// `None` for the prior drops the prior terms.
pub fn phi_posterior_moments(
    data: &Dataset,
    prior: Option<(&DVector<f64>, &DMatrix<f64>)>,
    omega1: &DMatrix<f64>,
    omega2: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let moments = regime_moments(data);
    posterior_from_moments(&moments, data.n(), data.m(), prior, omega1, omega2)
}

fn posterior_from_moments(
    moments: &[RegimeMoments; 2],
    n: usize,
    m: usize,
    prior: Option<(&DVector<f64>, &DMatrix<f64>)>,
    omega1: &DMatrix<f64>,
    omega2: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut precision = DMatrix::zeros(n * m, n * m);
    let mut cross = DMatrix::zeros(n, m);
    for (mo, om) in moments.iter().zip([omega1, omega2]) {
        let oi = spd_inverse(om)?;
        precision += mo.xx.kronecker(&oi);
        cross += &oi * &mo.yx;
    }
    let mut rhs = DVector::from_column_slice(cross.as_slice());
    if let Some((mu, vinv)) = prior {
        precision += vinv;
        rhs += vinv * mu;
    }
    let precision = (&precision + precision.transpose()) * 0.5;
    let l = cholesky_lower(&precision).map_err(|_| HsvarError::SingularPosteriorCovariance)?;
    let z = l.solve_lower_triangular(&rhs).ok_or(HsvarError::SingularPosteriorCovariance)?;
    let mean = l.transpose().solve_upper_triangular(&z).ok_or(HsvarError::SingularPosteriorCovariance)?;
    Ok((mean, precision))
}

fn draw_from_precision<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let l = cholesky_lower(precision).map_err(|_| HsvarError::SingularPosteriorCovariance)?;
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    // x = L'^{-1} z has covariance (L L')^{-1}
    let x = l.transpose().solve_upper_triangular(&z).ok_or(HsvarError::SingularPosteriorCovariance)?;
    Ok(mean + x)
}

/// One draw of `B` from its Normal full conditional.
pub fn draw_phi_given_omegas<R: Rng + ?Sized>(
    data: &Dataset,
    prior: &PriorSpec,
    omega1: &DMatrix<f64>,
    omega2: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let vinv = prior.precision().map_err(|_| HsvarError::SingularPosteriorCovariance)?;
    let (mean, precision) = phi_posterior_moments(data, Some((&prior.mu_phi, &vinv)), omega1, omega2)?;
    let phi = draw_from_precision(&mean, &precision, rng)?;
    Ok(DMatrix::from_column_slice(data.n(), data.m(), phi.as_slice()))
}

fn residual_cross(mo: &RegimeMoments, b: &DMatrix<f64>) -> DMatrix<f64> {
    let bxy = b * mo.yx.transpose();
    let r = &mo.yy - &bxy - bxy.transpose() + b * &mo.xx * b.transpose();
    (&r + r.transpose()) * 0.5
}

fn omegas_from_moments<R: Rng + ?Sized>(
    moments: &[RegimeMoments; 2],
    prior: &PriorSpec,
    b: &DMatrix<f64>,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut out = Vec::with_capacity(2);
    for (k, (mo, (s, d))) in moments.iter().zip([(&prior.s1, prior.d1), (&prior.s2, prior.d2)]).enumerate() {
        if mo.t == 0 {
            return Err(HsvarError::InvalidRegime(format!("regime {} is empty", k + 1)));
        }
        let scale = s + residual_cross(mo, b);
        out.push(draw_inverse_wishart(&scale, mo.t as f64 + d, rng)?);
    }
    let o2 = out.pop().unwrap();
    let o1 = out.pop().unwrap();
    Ok((o1, o2))
}

/// Independent inverse-Wishart draws of the regime covariances given `B`.
pub fn draw_omegas_given_phi<R: Rng + ?Sized>(
    data: &Dataset,
    prior: &PriorSpec,
    b: &DMatrix<f64>,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    omegas_from_moments(&regime_moments(data), prior, b, rng)
}

/// Stateful chain; [`run_gibbs`] wraps it, the bounds driver streams from it.
pub struct GibbsSampler {
    moments: [RegimeMoments; 2],
    prior: PriorSpec,
    prior_precision: DMatrix<f64>,
    n: usize,
    m: usize,
    omega1: DMatrix<f64>,
    omega2: DMatrix<f64>,
    rng: ChaCha8Rng,
}

impl GibbsSampler {
    /// Starts the chain at the OLS covariances.
    pub fn new(data: &Dataset, prior: &PriorSpec, seed: u64) -> Result<Self> {
        let (n, m) = (data.n(), data.m());
        prior.validate(n, m)?;
        let (t1, t2) = data.regime_sizes();
        if t1 == 0 || t2 == 0 {
            return Err(HsvarError::InvalidRegime("empty regime".into()));
        }
        let start = match ols_estimate(data) {
            Ok(rf) => rf,
            Err(HsvarError::InvalidRegime(_)) => {
                // short regimes: fall back to the pooled residual covariance
                let x = data.regressors();
                let y = &data.observations;
                let bt =
                    (&x * x.transpose()).try_inverse().ok_or(HsvarError::SingularRegressors)? * (&x * y.transpose());
                let u = y - bt.transpose() * &x;
                let om = &u * u.transpose() / data.t() as f64;
                ReducedForm { b: bt.transpose(), omega1: om.clone(), omega2: om }
            }
            Err(e) => return Err(e),
        };
        Ok(GibbsSampler {
            moments: regime_moments(data),
            prior_precision: prior.precision()?,
            prior: prior.clone(),
            n,
            m,
            omega1: start.omega1,
            omega2: start.omega2,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// One full sweep: `B | Omega`, then `Omega | B`.
    pub fn step(&mut self) -> Result<ReducedForm> {
        let (mean, precision) = posterior_from_moments(
            &self.moments,
            self.n,
            self.m,
            Some((&self.prior.mu_phi, &self.prior_precision)),
            &self.omega1,
            &self.omega2,
        )?;
        let phi = draw_from_precision(&mean, &precision, &mut self.rng)?;
        let b = DMatrix::from_column_slice(self.n, self.m, phi.as_slice());
        let (o1, o2) = omegas_from_moments(&self.moments, &self.prior, &b, &mut self.rng)?;
        self.omega1 = o1.clone();
        self.omega2 = o2.clone();
        Ok(ReducedForm { b, omega1: o1, omega2: o2 })
    }

    /// Runs `burn_in` sweeps and discards them.
    pub fn burn(&mut self, burn_in: usize) -> Result<()> {
        for _ in 0..burn_in {
            self.step()?;
        }
        Ok(())
    }

    /// Next retained draw after `thinning` sweeps.
    pub fn next_kept(&mut self, thinning: usize) -> Result<ReducedForm> {
        let mut last = self.step()?;
        for _ in 1..thinning.max(1) {
            last = self.step()?;
        }
        Ok(last)
    }
}

/// Runs the chain: burn-in, then `draws` retained draws every `thinning` sweeps.
pub fn run_gibbs(data: &Dataset, prior: &PriorSpec, config: &GibbsConfig) -> Result<PosteriorDraws> {
    if config.draws == 0 || config.thinning == 0 {
        return Err(HsvarError::InvalidRegime("draws and thinning must be at least 1".into()));
    }
    let mut sampler = GibbsSampler::new(data, prior, config.seed)?;
    sampler.burn(config.burn_in)?;
    let mut draws = Vec::with_capacity(config.draws);
    let mut stable = Vec::with_capacity(config.draws);
    for _ in 0..config.draws {
        let rf = sampler.next_kept(config.thinning)?;
        stable.push(rf.is_stable());
        draws.push(rf);
    }
    Ok(PosteriorDraws { draws, stable })
}
