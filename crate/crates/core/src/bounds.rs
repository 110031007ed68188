//! Robust-Bayes bounds for set-identified responses.
//!
//! For every posterior draw of the reduced form the admissible rotations are
//! sampled, the identified set of each response is bounded by constrained
//! optimization over the unit sphere of the relevant eigenspace, and the
//! per-draw bounds are summarized by posterior-mean bounds, robust credible
//! regions and single-prior HPD regions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HsvarError, Result};
use crate::gibbs::{GibbsSampler, PriorSpec};
use crate::ident::{constrained_basis, pool_eigenvalues, solve_eigen, EigenIdentification, NormalizationRule};
use crate::linalg::{orthogonal_complement, orthonormal_span, project_out};
use crate::reduced_form::{long_run_responses, vma_coefficients, Dataset, ReducedForm, VmaCoefficients};
use crate::restrictions::{
    compile, exact_prefix, order_variables, OrderedProgram, RestrictionProgram, RestrictionSpec,
};

const DEGENERATE_TOL: f64 = 1e-12;
const SIGN_TOL: f64 = 1e-10;
const LINEAR_TOL: f64 = 1e-12;
const ACTIVE_TOL: f64 = 1e-9;
const MAX_ASCENT_STEPS: usize = 500;
const COMPLETION_ATTEMPTS: usize = 64;
const COMPLETION_SEED: u64 = 0x5eed_c0de;
const NONLINEAR_TOL: f64 = 1e-11;
const NONLINEAR_ACTIVE: f64 = 1e-8;
const FD_STEP: f64 = 1e-6;
/// Half-circle resolution for two-dimensional scans.
const CIRCLE_SCAN: usize = 180;
const POOL_SAMPLES: usize = 2000;
const POOL_ATTEMPT_FACTOR: usize = 50;
const POOL_STARTS: usize = 6;
const HALVINGS: usize = 40;
const BISECTIONS: usize = 45;
const SLIDE_TRIALS: usize = 12;
/// Ascent stops after two steps gaining less than this fraction of `|h|`.
const STEP_GAIN_TOL: f64 = 1e-10;
/// Draws used when the shock-first ordering cannot parametrize the set.
const FALLBACK_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundMethod {
    /// Multistart constrained ascent.
    Optimizer,
    /// Min and max over `K` admissible draws (inner approximation).
    Stochastic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlgoConfig {
    /// Accepted draws `M`.
    pub accepted_draws: usize,
    /// Sign-check attempts `L` per posterior draw.
    pub sign_attempts: usize,
    pub multistarts: usize,
    /// Admissible draws screened for additional optimizer starts.
    pub start_pool: usize,
    /// Iterations `K` of the draw-based bounds.
    pub stochastic_iterations: usize,
    pub eta_grid: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Largest reported horizon.
    pub horizons: usize,
    pub method: BoundMethod,
    pub burn_in: usize,
    pub thinning: usize,
    /// Variables whose responses are reported cumulated over horizons.
    pub cumulate: Vec<usize>,
    pub normalization: NormalizationRule,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            accepted_draws: 1000,
            sign_attempts: 3000,
            multistarts: 5,
            start_pool: 200,
            stochastic_iterations: 10_000,
            eta_grid: 400,
            alpha: 0.68,
            seed: 0,
            horizons: 24,
            method: BoundMethod::Optimizer,
            burn_in: 1000,
            thinning: 1,
            cumulate: Vec::new(),
            normalization: NormalizationRule::default(),
        }
    }
}

impl AlgoConfig {
    pub fn search(&self) -> SearchSettings {
        SearchSettings { starts: self.multistarts, attempts: self.sign_attempts, pool_draws: self.start_pool }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HsvarError::InvalidConfig(m.to_string()));
        if self.accepted_draws == 0 {
            return bad("accepted draws must be at least 1");
        }
        if self.sign_attempts == 0 {
            return bad("sign attempts must be at least 1");
        }
        if self.multistarts == 0 || self.stochastic_iterations == 0 {
            return bad("multistarts and stochastic iterations must be at least 1");
        }
        if self.eta_grid < 2 {
            return bad("eta grid needs at least 2 points");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.thinning == 0 {
            return bad("thinning must be at least 1");
        }
        Ok(())
    }
}

/// Scalar response whose value is `c' q_j` for the shock's rotation column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtaFunctional {
    Ir {
        g: usize,
        h: usize,
    },
    /// Sum of the responses at horizons `0..=h`.
    CumIr {
        g: usize,
        h: usize,
    },
    IrInf {
        g: usize,
    },
    CirInf {
        g: usize,
    },
}

impl EtaFunctional {
    pub fn variable(&self) -> usize {
        match *self {
            EtaFunctional::Ir { g, .. }
            | EtaFunctional::CumIr { g, .. }
            | EtaFunctional::IrInf { g }
            | EtaFunctional::CirInf { g } => g,
        }
    }

    /// Coefficient row `c` given the reduced form and `L = chol(Omega_1)`.
    pub fn coefficients(&self, rf: &ReducedForm, vma: &VmaCoefficients, l: &DMatrix<f64>) -> Result<DVector<f64>> {
        let n = rf.n();
        let g = self.variable();
        if g >= n {
            return Err(HsvarError::IndexOutOfBounds(format!("variable {} exceeds {n}", g + 1)));
        }
        let horizon = |h: usize| {
            if h > vma.horizons() {
                Err(HsvarError::HorizonExceeded { horizon: h, max: vma.horizons() })
            } else {
                Ok(())
            }
        };
        Ok(match *self {
            EtaFunctional::Ir { h, .. } => {
                horizon(h)?;
                (vma.c[h].row(g) * l).transpose()
            }
            EtaFunctional::CumIr { h, .. } => {
                horizon(h)?;
                let mut row = vma.c[0].row(g).into_owned();
                for c in &vma.c[1..=h] {
                    row += c.row(g);
                }
                (row * l).transpose()
            }
            EtaFunctional::IrInf { .. } => long_run_responses(rf, l)?.0.row(g).transpose(),
            EtaFunctional::CirInf { .. } => long_run_responses(rf, l)?.1.row(g).transpose(),
        })
    }
}

fn signs_hold(rows: &DMatrix<f64>, q: &DVector<f64>) -> bool {
    rows.row_iter().all(|r| {
        let r = r.transpose();
        r.dot(q) >= -SIGN_TOL * r.norm()
    })
}

/// True when every shock's sign rows hold for its column of `q`.
pub fn is_admissible(program: &RestrictionProgram, q: &DMatrix<f64>) -> bool {
    (0..program.n).all(|j| signs_hold(&program.signs[j], &q.column(j).into_owned()))
}

fn gaussian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// One pass of the sequential construction, without the sign check.
fn draw_rotation<R: Rng + ?Sized>(
    sol: &EigenIdentification,
    ordered: &OrderedProgram,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = sol.n();
    let prog = &ordered.program;
    let mut q_user = DMatrix::zeros(n, n);
    for (k, order) in ordered.order.iter().enumerate() {
        let comp = sol.complement_basis(k);
        let mut built: Vec<DVector<f64>> = Vec::new();
        for &shock in order {
            let f = &prog.zeros[shock];
            let (nf, nc) = (f.nrows(), comp.ncols());
            let mut basis = DMatrix::zeros(n, nf + nc + built.len());
            basis.columns_mut(0, nf).copy_from(&f.transpose());
            basis.columns_mut(nf, nc).copy_from(&comp);
            for (i, b) in built.iter().enumerate() {
                basis.set_column(nf + nc + i, b);
            }
            let r = project_out(&gaussian(n, rng), &basis);
            let norm = r.norm();
            if norm < DEGENERATE_TOL {
                return Err(HsvarError::ProjectionDegenerate);
            }
            let mut q = r / norm;
            if prog.norm_rows[shock].dot(&q) < 0.0 {
                q.neg_mut();
            }
            q_user.set_column(shock, &q);
            built.push(q);
        }
    }
    Ok(q_user)
}

/// Draws an admissible rotation (columns in user shock order), or `None`
/// when `attempts` consecutive tries fail the sign restrictions.
pub fn draw_admissible_q<R: Rng + ?Sized>(
    sol: &EigenIdentification,
    ordered: &OrderedProgram,
    rng: &mut R,
    attempts: usize,
) -> Result<Option<DMatrix<f64>>> {
    for _ in 0..attempts {
        match draw_rotation(sol, ordered, rng) {
            Ok(q) if is_admissible(&ordered.program, &q) => return Ok(Some(q)),
            Ok(_) | Err(HsvarError::ProjectionDegenerate) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

fn stack_rows(top: &DMatrix<f64>, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let n = top.ncols();
    let mut rows = DMatrix::zeros(top.nrows() + cols.len(), n);
    rows.rows_mut(0, top.nrows()).copy_from(top);
    for (i, c) in cols.iter().enumerate() {
        rows.row_mut(top.nrows() + i).copy_from(&c.transpose());
    }
    rows
}

/// Nearly uniform deterministic points on the unit sphere in three dimensions.
fn fibonacci_sphere(count: usize) -> Vec<DVector<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
        })
        .collect()
}

/// Feasible region for one shock's column, parametrized as `q = W x` with
/// `x` on the unit sphere.
struct ShockProblem<'a> {
    prog: &'a RestrictionProgram,
    space: DMatrix<f64>,
    w: DMatrix<f64>,
    prefix: Vec<DVector<f64>>,
    /// Unit rows `a` with `a' x >= 0` (sign and normalization rows).
    lin: Vec<DVector<f64>>,
    /// Remaining shocks of the block that must admit a completion.
    rest: Vec<usize>,
    /// Index in `rest` of the last shock carrying sign rows.
    last_signed: Option<usize>,
    /// Remaining columns up to the last signed one are unique up to sign, so
    /// their sign rows are smooth functions of `x`.
    smooth: bool,
    /// Fixing this shock first leaves some later column without a free
    /// direction; the column of interest then lives on a thinner set than `W`.
    degenerate_order: bool,
}

impl<'a> ShockProblem<'a> {
    fn new(sol: &EigenIdentification, ordered: &'a OrderedProgram, shock: usize) -> Self {
        let prog = &ordered.program;
        let (b, rank) = ordered.locate(shock);
        let counts = ordered.counts(b);
        let m = counts.len();
        let mut k0 = 0;
        while k0 + 1 < rank && counts[k0] == m - (k0 + 1) {
            k0 += 1;
        }
        let (prefix, k0) = match exact_prefix(sol, ordered, b, k0) {
            Some(p) => (p, k0),
            None => (Vec::new(), 0),
        };
        let space = sol.block_basis(b);
        let (w, _) = constrained_basis(&space, &stack_rows(&prog.zeros[shock], &prefix));
        let mut lin = Vec::new();
        let sign_rows = prog.signs[shock].row_iter().map(|r| r.transpose());
        for a in sign_rows.chain(std::iter::once(prog.norm_rows[shock].clone())) {
            let ax = w.transpose() * a;
            let norm = ax.norm();
            if norm > 1e-14 {
                lin.push(ax / norm);
            }
        }
        let rest: Vec<usize> = ordered.order[b].iter().skip(k0).copied().filter(|&s| s != shock).collect();
        let dims: Vec<isize> =
            rest.iter().enumerate().map(|(i, &s)| m as isize - prog.f(s) as isize - (k0 + 1 + i) as isize).collect();
        let last_signed = rest.iter().rposition(|&s| prog.s(s) > 0);
        let smooth = last_signed.is_none_or(|p| dims[..=p].iter().all(|&d| d == 1));
        ShockProblem {
            prog,
            space,
            w,
            prefix,
            lin,
            rest,
            last_signed,
            smooth,
            degenerate_order: dims.iter().any(|&d| d <= 0),
        }
    }

    fn dim(&self) -> usize {
        self.w.ncols()
    }

    fn linear_ok(&self, x: &DVector<f64>) -> bool {
        self.lin.iter().all(|a| a.dot(x) >= -LINEAR_TOL)
    }

    /// Sign rows of the remaining columns as sign-invariant products
    /// `(r' v)(sigma' v)`, scaled to `[-1, 1]`. Only for smooth problems.
    fn nonlinear(&self, x: &DVector<f64>) -> Option<Vec<f64>> {
        let mut vals = Vec::new();
        let Some(last) = self.last_signed else {
            return Some(vals);
        };
        let mut built = self.prefix.clone();
        built.push(&self.w * x);
        for &s in &self.rest[..=last] {
            let (basis, _) = constrained_basis(&self.space, &stack_rows(&self.prog.zeros[s], &built));
            if basis.ncols() == 0 {
                return None;
            }
            let v = basis.column(0).into_owned();
            let sigma = &self.prog.norm_rows[s];
            let sv = sigma.dot(&v) / sigma.norm();
            for r in self.prog.signs[s].row_iter() {
                let r = r.transpose();
                vals.push(r.dot(&v) / r.norm() * sv);
            }
            built.push(v);
        }
        Some(vals)
    }

    fn nonlinear_ok(&self, x: &DVector<f64>) -> bool {
        self.nonlinear(x).is_some_and(|c| c.iter().all(|&v| v >= -NONLINEAR_TOL))
    }

    /// Tangent-space gradients of the selected nonlinear constraints.
    fn nonlinear_gradients(&self, x: &DVector<f64>, ks: &[usize]) -> Option<Vec<DVector<f64>>> {
        let d = x.len();
        let tangent = orthogonal_complement(&DMatrix::from_column_slice(d, 1, x.as_slice()));
        let mut grads = vec![DVector::zeros(d); ks.len()];
        for e in tangent.column_iter() {
            let e = e.into_owned();
            let up = self.nonlinear(&(x + &e * FD_STEP).normalize())?;
            let down = self.nonlinear(&(x - &e * FD_STEP).normalize())?;
            for (g, &k) in grads.iter_mut().zip(ks) {
                *g += &e * ((up[k] - down[k]) / (2.0 * FD_STEP));
            }
        }
        Some(grads)
    }

    /// Newton steps back onto violated nonlinear constraints.
    fn restore(&self, mut y: DVector<f64>) -> Option<DVector<f64>> {
        for _ in 0..10 {
            let c = self.nonlinear(&y)?;
            let viol: Vec<usize> = (0..c.len()).filter(|&k| c[k] < -NONLINEAR_TOL).collect();
            if viol.is_empty() {
                return Some(y);
            }
            let grads = self.nonlinear_gradients(&y, &viol)?;
            let mut j = DMatrix::zeros(viol.len(), y.len());
            for (i, g) in grads.iter().enumerate() {
                j.row_mut(i).copy_from(&g.transpose());
            }
            let rhs = DVector::from_iterator(viol.len(), viol.iter().map(|&k| -c[k]));
            let step = j.pseudo_inverse(1e-12).ok()? * rhs;
            y = (y + step).normalize();
        }
        Some(y)
    }

    /// Depth-first search for the remaining columns around `built`.
    fn complete_from(&self, built: &mut Vec<DVector<f64>>, i: usize, rng: &mut ChaCha8Rng) -> bool {
        let Some(last) = self.last_signed else {
            return true;
        };
        if i > last {
            return true;
        }
        let s = self.rest[i];
        let (basis, _) = constrained_basis(&self.space, &stack_rows(&self.prog.zeros[s], built));
        let candidates: Vec<DVector<f64>> = match basis.ncols() {
            0 => return false,
            1 => vec![basis.column(0).into_owned()],
            2 => (0..CIRCLE_SCAN)
                .map(|k| {
                    let t = std::f64::consts::PI * k as f64 / CIRCLE_SCAN as f64;
                    basis.column(0) * t.cos() + basis.column(1) * t.sin()
                })
                .collect(),
            d => (0..COMPLETION_ATTEMPTS).map(|_| &basis * gaussian(d, rng).normalize()).collect(),
        };
        for mut v in candidates {
            if self.prog.norm_rows[s].dot(&v) < 0.0 {
                v.neg_mut();
            }
            if !signs_hold(&self.prog.signs[s], &v) {
                continue;
            }
            built.push(v);
            if self.complete_from(built, i + 1, rng) {
                return true;
            }
            built.pop();
        }
        false
    }

    fn feasible(&self, x: &DVector<f64>) -> bool {
        if !self.linear_ok(x) {
            return false;
        }
        if self.smooth {
            return self.nonlinear_ok(x);
        }
        let mut built = self.prefix.clone();
        built.push(&self.w * x);
        let mut rng = ChaCha8Rng::seed_from_u64(COMPLETION_SEED);
        self.complete_from(&mut built, 0, &mut rng)
    }

    /// Closest direction to `d` keeping every active row non-decreasing.
    fn project_cone(d: &DVector<f64>, active: &[DVector<f64>]) -> DVector<f64> {
        if active.iter().all(|a| a.dot(d) >= 0.0) {
            return d.clone();
        }
        let k = active.len();
        let feasible = |v: &DVector<f64>| active.iter().all(|a| a.dot(v) >= -1e-14 * a.norm());
        if k > 12 {
            // cyclic fallback for unusually many active rows
            let mut v = d.clone();
            for _ in 0..50 {
                for a in active {
                    let s = a.dot(&v);
                    if s < 0.0 {
                        v -= a * (s / a.norm_squared());
                    }
                }
            }
            return if feasible(&v) { v } else { DVector::zeros(d.len()) };
        }
        let mut best = DVector::zeros(d.len());
        let mut best_dist = d.norm_squared();
        for mask in 1u32..(1u32 << k) {
            let chosen: Vec<&DVector<f64>> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| &active[i]).collect();
            let mut a = DMatrix::zeros(d.len(), chosen.len());
            for (c, v) in chosen.iter().enumerate() {
                a.set_column(c, v);
            }
            let u = orthonormal_span(&a);
            let v = d - &u * (u.transpose() * d);
            let dist = (d - &v).norm_squared();
            if dist < best_dist && feasible(&v) {
                best = v;
                best_dist = dist;
            }
        }
        best
    }

    /// Local maximum of `h' x` from a feasible `x`, moving along great
    /// circles. Returns the objective value reached.
    fn ascend(&self, h: &DVector<f64>, mut x: DVector<f64>) -> f64 {
        let hn = h.norm();
        let mut val = h.dot(&x);
        if hn == 0.0 || x.len() < 2 {
            return val;
        }
        let mut stalls = 0;
        for _ in 0..MAX_ASCENT_STEPS {
            let mut active: Vec<DVector<f64>> =
                self.lin.iter().filter(|a| a.dot(&x) <= ACTIVE_TOL).map(|a| a - &x * a.dot(&x)).collect();
            let mut sliding = false;
            if self.smooth {
                if let Some(c) = self.nonlinear(&x) {
                    let ks: Vec<usize> = (0..c.len()).filter(|&k| c[k] <= NONLINEAR_ACTIVE).collect();
                    if !ks.is_empty() {
                        sliding = true;
                        if let Some(g) = self.nonlinear_gradients(&x, &ks) {
                            active.extend(g);
                        }
                    }
                }
            }
            let mut d = Self::project_cone(&(h - &x * h.dot(&x)), &active);
            d -= &x * x.dot(&d);
            let dn = d.norm();
            if dn <= 1e-12 * hn {
                break;
            }
            let u = d / dn;
            let hu = h.dot(&u);
            if hu <= 0.0 {
                break;
            }
            let mut theta = hu.atan2(h.dot(&x));
            for a in &self.lin {
                let au = a.dot(&u);
                if au < 0.0 {
                    theta = theta.min(a.dot(&x).max(0.0).atan2(-au));
                }
            }
            let arc = |t: f64| (&x * t.cos() + &u * t.sin()).normalize();
            let mut next = None;
            let mut next_val = val;
            let full = arc(theta);
            if self.feasible(&full) {
                next = Some(full);
            } else {
                // halve to a feasible step, then bisect onto the boundary
                let mut t = theta;
                let mut found = None;
                for _ in 0..HALVINGS {
                    t *= 0.5;
                    if self.feasible(&arc(t)) {
                        found = Some(t);
                        break;
                    }
                }
                if let Some(tf) = found {
                    let (mut lo, mut hi) = (tf, (2.0 * tf).min(theta));
                    for _ in 0..BISECTIONS {
                        let mid = 0.5 * (lo + hi);
                        if self.feasible(&arc(mid)) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let y = arc(lo);
                    let v = h.dot(&y);
                    if v > next_val {
                        next_val = v;
                        next = Some(y);
                    }
                }
                if sliding {
                    // follow curved active constraints: step, then pull back onto them
                    let mut t = theta;
                    for _ in 0..SLIDE_TRIALS {
                        if let Some(y) = self.restore(arc(t)) {
                            let v = h.dot(&y);
                            if v > next_val && self.feasible(&y) {
                                next_val = v;
                                next = Some(y);
                            }
                        }
                        t *= 0.5;
                    }
                }
            }
            let Some(y) = next else {
                break;
            };
            let gain = h.dot(&y) - val;
            if gain <= 0.0 {
                break;
            }
            x = y;
            val += gain;
            if gain < STEP_GAIN_TOL * hn {
                stalls += 1;
                if stalls >= 2 {
                    break;
                }
            } else {
                stalls = 0;
            }
        }
        val
    }

    fn to_x(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.w.transpose() * q).normalize()
    }

    /// Feasible points grouped into connected runs (circle) or singletons
    /// (random sphere samples), used as extra starting values.
    fn candidate_pool<R: Rng + ?Sized>(&self, natural: &[DVector<f64>], rng: &mut R) -> Vec<Vec<DVector<f64>>> {
        let d = self.dim();
        let mut pool: Vec<Vec<DVector<f64>>> = natural.iter().map(|q| vec![self.to_x(q)]).collect();
        if d == 2 {
            let pts: Vec<(DVector<f64>, bool)> = (0..CIRCLE_SCAN * 2)
                .map(|k| {
                    let t = std::f64::consts::PI * k as f64 / CIRCLE_SCAN as f64;
                    let x = DVector::from_vec(vec![t.cos(), t.sin()]);
                    let ok = self.feasible(&x);
                    (x, ok)
                })
                .collect();
            let mut runs: Vec<Vec<DVector<f64>>> = Vec::new();
            let mut current: Vec<DVector<f64>> = Vec::new();
            for (x, ok) in pts {
                if ok {
                    current.push(x);
                } else if !current.is_empty() {
                    runs.push(std::mem::take(&mut current));
                }
            }
            if !current.is_empty() {
                runs.push(current);
            }
            pool.extend(runs);
            return pool;
        }
        let sphere: Vec<DVector<f64>> = if d == 3 {
            fibonacci_sphere(POOL_SAMPLES)
        } else {
            (0..POOL_SAMPLES).map(|_| gaussian(d, rng).normalize()).collect()
        };
        pool.extend(sphere.into_iter().filter(|x| self.feasible(x)).map(|x| vec![x]));
        pool
    }

    /// `(min, max)` of `coef' q` from the given admissible columns and pool.
    fn bounds(&self, coef: &DVector<f64>, starts: &[DVector<f64>], pool: &[Vec<DVector<f64>>]) -> (f64, f64) {
        let g = self.w.transpose() * coef;
        let neg = -&g;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let from_pool = |h: &DVector<f64>| -> Vec<DVector<f64>> {
            let mut best: Vec<(f64, &DVector<f64>)> = pool
                .iter()
                .filter_map(|run| run.iter().map(|x| (h.dot(x), x)).max_by(|a, b| a.0.total_cmp(&b.0)))
                .collect();
            best.sort_by(|a, b| b.0.total_cmp(&a.0));
            best.into_iter().take(POOL_STARTS).map(|(_, x)| x.clone()).collect()
        };
        let up_starts = from_pool(&g);
        let down_starts = from_pool(&neg);
        for q in starts {
            let x = self.to_x(q);
            hi = hi.max(self.ascend(&g, x.clone()));
            lo = lo.min(-self.ascend(&neg, x));
        }
        for x in up_starts {
            hi = hi.max(self.ascend(&g, x));
        }
        for x in down_starts {
            lo = lo.min(-self.ascend(&neg, x));
        }
        let gn = g.norm();
        if gn > 0.0 {
            let top = &g / gn;
            if self.feasible(&top) {
                hi = gn;
            }
            if self.feasible(&-&top) {
                lo = -gn;
            }
        }
        (lo, hi)
    }
}

/// Effort spent by the bound optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSettings {
    /// Admissible draws used as starting values.
    pub starts: usize,
    /// Sign-check attempts per starting draw.
    pub attempts: usize,
    /// Admissible draws collected as candidate starting values (at most
    /// fifty times as many construction passes); the best few for each
    /// direction are refined.
    pub pool_draws: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings { starts: 5, attempts: 3000, pool_draws: 200 }
    }
}

fn natural_columns<R: Rng + ?Sized>(
    sol: &EigenIdentification,
    ordered: &OrderedProgram,
    shock: usize,
    target: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let mut cols = Vec::new();
    for _ in 0..target.saturating_mul(POOL_ATTEMPT_FACTOR) {
        if cols.len() >= target {
            break;
        }
        match draw_rotation(sol, ordered, rng) {
            Ok(q) if is_admissible(&ordered.program, &q) => cols.push(q.column(shock).into_owned()),
            Ok(_) | Err(HsvarError::ProjectionDegenerate) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(cols)
}

/// Bounds of `coef' q_shock` over the admissible set by multistart ascent
/// from admissible draws.
pub fn optimize_linear<R: Rng + ?Sized>(
    sol: &EigenIdentification,
    program: &RestrictionProgram,
    shock: usize,
    coef: &DVector<f64>,
    settings: &SearchSettings,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let ordered = order_variables(program, &sol.partition, Some(shock));
    let mut qs = Vec::new();
    for _ in 0..settings.starts.max(1) {
        if let Some(q) = draw_admissible_q(sol, &ordered, rng, settings.attempts)? {
            qs.push(q.column(shock).into_owned());
        }
    }
    if qs.is_empty() {
        return Err(HsvarError::NoFeasibleStart);
    }
    let problem = ShockProblem::new(sol, &ordered, shock);
    if problem.dim() <= 1 {
        let v = coef.dot(&qs[0]);
        return Ok((v, v));
    }
    if problem.degenerate_order {
        let cols = stochastic_columns(sol, &ordered, shock, FALLBACK_DRAWS, rng)?;
        let vals: Vec<f64> = cols.iter().chain(&qs).map(|q| coef.dot(q)).collect();
        return Ok(min_max(&vals));
    }
    let natural = natural_columns(sol, &ordered, shock, settings.pool_draws, rng)?;
    let pool = problem.candidate_pool(&natural, rng);
    Ok(problem.bounds(coef, &qs, &pool))
}

/// [`optimize_linear`] for a response functional.
#[allow(clippy::too_many_arguments)]
pub fn optimize_bounds<R: Rng + ?Sized>(
    rf: &ReducedForm,
    vma: &VmaCoefficients,
    sol: &EigenIdentification,
    program: &RestrictionProgram,
    eta: &EtaFunctional,
    shock: usize,
    config: &AlgoConfig,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let coef = eta.coefficients(rf, vma, &sol.omega1_chol)?;
    optimize_linear(sol, program, shock, &coef, &config.search(), rng)
}

fn stochastic_columns<R: Rng + ?Sized>(
    sol: &EigenIdentification,
    ordered: &OrderedProgram,
    shock: usize,
    iterations: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let mut cols = Vec::new();
    for _ in 0..iterations {
        match draw_rotation(sol, ordered, rng) {
            Ok(q) if is_admissible(&ordered.program, &q) => cols.push(q.column(shock).into_owned()),
            Ok(_) | Err(HsvarError::ProjectionDegenerate) => {}
            Err(e) => return Err(e),
        }
    }
    if cols.is_empty() {
        return Err(HsvarError::AllDrawsEmpty);
    }
    Ok(cols)
}

/// Values of `coef' q_shock` over the admissible draws among `iterations`
/// single construction passes.
pub fn stochastic_values<R: Rng + ?Sized>(
    sol: &EigenIdentification,
    program: &RestrictionProgram,
    shock: usize,
    coef: &DVector<f64>,
    iterations: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let ordered = order_variables(program, &sol.partition, Some(shock));
    Ok(stochastic_columns(sol, &ordered, shock, iterations, rng)?.iter().map(|q| coef.dot(q)).collect())
}

/// Inner approximation `(min, max)` of the identified set from draws.
pub fn stochastic_bounds<R: Rng + ?Sized>(
    sol: &EigenIdentification,
    program: &RestrictionProgram,
    shock: usize,
    coef: &DVector<f64>,
    iterations: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let v = stochastic_values(sol, program, shock, coef, iterations, rng)?;
    Ok(min_max(&v))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Largest interior gap of the sorted values relative to the widest
/// neighbouring spacing within `window` positions on either side. Values
/// spread over an interval give ratios near one; a hole gives a large ratio.
pub fn gap_ratio(values: &[f64], window: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let gaps: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let mut worst: f64 = 0.0;
    for (i, &g) in gaps.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(gaps.len());
        let local = gaps[lo..hi].iter().enumerate().filter(|(k, _)| lo + k != i).map(|(_, &s)| s).fold(0.0, f64::max);
        if g > 0.0 {
            worst = worst.max(if local > 0.0 { g / local } else { f64::INFINITY });
        }
    }
    worst
}

/// Shortest interval holding `ceil(alpha N)` of the samples.
pub fn hpd_region(samples: &[f64], alpha: f64) -> (f64, f64) {
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (v[0], v[k - 1]);
    for i in 1..=(n - k) {
        if v[i + k - 1] - v[i] < best.1 - best.0 {
            best = (v[i], v[i + k - 1]);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustRegion {
    pub center: f64,
    pub radius: f64,
    pub grid_step: f64,
}

impl RobustRegion {
    pub fn lo(&self) -> f64 {
        self.center - self.radius
    }

    pub fn hi(&self) -> f64 {
        self.center + self.radius
    }

    pub fn width(&self) -> f64 {
        2.0 * self.radius
    }
}

/// Shortest centered interval covering the per-draw sets `[lower, upper]`
/// with posterior probability at least `alpha`, searched over a grid of
/// `grid` centers spanning the bounds plus a tenth of their range each side.
pub fn robust_credible_region(lower: &[f64], upper: &[f64], alpha: f64, grid: usize) -> RobustRegion {
    let m = lower.len();
    assert_eq!(m, upper.len(), "bound sequences differ in length");
    assert!(m > 0, "no draws");
    let lo = lower.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = upper.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let (a, b) = (lo - span / 10.0, hi + span / 10.0);
    let grid = grid.max(2);
    let step = (b - a) / (grid - 1) as f64;
    let k = ((alpha * m as f64).ceil() as usize).clamp(1, m);
    let mut d = vec![0.0; m];
    let mut best = RobustRegion { center: lo, radius: f64::INFINITY, grid_step: step };
    for i in 0..grid {
        let eta = a + step * i as f64;
        for (t, di) in d.iter_mut().enumerate() {
            *di = (eta - lower[t]).abs().max((eta - upper[t]).abs());
        }
        let (_, q, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
        if *q < best.radius {
            best.radius = *q;
            best.center = eta;
        }
        if span == 0.0 {
            break;
        }
    }
    best
}

/// `1 - width_HPD / width_robust`, clamped to `[0, 1]`.
pub fn informativeness(hpd: (f64, f64), robust: &RobustRegion) -> f64 {
    let wr = robust.width();
    if !(wr > 0.0) {
        return 0.0;
    }
    (1.0 - (hpd.1 - hpd.0) / wr).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub variable: usize,
    pub shock: usize,
    pub horizon: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Response at the drawn admissible rotation (single-prior posterior).
    pub plugin: Vec<f64>,
    pub posterior_mean_bounds: (f64, f64),
    pub plugin_mean: f64,
    pub robust: RobustRegion,
    pub hpd: (f64, f64),
    pub informativeness: f64,
}

impl CellResult {
    #[allow(clippy::too_many_arguments)]
    pub fn summarize(
        variable: usize,
        shock: usize,
        horizon: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        plugin: Vec<f64>,
        alpha: f64,
        grid: usize,
    ) -> Self {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let robust = robust_credible_region(&lower, &upper, alpha, grid);
        let hpd = hpd_region(&plugin, alpha);
        CellResult {
            variable,
            shock,
            horizon,
            posterior_mean_bounds: (mean(&lower), mean(&upper)),
            plugin_mean: mean(&plugin),
            informativeness: informativeness(hpd, &robust),
            robust,
            hpd,
            lower,
            upper,
            plugin,
        }
    }

    /// Same cell summarized at another credibility level.
    pub fn at_alpha(&self, alpha: f64, grid: usize) -> CellResult {
        CellResult::summarize(
            self.variable,
            self.shock,
            self.horizon,
            self.lower.clone(),
            self.upper.clone(),
            self.plugin.clone(),
            alpha,
            grid,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsResult {
    pub n: usize,
    pub horizons: usize,
    pub alpha: f64,
    pub accepted: usize,
    /// Posterior draws examined up to the last accepted one.
    pub total_draws: usize,
    pub empty_draws: usize,
    pub emptiness_rate: f64,
    pub unstable_draws: usize,
    pub cumulated: Vec<usize>,
    /// Indexed by `(variable, shock, horizon)`, horizon fastest.
    pub cells: Vec<CellResult>,
}

impl BoundsResult {
    pub fn cell(&self, variable: usize, shock: usize, horizon: usize) -> &CellResult {
        &self.cells[(variable * self.n + shock) * (self.horizons + 1) + horizon]
    }
}

struct DrawOutput {
    lower: Vec<f64>,
    upper: Vec<f64>,
    plugin: Vec<f64>,
    stable: bool,
}

fn draw_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa1b2_c3d4_e5f6_0789);
    rng.set_stream(index as u64);
    rng
}

struct Context<'a> {
    spec: &'a RestrictionSpec,
    config: &'a AlgoConfig,
    vma_horizons: usize,
}

impl Context<'_> {
    /// Steps 4 and 5 for one posterior draw.
    fn process(&self, rf: &ReducedForm, index: usize) -> Result<Option<DrawOutput>> {
        let cfg = self.config;
        let mut rng = draw_rng(cfg.seed, index);
        let partition = self.spec.partition()?;
        let sol = pool_eigenvalues(&solve_eigen(rf, &cfg.normalization)?, &partition)?;
        let vma = vma_coefficients(rf, self.vma_horizons);
        let program = compile(self.spec, rf, &vma, cfg.normalization.sign_rule)?;
        let base = order_variables(&program, &partition, self.spec.shock_of_interest);
        let Some(q) = draw_admissible_q(&sol, &base, &mut rng, cfg.sign_attempts)? else {
            return Ok(None);
        };
        let n = rf.n();
        let hs = cfg.horizons + 1;
        // responses[h] row g is the coefficient row of (g, h)
        let mut responses: Vec<DMatrix<f64>> = vma.c[..hs].iter().map(|c| c * &sol.omega1_chol).collect();
        for &g in &cfg.cumulate {
            for h in 1..hs {
                let prev = responses[h - 1].row(g).into_owned();
                let mut row = responses[h].row_mut(g);
                row += prev;
            }
        }
        let cells = n * n * hs;
        let mut out = DrawOutput {
            lower: vec![0.0; cells],
            upper: vec![0.0; cells],
            plugin: vec![0.0; cells],
            stable: rf.is_stable(),
        };
        let idx = |g: usize, j: usize, h: usize| (g * n + j) * hs + h;
        for j in 0..n {
            let qj = q.column(j).into_owned();
            for g in 0..n {
                for h in 0..hs {
                    let v = responses[h].row(g).transpose().dot(&qj);
                    let i = idx(g, j, h);
                    out.plugin[i] = v;
                    out.lower[i] = v;
                    out.upper[i] = v;
                }
            }
            let ordered = order_variables(&program, &partition, Some(j));
            let problem = ShockProblem::new(&sol, &ordered, j);
            if problem.dim() <= 1 {
                continue;
            }
            let method = if problem.degenerate_order { BoundMethod::Stochastic } else { cfg.method };
            match method {
                BoundMethod::Optimizer => {
                    let mut starts = vec![qj.clone()];
                    for _ in 1..cfg.multistarts {
                        if let Some(extra) = draw_admissible_q(&sol, &ordered, &mut rng, cfg.sign_attempts)? {
                            starts.push(extra.column(j).into_owned());
                        }
                    }
                    let natural = natural_columns(&sol, &ordered, j, cfg.start_pool, &mut rng)?;
                    let pool = problem.candidate_pool(&natural, &mut rng);
                    for g in 0..n {
                        for h in 0..hs {
                            let coef = responses[h].row(g).transpose();
                            let (lo, hi) = problem.bounds(&coef, &starts, &pool);
                            let i = idx(g, j, h);
                            out.lower[i] = lo.min(out.plugin[i]);
                            out.upper[i] = hi.max(out.plugin[i]);
                        }
                    }
                }
                BoundMethod::Stochastic => {
                    let cols = stochastic_columns(&sol, &ordered, j, cfg.stochastic_iterations, &mut rng)?;
                    for g in 0..n {
                        for h in 0..hs {
                            let coef = responses[h].row(g).transpose();
                            let vals: Vec<f64> = cols.iter().map(|c| coef.dot(c)).collect();
                            let (lo, hi) = min_max(&vals);
                            let i = idx(g, j, h);
                            out.lower[i] = lo.min(out.plugin[i]);
                            out.upper[i] = hi.max(out.plugin[i]);
                        }
                    }
                }
            }
        }
        Ok(Some(out))
    }
}

/// Posterior draws, admissible rotations, per-draw bounds and their
/// robust-Bayes summaries until `accepted_draws` non-empty sets are found.
///
/// The Gibbs chain runs sequentially; the per-draw work runs on the rayon
/// pool with random streams keyed by draw index, so results do not depend on
/// the number of threads.
pub fn run_robust_bayes(
    data: &Dataset,
    prior: &PriorSpec,
    spec: &RestrictionSpec,
    config: &AlgoConfig,
) -> Result<BoundsResult> {
    config.validate()?;
    let n = data.n();
    if spec.n != n {
        return Err(HsvarError::DimensionMismatch(format!(
            "restrictions written for {} variables, data has {n}",
            spec.n
        )));
    }
    for &g in &config.cumulate {
        if g >= n {
            return Err(HsvarError::IndexOutOfBounds(format!("cumulated variable {} exceeds {n}", g + 1)));
        }
    }
    spec.partition()?;
    let ctx = Context { spec, config, vma_horizons: config.horizons.max(spec.max_horizon()) };
    let m = config.accepted_draws;
    let max_total = m.saturating_mul(20);

    let mut sampler = GibbsSampler::new(data, prior, config.seed)?;
    sampler.burn(config.burn_in)?;

    let mut accepted: Vec<DrawOutput> = Vec::with_capacity(m);
    let mut examined = 0usize;
    let mut empty = 0usize;
    let mut next_index = 0usize;
    while accepted.len() < m {
        if next_index >= max_total {
            return Err(HsvarError::AcceptanceTooLow { accepted: accepted.len(), total: examined });
        }
        let need = m - accepted.len();
        let batch = (need + need / 4 + 1).min(max_total - next_index);
        let mut draws = Vec::with_capacity(batch);
        for k in 0..batch {
            draws.push((next_index + k, sampler.next_kept(config.thinning)?));
        }
        next_index += batch;
        let results: Vec<Result<Option<DrawOutput>>> = draws.par_iter().map(|(i, rf)| ctx.process(rf, *i)).collect();
        for r in results {
            if accepted.len() == m {
                break;
            }
            examined += 1;
            match r? {
                Some(d) => accepted.push(d),
                None => empty += 1,
            }
        }
    }

    let hs = config.horizons + 1;
    let mut cells = Vec::with_capacity(n * n * hs);
    for g in 0..n {
        for j in 0..n {
            for h in 0..hs {
                let i = (g * n + j) * hs + h;
                let col = |f: fn(&DrawOutput) -> &Vec<f64>| accepted.iter().map(|d| f(d)[i]).collect::<Vec<f64>>();
                cells.push(CellResult::summarize(
                    g,
                    j,
                    h,
                    col(|d| &d.lower),
                    col(|d| &d.upper),
                    col(|d| &d.plugin),
                    config.alpha,
                    config.eta_grid,
                ));
            }
        }
    }
    Ok(BoundsResult {
        n,
        horizons: config.horizons,
        alpha: config.alpha,
        accepted: m,
        total_draws: examined,
        empty_draws: empty,
        emptiness_rate: empty as f64 / examined as f64,
        unstable_draws: accepted.iter().filter(|d| !d.stable).count(),
        cumulated: config.cumulate.clone(),
        cells,
    })
}
