//! Zero and sign restrictions compiled into row systems acting on the
//! columns of `Q`, shock ordering, and identification status.
//!
//! Shocks are indexed in the user's order. `RestrictionSpec::shock_order`
//! maps each shock to its position in the descending eigenvalue order; by
//! default shock `j` sits at position `j`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HsvarError, Result};
use crate::ident::{constrained_basis, EigenIdentification, Partition, SignRule};
use crate::linalg::{cholesky_lower, lower_inverse};
use crate::reduced_form::{long_run_multiplier, ReducedForm, VmaCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZeroTarget {
    /// Impact matrix `A_0^{-1}`; restricts shock `j`.
    A0Inv,
    /// `A_0`; restricts shock `i`.
    A0,
    /// Lag coefficient `A_l = A_0 B_l`; restricts shock `i`.
    ALag(usize),
    /// Long-run cumulative response; restricts shock `j`.
    CirInf,
    /// Response at horizon `h`; restricts shock `j`.
    Ir(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZeroRestriction {
    pub target: ZeroTarget,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignTarget {
    /// Response of variable `i` to shock `j` at horizon `h`.
    Ir(usize),
    /// Entry `(i, j)` of `A_0`; restricts shock `i`.
    A0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignRestriction {
    pub target: SignTarget,
    pub i: usize,
    pub j: usize,
    pub positive: bool,
}

/// Sign of the impact response of variable `i` to shock `j`, used in place of
/// the default sign rule for shock `j`. Never counted as a restriction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignNormalization {
    pub i: usize,
    pub j: usize,
    pub positive: bool,
}

/// User-facing restriction set. All indices are 0-based.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RestrictionSpec {
    pub n: usize,
    pub zeros: Vec<ZeroRestriction>,
    pub signs: Vec<SignRestriction>,
    pub normalizations: Vec<SignNormalization>,
    pub shock_of_interest: Option<usize>,
    /// Pooled eigenvalue positions, inclusive ranges.
    pub pools: Vec<(usize, usize)>,
    /// `shock_order[j]` is the eigenvalue position of shock `j`.
    pub shock_order: Option<Vec<usize>>,
}

impl RestrictionSpec {
    pub fn empty(n: usize) -> Self {
        RestrictionSpec { n, ..Default::default() }
    }

    pub fn partition(&self) -> Result<Partition> {
        Partition::from_pools(self.n, &self.pools)
    }

    pub fn positions(&self) -> Result<Vec<usize>> {
        match &self.shock_order {
            None => Ok((0..self.n).collect()),
            Some(p) => {
                let mut seen = vec![false; self.n];
                if p.len() != self.n {
                    return Err(HsvarError::IndexOutOfBounds(format!(
                        "shock order has {} entries, expected {}",
                        p.len(),
                        self.n
                    )));
                }
                for &k in p {
                    if k >= self.n || seen[k] {
                        return Err(HsvarError::IndexOutOfBounds("shock order is not a permutation".into()));
                    }
                    seen[k] = true;
                }
                Ok(p.clone())
            }
        }
    }

    /// Largest horizon referenced by any restriction.
    pub fn max_horizon(&self) -> usize {
        let z = self.zeros.iter().filter_map(|r| match r.target {
            ZeroTarget::Ir(h) => Some(h),
            _ => None,
        });
        let s = self.signs.iter().filter_map(|r| match r.target {
            SignTarget::Ir(h) => Some(h),
            _ => None,
        });
        z.chain(s).max().unwrap_or(0)
    }
}

/// Compiled rows, one group per shock (user order).
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionProgram {
    pub n: usize,
    /// `F_j`, `f_j x n`.
    pub zeros: Vec<DMatrix<f64>>,
    /// `S_j`, `s_j x n`, oriented so admissibility is `S_j q_j >= 0`.
    pub signs: Vec<DMatrix<f64>>,
    /// Normalization row: `norm_rows[j]' q_j >= 0`.
    pub norm_rows: Vec<DVector<f64>>,
    /// Eigenvalue position of each shock.
    pub position: Vec<usize>,
    pub shock_of_interest: Option<usize>,
}

impl RestrictionProgram {
    pub fn f(&self, j: usize) -> usize {
        self.zeros[j].nrows()
    }

    pub fn s(&self, j: usize) -> usize {
        self.signs[j].nrows()
    }

    pub fn shock_at(&self, position: usize) -> usize {
        self.position.iter().position(|&p| p == position).expect("valid position")
    }

    /// Shocks (user order) whose positions fall in each block.
    pub fn block_shocks(&self, partition: &Partition) -> Vec<Vec<usize>> {
        partition.blocks().iter().map(|r| r.clone().map(|p| self.shock_at(p)).collect()).collect()
    }
}

fn check_index(what: &str, i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(HsvarError::IndexOutOfBounds(format!("{what} index {} exceeds {n}", i + 1)));
    }
    Ok(())
}

fn stack(rows: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), n);
    for (k, r) in rows.iter().enumerate() {
        m.row_mut(k).copy_from(&r.transpose());
    }
    m
}

/// Turns a spec into restriction rows for the given reduced form.
pub fn compile(
    spec: &RestrictionSpec,
    rf: &ReducedForm,
    vma: &VmaCoefficients,
    sign_rule: SignRule,
) -> Result<RestrictionProgram> {
    let n = rf.n();
    if spec.n != n {
        return Err(HsvarError::DimensionMismatch(format!(
            "restrictions written for {} variables, model has {n}",
            spec.n
        )));
    }
    let position = spec.positions()?;
    let l = cholesky_lower(&rf.omega1)?;
    let l_inv = lower_inverse(&l);
    let mut zeros: Vec<Vec<DVector<f64>>> = vec![Vec::new(); n];
    let mut signs: Vec<Vec<DVector<f64>>> = vec![Vec::new(); n];
    let mut cir: Option<DMatrix<f64>> = None;

    let horizon = |h: usize| -> Result<&DMatrix<f64>> {
        vma.c.get(h).ok_or(HsvarError::HorizonExceeded { horizon: h, max: vma.horizons() })
    };

    for z in &spec.zeros {
        check_index("row", z.i, n)?;
        check_index("column", z.j, n)?;
        let (shock, row): (usize, DVector<f64>) = match z.target {
            ZeroTarget::A0Inv => (z.j, l.row(z.i).transpose()),
            ZeroTarget::A0 => (z.i, l_inv.column(z.j).into_owned()),
            ZeroTarget::ALag(lag) => {
                if lag == 0 || lag > rf.lags() {
                    return Err(HsvarError::IndexOutOfBounds(format!("lag {lag} outside 1..{}", rf.lags())));
                }
                (z.i, &l_inv * rf.lag_matrix(lag).column(z.j))
            }
            ZeroTarget::CirInf => {
                if cir.is_none() {
                    cir = Some(long_run_multiplier(rf)? * &l);
                }
                (z.j, cir.as_ref().unwrap().row(z.i).transpose())
            }
            ZeroTarget::Ir(h) => (z.j, (horizon(h)? * &l).row(z.i).transpose()),
        };
        zeros[shock].push(row);
    }

    for s in &spec.signs {
        check_index("row", s.i, n)?;
        check_index("column", s.j, n)?;
        let d = if s.positive { 1.0 } else { -1.0 };
        let (shock, row): (usize, DVector<f64>) = match s.target {
            SignTarget::Ir(h) => (s.j, (horizon(h)? * &l).row(s.i).transpose() * d),
            SignTarget::A0 => (s.i, l_inv.column(s.j) * d),
        };
        signs[shock].push(row);
    }

    let mut norm_rows: Vec<DVector<f64>> = (0..n)
        .map(|j| match sign_rule {
            SignRule::DiagA0Nonneg => l_inv.column(j).into_owned(),
            SignRule::DiagCNonneg => l.row(j).transpose(),
        })
        .collect();
    for nm in &spec.normalizations {
        check_index("row", nm.i, n)?;
        check_index("column", nm.j, n)?;
        let d = if nm.positive { 1.0 } else { -1.0 };
        norm_rows[nm.j] = l.row(nm.i).transpose() * d;
    }
    if let Some(j) = spec.shock_of_interest {
        check_index("shock", j, n)?;
    }

    Ok(RestrictionProgram {
        n,
        zeros: zeros.iter().map(|r| stack(r, n)).collect(),
        signs: signs.iter().map(|r| stack(r, n)).collect(),
        norm_rows,
        position,
        shock_of_interest: spec.shock_of_interest,
    })
}

/// Program plus the construction order of shocks within each block.
#[derive(Debug, Clone)]
pub struct OrderedProgram {
    pub program: RestrictionProgram,
    /// `order[k]` lists the shocks of block `k` in construction order.
    pub order: Vec<Vec<usize>>,
    pub shock_of_interest: Option<usize>,
}

impl OrderedProgram {
    /// Block index and 1-based rank of `shock` in its block's order.
    pub fn locate(&self, shock: usize) -> (usize, usize) {
        for (k, o) in self.order.iter().enumerate() {
            if let Some(p) = o.iter().position(|&s| s == shock) {
                return (k, p + 1);
            }
        }
        panic!("shock {shock} not in any block");
    }

    /// Zero counts in construction order for block `k`.
    pub fn counts(&self, k: usize) -> Vec<usize> {
        self.order[k].iter().map(|&s| self.program.f(s)).collect()
    }
}

/// Sorts shocks within each block by zero count, descending; among ties the
/// shock of interest comes first, then the lower eigenvalue position.
pub fn order_variables(program: &RestrictionProgram, partition: &Partition, j_star: Option<usize>) -> OrderedProgram {
    let mut order = program.block_shocks(partition);
    for block in order.iter_mut() {
        block.sort_by(|&a, &b| {
            program
                .f(b)
                .cmp(&program.f(a))
                .then_with(|| (Some(b) == j_star).cmp(&(Some(a) == j_star)))
                .then_with(|| program.position[a].cmp(&program.position[b]))
        });
    }
    OrderedProgram { program: program.clone(), order, shock_of_interest: j_star }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdKind {
    PointIdentified,
    SetIdentified,
    OverRestricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convexity {
    Cond1,
    Cond2,
    /// Columns `1..=k` of the block are exactly identified.
    Cond3 {
        k: usize,
    },
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCounts {
    pub size: usize,
    pub shocks: Vec<usize>,
    pub f: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdStatus {
    pub kind: IdKind,
    pub blocks: Vec<BlockCounts>,
    pub convexity: Convexity,
    /// Strict sign slack found for the shock of interest; `None` when it
    /// carries no sign restrictions.
    pub sign_feasible: Option<bool>,
    /// Zero restrictions that failed the rank audit.
    pub redundant: bool,
}

/// Counting-rule status for the counts of a single block (construction order).
pub fn block_kind(m: usize, f: &[usize]) -> IdKind {
    let mut strict = false;
    for (idx, &fj) in f.iter().enumerate() {
        let bound = m - (idx + 1);
        if fj > bound {
            return IdKind::OverRestricted;
        }
        if fj < bound {
            strict = true;
        }
    }
    if strict {
        IdKind::SetIdentified
    } else {
        IdKind::PointIdentified
    }
}

/// Convexity condition for the shock at 1-based rank `j_star` of a block.
pub fn convexity_condition(m: usize, f: &[usize], j_star: usize) -> Convexity {
    let strict = |j: usize| f[j - 1] < m - j;
    let exact = |j: usize| f[j - 1] == m - j;
    if j_star == 1 {
        return if strict(1) { Convexity::Cond1 } else { Convexity::None };
    }
    if (1..j_star).all(strict) {
        return Convexity::Cond2;
    }
    for k in 1..j_star {
        if (1..=k).all(exact) && ((k + 1)..=j_star).all(strict) {
            return Convexity::Cond3 { k };
        }
    }
    Convexity::None
}

/// Builds the exactly identified leading columns `1..=k` of block `b`.
pub(crate) fn exact_prefix(
    sol: &EigenIdentification,
    ordered: &OrderedProgram,
    b: usize,
    k: usize,
) -> Option<Vec<DVector<f64>>> {
    let n = sol.n();
    let space = sol.block_basis(b);
    let mut built: Vec<DVector<f64>> = Vec::new();
    for &shock in ordered.order[b].iter().take(k) {
        let f = &ordered.program.zeros[shock];
        let mut rows = DMatrix::zeros(f.nrows() + built.len(), n);
        rows.rows_mut(0, f.nrows()).copy_from(f);
        for (i, q) in built.iter().enumerate() {
            rows.row_mut(f.nrows() + i).copy_from(&q.transpose());
        }
        let (basis, rank) = constrained_basis(&space, &rows);
        if rank < rows.nrows() || basis.ncols() != 1 {
            return None;
        }
        let mut q = basis.column(0).into_owned();
        if ordered.program.norm_rows[shock].dot(&q) < 0.0 {
            q.neg_mut();
        }
        built.push(q);
    }
    Some(built)
}

/// Searches for a unit vector in the span of `basis` (orthonormal columns)
/// maximizing the smallest slack `rows q` (rows normalized). Returns the best
/// slack found.
pub fn max_min_slack(basis: &DMatrix<f64>, rows: &DMatrix<f64>, starts: usize, seed: u64) -> f64 {
    let d = basis.ncols();
    if d == 0 {
        return f64::NEG_INFINITY;
    }
    let mut a = rows * basis;
    for mut r in a.row_iter_mut() {
        let nr = r.norm();
        if nr > 0.0 {
            r /= nr;
        }
    }
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..starts {
        let mut x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        x /= x.norm();
        for it in 0..300 {
            let slack = &a * &x;
            let (kmin, vmin) =
                slack.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
            best = best.max(vmin);
            let g = a.row(kmin).transpose();
            let tangent = &g - &x * g.dot(&x);
            let step = 0.5 / (1.0 + it as f64).sqrt();
            x += tangent * step;
            let nx = x.norm();
            if nx == 0.0 {
                break;
            }
            x /= nx;
        }
    }
    best
}

pub const SIGN_FEASIBILITY_STARTS: usize = 200;

/// Identification status of an ordered program for the current draw.
pub fn classify(ordered: &OrderedProgram, sol: &EigenIdentification) -> IdStatus {
    let prog = &ordered.program;
    let partition = &sol.partition;
    let mut blocks = Vec::new();
    let mut any_over = false;
    let mut all_point = true;
    let mut redundant = false;
    for (k, r) in partition.blocks().iter().enumerate() {
        let f = ordered.counts(k);
        match block_kind(r.len(), &f) {
            IdKind::OverRestricted => any_over = true,
            IdKind::SetIdentified => all_point = false,
            IdKind::PointIdentified => {
                if exact_prefix(sol, ordered, k, r.len()).is_none() {
                    redundant = true;
                    all_point = false;
                }
            }
        }
        // rank audit of each shock's own rows within its eigenspace
        let space = sol.block_basis(k);
        for &s in &ordered.order[k] {
            if prog.f(s) > 0 {
                let (_, rank) = constrained_basis(&space, &prog.zeros[s]);
                if rank < prog.f(s) {
                    redundant = true;
                }
            }
        }
        blocks.push(BlockCounts { size: r.len(), shocks: ordered.order[k].clone(), f });
    }
    let kind = if any_over {
        IdKind::OverRestricted
    } else if all_point {
        IdKind::PointIdentified
    } else {
        IdKind::SetIdentified
    };

    let mut convexity = Convexity::None;
    let mut sign_feasible = None;
    if let (Some(js), IdKind::SetIdentified) = (ordered.shock_of_interest, kind) {
        let (b, rank) = ordered.locate(js);
        let m = partition.sizes()[b];
        if m > 1 {
            convexity = convexity_condition(m, &blocks[b].f, rank);
        }
        if prog.s(js) > 0 {
            let prefix_len = match convexity {
                Convexity::Cond3 { k } => k,
                _ => 0,
            };
            let prefix = exact_prefix(sol, ordered, b, prefix_len).unwrap_or_default();
            let n = sol.n();
            let f = &prog.zeros[js];
            let mut rows = DMatrix::zeros(f.nrows() + prefix.len(), n);
            rows.rows_mut(0, f.nrows()).copy_from(f);
            for (i, q) in prefix.iter().enumerate() {
                rows.row_mut(f.nrows() + i).copy_from(&q.transpose());
            }
            let (basis, _) = constrained_basis(&sol.block_basis(b), &rows);
            let s = &prog.signs[js];
            let mut slack_rows = DMatrix::zeros(s.nrows() + 1, n);
            slack_rows.rows_mut(0, s.nrows()).copy_from(s);
            slack_rows.row_mut(s.nrows()).copy_from(&prog.norm_rows[js].transpose());
            let best = max_min_slack(&basis, &slack_rows, SIGN_FEASIBILITY_STARTS, 0x5eed);
            sign_feasible = Some(best > 1e-10);
        }
    }
    IdStatus { kind, blocks, convexity, sign_feasible, redundant }
}
