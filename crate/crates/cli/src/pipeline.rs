//! Stage orchestration: estimation, eigen solve, test cascade, identification
//! status and the posterior bounds run.

use std::path::Path;

use hsvar_core::bounds::{run_robust_bayes, BoundsResult, CellResult};
use hsvar_core::gibbs::{default_diffuse_prior, run_gibbs, GibbsConfig, PriorSpec};
use hsvar_core::het_test::{estimate_kurtosis, test_suite, HetTestResult};
use hsvar_core::ident::{pool_eigenvalues, solve_eigen, EigenIdentification};
use hsvar_core::reduced_form::{
    gls_estimate, log_likelihood, ml_estimate, ols_estimate, vma_coefficients, Dataset, ReducedForm,
};
use hsvar_core::restrictions::{classify, compile, order_variables, IdStatus, RestrictionSpec};
use hsvar_core::HsvarError;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{sha256_hex, Estimator, RunConfig};
use crate::error::{CliError, CliResult, StageExt};
use crate::ingest::{read_table_file, to_dataset};
use crate::spec_file::{load_restrictions, render};

/// Conventional level for reading the test cascade.
pub const TEST_LEVEL: f64 = 0.05;

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub hsvar_cli: String,
    pub hsvar_core: String,
    pub config_hash: String,
    pub data_sha256: String,
    /// Effective configuration; loading it as a config file reruns the job.
    pub config: String,
    pub restrictions: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub variables: Vec<String>,
    pub lags: usize,
    pub periods: usize,
    pub break_index: usize,
}

/// Inputs shared by every stage.
pub struct Job {
    pub cfg: RunConfig,
    pub data: Dataset,
    pub spec: RestrictionSpec,
    pub provenance: Provenance,
}

impl Job {
    pub fn load(cfg: RunConfig) -> CliResult<Job> {
        let bytes = std::fs::read(&cfg.data).map_err(|e| CliError::io(&cfg.data, e))?;
        let table = read_table_file(&cfg.data)?;
        let data = to_dataset(&table, cfg.lags, &cfg.break_at)?;
        let n = data.n();
        let mut spec = match &cfg.restrictions {
            Some(src) => load_restrictions(src, n)?,
            None => RestrictionSpec::empty(n),
        };
        if let Some(decl) = &cfg.partition {
            if spec.pools.is_empty() {
                spec.pools = decl.pools.clone();
            } else if spec.pools != decl.pools {
                return Err(CliError::Config(
                    "partition in the config differs from the pools in the restriction file".into(),
                ));
            }
        }
        spec.partition().stage("partition")?;
        let provenance = Provenance {
            seed: cfg.algo.seed,
            hsvar_cli: env!("CARGO_PKG_VERSION").to_string(),
            hsvar_core: hsvar_core::VERSION.to_string(),
            config_hash: cfg.hash(),
            data_sha256: sha256_hex(&bytes),
            config: cfg.canonical(),
            restrictions: render(&spec),
        };
        Ok(Job { cfg, data, spec, provenance })
    }

    pub fn summary(&self) -> DataSummary {
        DataSummary {
            variables: self.data.names.clone(),
            lags: self.data.lags,
            periods: self.data.t(),
            break_index: self.data.break_index,
        }
    }

    pub fn prior(&self) -> PriorSpec {
        let n = self.data.n();
        let m = n * self.data.lags + 1;
        let mut prior = default_diffuse_prior(n, m);
        if let Some(v) = self.cfg.prior.variance {
            prior.v_phi = DMatrix::identity(n * m, n * m) * v;
        }
        if let Some(d) = self.cfg.prior.dof {
            let s = DMatrix::identity(n, n) * (d - n as f64 - 1.0);
            prior.s1 = s.clone();
            prior.s2 = s;
            prior.d1 = d;
            prior.d2 = d;
        }
        prior
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutput {
    pub estimator: &'static str,
    pub b: Vec<Vec<f64>>,
    pub omega1: Vec<Vec<f64>>,
    pub omega2: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub spectral_radius: f64,
    pub iterations: Option<usize>,
    #[serde(skip)]
    pub rf: Option<ReducedForm>,
}

/// Point estimate of the reduced form; Gibbs gives the posterior mean.
pub fn estimate(job: &Job) -> CliResult<EstimateOutput> {
    let data = &job.data;
    let mut iterations = None;
    let rf = match job.cfg.estimator {
        Estimator::Ols => ols_estimate(data).stage("estimate")?,
        Estimator::Gls => gls_estimate(data).stage("estimate")?,
        Estimator::Ml => {
            let init = ols_estimate(data).stage("estimate")?;
            let ml = ml_estimate(data, &init).stage("estimate")?;
            iterations = Some(ml.iterations);
            ml.rf
        }
        Estimator::Gibbs => {
            let a = &job.cfg.algo;
            let cfg = GibbsConfig { burn_in: a.burn_in, draws: a.accepted_draws, thinning: a.thinning, seed: a.seed };
            let post = run_gibbs(data, &job.prior(), &cfg).stage("estimate")?;
            let k = post.draws.len() as f64;
            let mut mean = post.draws[0].clone();
            mean.b.fill(0.0);
            mean.omega1.fill(0.0);
            mean.omega2.fill(0.0);
            for d in &post.draws {
                mean.b += &d.b / k;
                mean.omega1 += &d.omega1 / k;
                mean.omega2 += &d.omega2 / k;
            }
            mean
        }
    };
    Ok(EstimateOutput {
        estimator: job.cfg.estimator.name(),
        b: rows(&rf.b),
        omega1: rows(&rf.omega1),
        omega2: rows(&rf.omega2),
        log_likelihood: log_likelihood(data, &rf).stage("estimate")?,
        spectral_radius: rf.spectral_radius(),
        iterations,
        rf: Some(rf),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HetRow {
    /// e.g. `lambda1=lambda2=lambda3`.
    pub hypothesis: String,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl HetRow {
    fn from(t: &HetTestResult) -> Self {
        let h: Vec<String> = (t.s + 1..=t.s + t.r).map(|k| format!("lambda{k}")).collect();
        HetRow { hypothesis: h.join("="), statistic: t.statistic, dof: t.dof, p_value: t.p_value }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HetOutput {
    pub eigenvalues: Vec<f64>,
    pub kappa: (f64, f64),
    pub tests: Vec<HetRow>,
    /// True when every adjacent-pair test rejects at the conventional level.
    pub supports_distinct: bool,
}

pub fn het_tests(job: &Job, rf: &ReducedForm, sol: &EigenIdentification) -> CliResult<HetOutput> {
    let tests = test_suite(sol, &job.data, rf).stage("test-het")?;
    let u = rf.residuals(&job.data);
    let tb = job.data.break_index;
    let t = job.data.t();
    let kappa =
        estimate_kurtosis(&u.columns(0, tb).into_owned(), &u.columns(tb, t - tb).into_owned()).stage("test-het")?;
    let pairs: Vec<&HetTestResult> = tests.iter().filter(|x| x.r == 2).collect();
    Ok(HetOutput {
        eigenvalues: vec_of(&sol.lambda),
        kappa,
        supports_distinct: !pairs.is_empty() && pairs.iter().all(|x| x.p_value < TEST_LEVEL),
        tests: tests.iter().map(HetRow::from).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentifyOutput {
    pub eigenvalues: Vec<f64>,
    pub pooled_eigenvalues: Vec<f64>,
    /// Impact matrix at the point estimate, shocks in eigenvalue order.
    pub impact: Vec<Vec<f64>>,
    pub a0: Vec<Vec<f64>>,
    pub status: IdStatus,
}

pub fn identify(job: &Job, rf: &ReducedForm) -> CliResult<(EigenIdentification, IdentifyOutput)> {
    let norm = job.cfg.algo.normalization;
    let sol = solve_eigen(rf, &norm).stage("identify")?;
    let partition = job.spec.partition().stage("identify")?;
    let pooled = pool_eigenvalues(&sol, &partition).stage("identify")?;
    let vma = vma_coefficients(rf, job.spec.max_horizon());
    let program = compile(&job.spec, rf, &vma, norm.sign_rule).stage("identify")?;
    let ordered = order_variables(&program, &partition, job.spec.shock_of_interest);
    let status = classify(&ordered, &pooled);
    let out = IdentifyOutput {
        eigenvalues: vec_of(&sol.lambda),
        pooled_eigenvalues: vec_of(&pooled.lambda),
        impact: rows(&sol.c),
        a0: rows(&sol.a0()),
        status,
    };
    Ok((sol, out))
}

#[derive(Debug, Clone, Serialize)]
pub struct BandRow {
    pub horizon: usize,
    pub mean: f64,
    pub hpd_lo: f64,
    pub hpd_hi: f64,
    pub pmb_lo: Option<f64>,
    pub pmb_hi: Option<f64>,
    pub rcr_lo: Option<f64>,
    pub rcr_hi: Option<f64>,
    pub informativeness: Option<f64>,
    /// Resolution of the robust-region search.
    pub rcr_grid_step: Option<f64>,
}

impl BandRow {
    fn from(cell: &CellResult, with_bounds: bool) -> Self {
        let b = |v: f64| with_bounds.then_some(v);
        BandRow {
            horizon: cell.horizon,
            mean: cell.plugin_mean,
            hpd_lo: cell.hpd.0,
            hpd_hi: cell.hpd.1,
            pmb_lo: b(cell.posterior_mean_bounds.0),
            pmb_hi: b(cell.posterior_mean_bounds.1),
            rcr_lo: b(cell.robust.lo()),
            rcr_hi: b(cell.robust.hi()),
            informativeness: b(cell.informativeness),
            rcr_grid_step: b(cell.robust.grid_step),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResponseBands {
    /// 1-based.
    pub variable: usize,
    /// 1-based.
    pub shock: usize,
    pub variable_name: String,
    pub cumulated: bool,
    pub rows: Vec<BandRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Distinct eigenvalues, no further restrictions: HPD bands only.
    PointIdentified,
    RobustBounds,
}

#[derive(Debug, Clone, Serialize)]
pub struct DrawSummary {
    pub accepted: usize,
    pub total: usize,
    pub empty: usize,
    pub emptiness_rate: f64,
    pub unstable: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub provenance: Provenance,
    pub data: DataSummary,
    pub estimate: EstimateOutput,
    pub het: HetOutput,
    pub identification: IdentifyOutput,
    pub branch: Branch,
    pub alpha: f64,
    pub draws: DrawSummary,
    pub warnings: Vec<String>,
    pub responses: Vec<ResponseBands>,
}

/// Rows violating `rcr_lo <= pmb_lo <= pmb_hi <= rcr_hi`; the middle
/// inequality must always hold.
fn band_checks(bands: &[ResponseBands], warnings: &mut Vec<String>) -> CliResult<()> {
    let mut soft = 0;
    for b in bands {
        for r in &b.rows {
            if let (Some(pl), Some(ph), Some(rl), Some(rh)) = (r.pmb_lo, r.pmb_hi, r.rcr_lo, r.rcr_hi) {
                if pl > ph {
                    return Err(CliError::Stage {
                        stage: "bounds",
                        source: HsvarError::InvalidConfig(format!(
                            "posterior-mean bounds inverted for variable {} shock {} horizon {}",
                            b.variable, b.shock, r.horizon
                        )),
                    });
                }
                let slack = r.rcr_grid_step.unwrap_or(0.0);
                if rl > pl + slack || ph > rh + slack {
                    soft += 1;
                }
            }
        }
    }
    if soft > 0 {
        warnings.push(format!(
            "{soft} band rows have posterior-mean bounds outside the robust credible region; increase draws"
        ));
    }
    Ok(())
}

fn bands(result: &BoundsResult, names: &[String], with_bounds: bool) -> Vec<ResponseBands> {
    let n = result.n;
    let mut out = Vec::new();
    for g in 0..n {
        for j in 0..n {
            out.push(ResponseBands {
                variable: g + 1,
                shock: j + 1,
                variable_name: names[g].clone(),
                cumulated: result.cumulated.contains(&g),
                rows: (0..=result.horizons).map(|h| BandRow::from(result.cell(g, j, h), with_bounds)).collect(),
            });
        }
    }
    out
}

/// Full pipeline. `force_bounds` skips the distinct-eigenvalue branch.
pub fn run(job: &Job, force_bounds: bool) -> CliResult<Report> {
    let decl = job.cfg.require_partition()?;
    let est = estimate(job)?;
    let rf = est.rf.clone().expect("estimate carries the reduced form");
    let (sol, identification) = identify(job, &rf)?;
    let het = het_tests(job, &rf, &sol)?;
    let mut warnings = Vec::new();
    let unrestricted = job.spec.zeros.is_empty() && job.spec.signs.is_empty();
    let branch = if decl.is_distinct() && unrestricted && !force_bounds {
        Branch::PointIdentified
    } else {
        Branch::RobustBounds
    };
    if decl.is_distinct() && !het.supports_distinct {
        warnings
            .push(format!("declared distinct eigenvalues but some adjacent-pair test does not reject at {TEST_LEVEL}"));
    }
    let result = run_robust_bayes(&job.data, &job.prior(), &job.spec, &job.cfg.algo).stage("bounds")?;
    if result.unstable_draws > 0 {
        warnings.push(format!("{} accepted draws have an unstable companion matrix", result.unstable_draws));
    }
    let responses = bands(&result, &job.data.names, branch == Branch::RobustBounds);
    band_checks(&responses, &mut warnings)?;
    Ok(Report {
        provenance: job.provenance.clone(),
        data: job.summary(),
        estimate: est,
        het,
        identification,
        branch,
        alpha: result.alpha,
        draws: DrawSummary {
            accepted: result.accepted,
            total: result.total_draws,
            empty: result.empty_draws,
            emptiness_rate: result.emptiness_rate,
            unstable: result.unstable_draws,
        },
        warnings,
        responses,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(format!("serialize: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `report.json` and one CSV per response; returns the CSV paths.
pub fn write_report(report: &Report, out: &Path) -> CliResult<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_json(&out.join("report.json"), report)?;
    let mut files = Vec::new();
    for b in &report.responses {
        let (name, header) = match report.branch {
            Branch::RobustBounds => (
                format!("band_v{}_s{}.csv", b.variable, b.shock),
                "horizon,mean,hpd_lo,hpd_hi,pmb_lo,pmb_hi,rcr_lo,rcr_hi",
            ),
            Branch::PointIdentified => (format!("irf_v{}_s{}.csv", b.variable, b.shock), "horizon,mean,hpd_lo,hpd_hi"),
        };
        let mut text = String::from(header);
        text.push('\n');
        for r in &b.rows {
            let mut cols = vec![r.horizon.to_string(), fmt(r.mean), fmt(r.hpd_lo), fmt(r.hpd_hi)];
            if report.branch == Branch::RobustBounds {
                for v in [r.pmb_lo, r.pmb_hi, r.rcr_lo, r.rcr_hi] {
                    cols.push(fmt(v.unwrap_or(f64::NAN)));
                }
            }
            text += &cols.join(",");
            text.push('\n');
        }
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        files.push(path);
    }
    Ok(files)
}

/// Plain-text rendering of the eigenvalue table and the test cascade.
pub fn render_tables(het: &HetOutput) -> String {
    let mut s = String::from("Estimated eigenvalues\n");
    for (k, l) in het.eigenvalues.iter().enumerate() {
        s += &format!("  lambda{:<3} {:>10.4}\n", k + 1, l);
    }
    s += &format!(
        "Tests for identification through heteroskedasticity (kappa1 = {:.4}, kappa2 = {:.4})\n",
        het.kappa.0, het.kappa.1
    );
    s += &format!("  {:<28} {:>12} {:>5} {:>9}\n", "H0", "statistic", "dof", "p-value");
    for t in &het.tests {
        s += &format!("  {:<28} {:>12.4} {:>5} {:>9.4}\n", t.hypothesis, t.statistic, t.dof, t.p_value);
    }
    s
}
