//! `simulate` subcommand: a structural model in `key = value` form.
//!
//! Keys: `impact` (rows separated by `;`), `lambda`, `lag1`, `lag2`, ...,
//! optional `intercept`, `periods`, `break` (regime-1 periods), `seed`,
//! optional `names` and `out`. Matrices use spaces or commas within a row.

use std::path::{Path, PathBuf};

use hsvar_core::simulate::{simulate, SimulationTruth};
use nalgebra::{DMatrix, DVector};

use crate::config::{num, parse_pairs};
use crate::error::{CliError, CliResult, StageExt};
use crate::ingest::{write_table, CsvTable};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub truth: SimulationTruth,
    pub periods: usize,
    pub break_index: usize,
    pub seed: u64,
    pub names: Vec<String>,
    pub out: PathBuf,
}

fn numbers(key: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).map(|t| num(key, t)).collect()
}

fn matrix(key: &str, s: &str) -> CliResult<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s.split(';').map(|r| numbers(key, r)).collect::<CliResult<_>>()?;
    let c = rows.first().map(Vec::len).unwrap_or(0);
    if c == 0 || rows.iter().any(|r| r.len() != c) {
        return Err(CliError::Config(format!("{key}: rows must be non-empty and of equal length")));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

impl SimConfig {
    pub fn from_text(text: &str, base: &Path) -> CliResult<Self> {
        let map = parse_pairs(text)?;
        let need =
            |k: &str| map.get(k).map(String::as_str).ok_or_else(|| CliError::Config(format!("missing key {k:?}")));
        let c = matrix("impact", need("impact")?)?;
        let n = c.nrows();
        if c.ncols() != n {
            return Err(CliError::Config("impact must be square".into()));
        }
        let lambda = DVector::from_vec(numbers("lambda", need("lambda")?)?);
        if lambda.len() != n || lambda.iter().any(|&l| !(l > 0.0)) {
            return Err(CliError::Config(format!("lambda needs {n} positive entries")));
        }
        let mut lags = Vec::new();
        while let Some(v) = map.get(&format!("lag{}", lags.len() + 1)) {
            let m = matrix("lag", v)?;
            if m.shape() != (n, n) {
                return Err(CliError::Config(format!("lag{} must be {n}x{n}", lags.len() + 1)));
            }
            lags.push(m);
        }
        if lags.is_empty() {
            return Err(CliError::Config("at least lag1 is required".into()));
        }
        let allowed = |k: &str| {
            matches!(k, "impact" | "lambda" | "intercept" | "periods" | "break" | "seed" | "names" | "out")
                || k.strip_prefix("lag")
                    .and_then(|d| d.parse::<usize>().ok())
                    .is_some_and(|d| d >= 1 && d <= lags.len())
        };
        if let Some(k) = map.keys().find(|k| !allowed(k)) {
            return Err(CliError::Config(format!("unknown key {k:?}")));
        }
        let intercept = match map.get("intercept") {
            Some(v) => DVector::from_vec(numbers("intercept", v)?),
            None => DVector::zeros(n),
        };
        if intercept.len() != n {
            return Err(CliError::Config(format!("intercept needs {n} entries")));
        }
        let mut b = DMatrix::zeros(n, n * lags.len() + 1);
        b.set_column(0, &intercept);
        for (i, m) in lags.iter().enumerate() {
            b.view_mut((0, 1 + i * n), (n, n)).copy_from(m);
        }
        let names: Vec<String> = match map.get("names") {
            Some(v) => v.split(',').map(|s| s.trim().to_string()).collect(),
            None => (1..=n).map(|i| format!("y{i}")).collect(),
        };
        if names.len() != n {
            return Err(CliError::Config(format!("names needs {n} entries")));
        }
        let out = map.get("out").map(|o| base.join(o)).unwrap_or_else(|| base.join("out"));
        Ok(SimConfig {
            truth: SimulationTruth { b, c, lambda },
            periods: num("periods", need("periods")?)?,
            break_index: num("break", need("break")?)?,
            seed: map.get("seed").map(|s| num("seed", s)).transpose()?.unwrap_or(0),
            names,
            out,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        SimConfig::from_text(&text, path.parent().unwrap_or(Path::new("")))
    }
}

/// Simulates and writes `simulated.csv` plus a `simulated.cfg` run template.
pub fn run_simulation(cfg: &SimConfig, out: &Path) -> CliResult<(PathBuf, PathBuf)> {
    let data = simulate(&cfg.truth, cfg.periods, cfg.break_index, cfg.seed).stage("simulate")?;
    let l = data.lags;
    let mut values = DMatrix::zeros(data.n(), l + data.t());
    values.columns_mut(0, l).copy_from(&data.presample);
    values.columns_mut(l, data.t()).copy_from(&data.observations);
    let table = CsvTable { names: cfg.names.clone(), dates: None, values };
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let csv_path = out.join("simulated.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    write_table(&table, file)?;
    let cfg_path = out.join("simulated.cfg");
    let template = format!(
        "data = simulated.csv\nbreak = {}\nlags = {l}\npartition = distinct\nseed = {}\n",
        l + cfg.break_index - 1,
        cfg.seed
    );
    std::fs::write(&cfg_path, template).map_err(|e| CliError::io(&cfg_path, e))?;
    Ok((csv_path, cfg_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::ingest::ingest_csv;

    const SIM: &str =
        "impact = 1 0; 0.5 1\nlambda = 3, 0.5\nlag1 = 0.5 0; 0.1 0.3\nperiods = 300\nbreak = 120\nseed = 9\n";

    #[test]
    fn written_data_reingests_to_the_same_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig::from_text(SIM, dir.path()).unwrap();
        let (csv, run_cfg) = run_simulation(&cfg, dir.path()).unwrap();
        let direct = simulate(&cfg.truth, 300, 120, 9).unwrap();
        let rc = RunConfig::load(&run_cfg).unwrap();
        let back = ingest_csv(&csv, rc.lags, &rc.break_at).unwrap();
        assert_eq!(back.break_index, 120);
        assert_eq!(back.observations, direct.observations);
        assert_eq!(back.presample, direct.presample);
    }

    #[test]
    fn rejects_malformed_models() {
        let p = Path::new(".");
        assert!(SimConfig::from_text(&SIM.replace("lambda = 3, 0.5", "lambda = 3"), p).is_err());
        assert!(SimConfig::from_text(&SIM.replace("impact = 1 0; 0.5 1", "impact = 1 0; 0.5"), p).is_err());
        assert!(SimConfig::from_text(&SIM.replace("lag1", "lag2"), p).is_err());
        assert!(SimConfig::from_text(&format!("{SIM}extra = 1\n"), p).is_err());
    }

    #[test]
    fn explosive_model_is_numerical_failure() {
        let dir = tempfile::tempdir().unwrap();
        let cfg =
            SimConfig::from_text(&SIM.replace("lag1 = 0.5 0; 0.1 0.3", "lag1 = 1.2 0; 0 0.3"), dir.path()).unwrap();
        let e = run_simulation(&cfg, dir.path()).unwrap_err();
        assert!(matches!(e, CliError::Stage { stage: "simulate", .. }));
    }
}
