//! The ablation matrix: good_practices plus each single-practice change,
//! trained and evaluated over several seeds.

use std::fmt::Write as _;
use std::path::PathBuf;

use reid_core::eval::EvalReport;

use crate::config::{AblationLabel, RunConfig};
use crate::error::CliError;
use crate::evaluate::evaluate_model;
use crate::train::{train, TrainOptions};

/// Outcome of one (row, seed) job.
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub label: AblationLabel,
    pub seed: u64,
    pub result: Result<EvalReport, String>,
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: AblationLabel,
    pub runs: Vec<AblationRun>,
}

impl AblationRow {
    fn scores(&self, f: impl Fn(&EvalReport) -> f64) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.result.as_ref().ok()).map(f).collect()
    }

    pub fn median_map(&self) -> Option<f64> {
        median(self.scores(|r| r.map_score))
    }

    pub fn median_rank1(&self) -> Option<f64> {
        median(self.scores(|r| r.rank1().unwrap_or(f64::NAN)))
    }

    pub fn failures(&self) -> impl Iterator<Item = &AblationRun> {
        self.runs.iter().filter(|r| r.result.is_err())
    }
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub table_path: PathBuf,
}

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// good_practices first, then the configured ablations in declared order.
pub fn row_labels(cfg: &RunConfig) -> Vec<AblationLabel> {
    let mut labels = vec![AblationLabel::GoodPractices];
    labels.extend(cfg.ablate.configs.iter().filter(|&&l| l != AblationLabel::GoodPractices));
    labels
}

fn run_one(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let outcome = train(cfg, TrainOptions::default(), &mut std::io::sink())?;
    Ok(evaluate_model(cfg, &outcome.model, &outcome.manifest, &outcome.run_dir)?.report)
}

#[cfg(feature = "parallel")]
fn run_jobs(jobs: &[(AblationLabel, RunConfig)]) -> Vec<Result<EvalReport, String>> {
    use rayon::prelude::*;
    jobs.par_iter().map(|(_, c)| run_one(c).map_err(|e| e.to_string())).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_jobs(jobs: &[(AblationLabel, RunConfig)]) -> Vec<Result<EvalReport, String>> {
    jobs.iter().map(|(_, c)| run_one(c).map_err(|e| e.to_string())).collect()
}

/// Run every (row, seed) job in its own run directory. A failing job is
/// recorded in its row without stopping the others. The table is written
/// to `<output.dir>/ablation-<hash12>.tsv`.
pub fn ablate(cfg: &RunConfig) -> Result<AblationResult, CliError> {
    cfg.validate()?;
    let labels = row_labels(cfg);
    let seeds: Vec<u64> = (0..cfg.ablate.seeds as u64).map(|s| cfg.train.seed + s).collect();
    let jobs: Vec<(AblationLabel, RunConfig)> = labels
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, cfg.ablation(l, s))))
        .collect();
    let results = run_jobs(&jobs);
    let mut rows: Vec<AblationRow> = labels.iter().map(|&label| AblationRow { label, runs: vec![] }).collect();
    for ((label, c), result) in jobs.into_iter().zip(results) {
        let row = rows.iter_mut().find(|r| r.label == label).expect("row exists");
        row.runs.push(AblationRun {
            label,
            seed: c.train.seed,
            result,
        });
    }
    std::fs::create_dir_all(&cfg.output.dir).map_err(|e| CliError::io(&cfg.output.dir, e))?;
    let table_path = cfg.output.dir.join(format!("ablation-{}.tsv", cfg.hash12()));
    std::fs::write(&table_path, format_table(&rows)).map_err(|e| CliError::io(&table_path, e))?;
    Ok(AblationResult { rows, table_path })
}

/// Tab-separated table: one line per row with the medians and per-seed mAP.
pub fn format_table(rows: &[AblationRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut s = String::from("config\truns_ok\truns_failed\tmedian_rank1\tmedian_map\tmap_per_seed\n");
    for row in rows {
        let per_seed: Vec<String> = row
            .runs
            .iter()
            .map(|r| match &r.result {
                Ok(rep) => format!("s{}:{:.4}", r.seed, rep.map_score),
                Err(_) => format!("s{}:failed", r.seed),
            })
            .collect();
        let failed = row.failures().count();
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            row.label.as_str(),
            row.runs.len() - failed,
            failed,
            fmt(row.median_rank1()),
            fmt(row.median_map()),
            per_seed.join(",")
        )
        .unwrap();
        for f in row.failures() {
            writeln!(s, "# {} seed {} failed: {}", row.label.as_str(), f.seed, f.result.as_ref().unwrap_err()).unwrap();
        }
    }
    s
}
