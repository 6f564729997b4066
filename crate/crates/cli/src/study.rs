//! The simulation study. Each (setting, replication) outcome is stored as
//! its own JSON file as soon as it is computed, so an interrupted study picks
//! up where it stopped when re-run with the same output directory.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use dmfpca::io::format_value;
use dmfpca::metrics::Metric;
use dmfpca::pipelines::FitConfig;
use dmfpca::simstudy::{assemble, run_replication, study_tasks, ReplicationOutcome, SimSetting, StudyConfig, StudyReport};
use rayon::prelude::*;

use crate::failure::{Failure, Outcome};
use crate::manifest::RunManifest;
use crate::StudyArgs;

const OUTPUTS: [&str; 6] = ["rows.csv", "summary.csv", "summary.json", "plot_re.csv", "plot_ise.csv", "plot_rmise.csv"];

fn replication_path(dir: &Path, setting: &SimSetting, rep: usize) -> PathBuf {
    dir.join("replications").join(format!("{}-{rep:05}.json", setting.label))
}

/// A stored outcome, if present and readable.
fn load(path: &Path) -> Option<ReplicationOutcome> {
    serde_json::from_slice(&fs::read(path).ok()?).ok()
}

/// Writes through a temporary file so a killed run never leaves a torn one.
fn store(path: &Path, outcome: &ReplicationOutcome) -> Outcome {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(outcome)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Everything but the replication count and worker count must match a
/// previous run in the same directory.
fn check_resumable(out: &Path, cfg: &StudyConfig) -> Outcome {
    let path = out.join("study_config.json");
    if let Ok(bytes) = fs::read(&path) {
        let old: StudyConfig = serde_json::from_slice(&bytes)?;
        let same = old.settings == cfg.settings && old.methods == cfg.methods && old.seed == cfg.seed && old.k == cfg.k;
        if !same {
            return Err(Failure::usage(format!(
                "{} holds a study with different settings, methods, seed or k; use a fresh directory",
                out.display()
            )));
        }
    }
    fs::write(&path, serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(())
}

fn write_rows(report: &StudyReport, out: &Path) -> Outcome {
    let mut w = csv::Writer::from_writer(File::create(out.join("rows.csv"))?);
    w.write_record(["setting", "method", "replication", "metric", "component", "value"])?;
    for r in &report.rows {
        w.write_record([
            r.setting.as_str().to_string(),
            r.method.as_str().to_string(),
            r.replication.to_string(),
            r.metric.name().to_string(),
            r.component.map_or(String::new(), |c| c.to_string()),
            format_value(r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(report: &StudyReport, truth_pve: &[f64], out: &Path) -> Outcome {
    let mut w = csv::Writer::from_writer(File::create(out.join("summary.csv"))?);
    w.write_record(["setting", "method", "metric", "component", "n", "mean", "median", "q1", "q3"])?;
    for s in &report.summary {
        w.write_record([
            s.setting.as_str().to_string(),
            s.method.as_str().to_string(),
            s.metric.name().to_string(),
            s.component.map_or(String::new(), |c| c.to_string()),
            s.n.to_string(),
            format_value(s.mean),
            format_value(s.median),
            format_value(s.q1),
            format_value(s.q3),
        ])?;
    }
    w.flush()?;
    let json = serde_json::json!({
        "summary": report.summary,
        "failures": report.failures,
        "failure_rate": report.failure_rate,
        "truth_pve_mean": if truth_pve.is_empty() { None } else { Some(truth_pve.iter().sum::<f64>() / truth_pve.len() as f64) },
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    Ok(())
}

/// One long file per metric, one row per box-plot observation.
fn write_plots(report: &StudyReport, out: &Path) -> Outcome {
    for (metric, name) in [(Metric::Re, "plot_re.csv"), (Metric::Ise, "plot_ise.csv"), (Metric::Rmise, "plot_rmise.csv")] {
        let mut w = csv::Writer::from_writer(File::create(out.join(name))?);
        w.write_record(["setting", "method", "component", "replication", "value"])?;
        for r in report.rows.iter().filter(|r| r.metric == metric) {
            w.write_record([
                r.setting.as_str().to_string(),
                r.method.as_str().to_string(),
                r.component.map_or(String::new(), |c| c.to_string()),
                r.replication.to_string(),
                format_value(r.value),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn run(a: &StudyArgs, jobs: Option<usize>) -> Outcome {
    let text = fs::read_to_string(&a.config).map_err(|e| Failure::data(format!("{}: {e}", a.config.display())))?;
    let mut cfg: StudyConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("{}: {e}", a.config.display())))?;
    if cfg.replications == 0 || cfg.settings.is_empty() || cfg.methods.is_empty() || cfg.k == 0 {
        return Err(Failure::usage("config needs settings, methods, replications ≥ 1 and k ≥ 1"));
    }
    if jobs.is_some() {
        cfg.jobs = jobs;
    }
    let mut manifest = RunManifest::start("study", serde_json::to_value(&cfg)?, Some(cfg.seed));
    manifest.input(&a.config)?;
    fs::create_dir_all(a.out.join("replications"))?;
    check_resumable(&a.out, &cfg)?;

    let fit_cfg = FitConfig { k: cfg.k, ..FitConfig::default() };
    let tasks = study_tasks(&cfg);
    let done = AtomicUsize::new(0);
    let run_all = || {
        tasks
            .par_iter()
            .map(|(setting, rep)| {
                let path = replication_path(&a.out, setting, *rep);
                let outcome = match load(&path) {
                    Some(o) => o,
                    None => {
                        let o = run_replication(setting, *rep, &cfg.methods, &fit_cfg);
                        store(&path, &o)?;
                        o
                    }
                };
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                eprintln!("[{n}/{}] {} replication {rep}", tasks.len(), setting.label);
                Ok(outcome)
            })
            .collect::<Outcome<Vec<_>>>()
    };
    let outcomes = match cfg.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Failure::usage(format!("cannot size worker pool: {e}")))?
            .install(run_all)?,
        None => run_all()?,
    };

    let truth_pve: Vec<f64> = outcomes.iter().filter_map(|o| o.truth_pve).collect();
    let report = assemble(outcomes, tasks.len() * cfg.methods.len());
    write_rows(&report, &a.out)?;
    write_summary(&report, &truth_pve, &a.out)?;
    write_plots(&report, &a.out)?;
    manifest.finish(&a.out, &OUTPUTS)?;

    let failed = report.failures.len();
    println!("{} rows, {failed} failed fits of {}", report.rows.len(), tasks.len() * cfg.methods.len());
    if failed > 0 && a.strict {
        return Err(Failure::Numerical {
            message: format!("{failed} fits failed (--strict)"),
            stage: None,
        });
    }
    Ok(())
}
