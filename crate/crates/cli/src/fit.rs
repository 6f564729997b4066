use std::fs;

use dmfpca::io::{read_sample_path, write_curves_path, write_eigenfunctions_path, write_eigenvalues_path, write_scores_path};
use dmfpca::pipelines::{fit, FitConfig, Method, ScoreMethod};
use dmfpca::ufpca::ComponentSelector;
use dmfpca::Smoothing;

use crate::artifacts::{EIGENFUNCTIONS, EIGENVALUES, RECONSTRUCTION};
use crate::failure::{Failure, Outcome};
use crate::manifest::RunManifest;
use crate::FitArgs;

fn config(a: &FitArgs) -> Outcome<FitConfig<f64>> {
    let mut cfg = FitConfig::<f64> {
        d: a.d,
        k: a.k,
        grid_points: a.grid_points,
        assume_noise: !a.noise_free,
        scores: a.scores.parse::<ScoreMethod>()?,
        ..FitConfig::default()
    };
    match (a.pve, a.components) {
        (Some(p), _) if !(p > 0.0 && p <= 1.0) => return Err(Failure::usage("--pve must lie in (0, 1]")),
        (Some(p), _) => cfg.selector = ComponentSelector::Pve(p),
        (None, Some(0)) => return Err(Failure::usage("--components must be at least 1")),
        (None, Some(c)) => cfg.selector = ComponentSelector::Fixed(c),
        (None, None) => {}
    }
    if let Some(l) = a.lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Failure::usage("--lambda must be finite and nonnegative"));
        }
        cfg.spline.smoothing = Smoothing::Fixed(l);
    }
    Ok(cfg)
}

pub fn run(a: &FitArgs) -> Outcome {
    let method: Method = a.method.parse()?;
    let cfg = config(a)?;
    let mut manifest = RunManifest::start("fit", serde_json::to_value(a)?, None);
    manifest.input(&a.input)?;

    let sample = match a.domain {
        Some(d) => {
            // the feature count is only known after reading, so read once
            // without domains and validate against the declared one after
            let probe = read_sample_path::<f64>(&a.input, None)?;
            let domains = vec![d; probe.n_features()];
            read_sample_path(&a.input, Some(&domains))?
        }
        None => read_sample_path(&a.input, None)?,
    };
    let mut result = fit(method, &sample, &cfg)?;
    // wall-clock timings go to the manifest so the report is reproducible
    let timings = std::mem::take(&mut result.report.timings);

    fs::create_dir_all(&a.out)?;
    let ids: Vec<String> = sample.subjects().iter().map(|s| s.id.clone()).collect();
    write_eigenvalues_path(&result.eigen.eigenvalues, &a.out.join(EIGENVALUES))?;
    write_eigenfunctions_path(&result.eigen, &a.out.join(EIGENFUNCTIONS))?;
    write_scores_path(&ids, &result.scores.scores, &a.out.join("scores.csv"))?;
    write_curves_path(&ids, &result.reconstruction, &a.out.join(RECONSTRUCTION))?;
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&result.report)? + "\n")?;
    manifest.config["domains"] = serde_json::json!(sample.domains());
    manifest.config["timings"] = serde_json::json!(timings);
    manifest.finish(&a.out, &[EIGENVALUES, EIGENFUNCTIONS, "scores.csv", RECONSTRUCTION, "report.json"])
}
