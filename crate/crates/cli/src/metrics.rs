use std::fs::{self, File};

use dmfpca::metrics::{ise, re, rmise, Metric, MetricRow};
use dmfpca::ndarray::s;

use crate::artifacts::{load_curves, load_eigen};
use crate::failure::{Failure, Outcome};
use crate::manifest::RunManifest;
use crate::MetricsArgs;

pub fn compute(a: &MetricsArgs, manifest: &mut RunManifest) -> Outcome<Vec<MetricRow>> {
    let (est_path, est) = load_eigen(&a.estimate)?;
    let (truth_path, truth) = load_eigen(&a.truth)?;
    let (est_curves_path, est_ids, est_curves) = load_curves(&a.estimate)?;
    let (truth_curves_path, truth_ids, truth_curves) = load_curves(&a.truth)?;
    for p in [&est_path, &truth_path, &est_curves_path, &truth_curves_path] {
        manifest.input(p)?;
    }

    let k = a.k.unwrap_or(truth.values.len());
    if k == 0 || k > truth.values.len() {
        return Err(Failure::usage(format!("--k must lie in [1, {}], the truth's component count", truth.values.len())));
    }
    if est.values.len() < k {
        return Err(Failure::data(format!("estimate has {} components, {k} requested", est.values.len())));
    }
    if est.grids != truth.grids {
        return Err(Failure::data("estimate and truth eigenfunctions are tabulated on different grids"));
    }
    if est_ids != truth_ids {
        return Err(Failure::data(format!(
            "estimate has {} subjects and truth {}, or their ids differ",
            est_ids.len(),
            truth_ids.len()
        )));
    }
    if est_curves.grids != truth_curves.grids {
        return Err(Failure::data("reconstruction and true derivatives are tabulated on different grids"));
    }

    let truth_fns: Vec<_> = truth.functions.iter().map(|f| f.slice(s![..k, ..]).to_owned()).collect();
    let mut rows = Vec::with_capacity(2 * k + 1);
    for (c, v) in re(&truth.values[..k], &est.values[..k])?.into_iter().enumerate() {
        rows.push(MetricRow { metric: Metric::Re, component: Some(c + 1), value: v });
    }
    for (c, v) in ise(&truth_fns, &est.functions, &truth.grids)?.into_iter().enumerate() {
        rows.push(MetricRow { metric: Metric::Ise, component: Some(c + 1), value: v });
    }
    rows.push(MetricRow { metric: Metric::Rmise, component: None, value: rmise(&truth_curves, &est_curves)? });
    Ok(rows)
}

pub fn run(a: &MetricsArgs) -> Outcome {
    let mut manifest = RunManifest::start("metrics", serde_json::to_value(a)?, None);
    let rows = compute(a, &mut manifest)?;
    let out = a.out.clone().unwrap_or_else(|| a.estimate.clone());
    fs::create_dir_all(&out)?;
    let mut w = csv::Writer::from_writer(File::create(out.join("metrics.csv"))?);
    w.write_record(["metric", "component", "value"])?;
    for r in &rows {
        w.write_record([
            r.metric.name().to_string(),
            r.component.map_or(String::new(), |c| c.to_string()),
            dmfpca::io::format_value(r.value),
        ])?;
    }
    w.flush()?;
    drop(w);
    // a fit directory already has a manifest; keep it and write our own beside
    let mut named = manifest;
    named.outputs.clear();
    let digest = crate::manifest::digest(&out.join("metrics.csv"))?;
    named.outputs.insert("metrics.csv".into(), digest);
    named.finished_unix = crate::manifest::now();
    fs::write(out.join("metrics_manifest.json"), serde_json::to_string_pretty(&named)? + "\n")?;
    Ok(())
}
