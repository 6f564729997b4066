use std::fs;

use dmfpca::io::{write_curves_path, write_sample_path};
use dmfpca::simstudy::{generate, SettingLabel, SimSetting};

use crate::artifacts::{write_truth_eigen, TRUTH_DERIVS, TRUTH_EIGEN};
use crate::failure::{Failure, Outcome};
use crate::manifest::RunManifest;
use crate::SimulateArgs;

pub fn run(a: &SimulateArgs) -> Outcome {
    let label: SettingLabel = a.setting.parse()?;
    if a.k == 0 {
        return Err(Failure::usage("--k must be at least 1"));
    }
    let mut manifest = RunManifest::start("simulate", serde_json::to_value(a)?, Some(a.seed));
    let setting = SimSetting::preset(label, a.seed);
    let (sample, truth) = generate::<f64>(&setting, a.replication)?;
    let eigen = truth.eigen_k(a.k)?;

    fs::create_dir_all(&a.out)?;
    let ids: Vec<String> = sample.subjects().iter().map(|s| s.id.clone()).collect();
    write_sample_path(&sample, &a.out.join("sample.csv"))?;
    write_curves_path(&ids, &truth.derivatives, &a.out.join(TRUTH_DERIVS))?;
    write_truth_eigen(&eigen, &a.out.join(TRUTH_EIGEN))?;
    manifest.config["domains"] = serde_json::json!(sample.domains());
    manifest.config["truth_pve"] = serde_json::json!(truth.pve(a.k).ok());
    manifest.finish(&a.out, &["sample.csv", TRUTH_DERIVS, TRUTH_EIGEN])
}
