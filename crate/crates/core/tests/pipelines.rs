use dmfpca::io::{read_curves_path, read_eigenfunctions_path, read_eigenvalues_path, write_curves_path, write_eigenfunctions_path, write_eigenvalues_path};
use dmfpca::metrics::rmise;
use dmfpca::mfpca::reconstruct;
use dmfpca::pipelines::{fit, FitConfig, Method};
use dmfpca::simstudy::{generate, SettingLabel, SimSetting};
use dmfpca::{Error, FitConfigF32};

fn setting(label: SettingLabel, seed: u64) -> SimSetting {
    SimSetting::preset(label, seed)
}

#[test]
fn dense_clean_first_derivatives_are_recovered() {
    let (sample, truth) = generate::<f64>(&setting(SettingLabel::DenseClean, 1), 0).unwrap();
    let r = fit(Method::Dmfpca, &sample, &FitConfig::default()).unwrap();
    let err = rmise(&truth.derivatives, &r.reconstruction).unwrap();
    assert!(err < 0.05, "RMISE {err}");
    assert_eq!(r.report.method, "dmfpca");
    assert_eq!(r.eigen.n_components(), 3);
}

#[test]
fn reconstruction_is_mean_plus_truncated_expansion() {
    let (sample, _) = generate::<f64>(&setting(SettingLabel::SparseHigh, 2), 0).unwrap();
    for m in [Method::Dmfpca, Method::Dmkl, Method::Direct] {
        let r = fit(m, &sample, &FitConfig::default()).unwrap();
        let expansion = reconstruct(&r.eigen, &r.scores, r.eigen.n_components()).unwrap();
        let sum = expansion.add(&r.mean_derivative).unwrap();
        for (a, b) in sum.values.iter().zip(&r.reconstruction.values) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9), "{}", m.as_str());
        }
        assert_eq!(r.scores.scores.dim(), (100, 3));
        assert!(r.reconstruction.values.iter().all(|v| v.iter().all(|x| x.is_finite())));
        assert!(r.eigen.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn single_precision_tracks_double() {
    let (s64, _) = generate::<f64>(&setting(SettingLabel::DenseNoisy, 3), 0).unwrap();
    let (s32, _) = generate::<f32>(&setting(SettingLabel::DenseNoisy, 3), 0).unwrap();
    let a = fit(Method::Dmfpca, &s64, &FitConfig::default()).unwrap();
    let b = fit(Method::Dmfpca, &s32, &FitConfigF32::default()).unwrap();
    for (x, y) in a.eigen.eigenvalues.iter().zip(&b.eigen.eigenvalues) {
        assert!((x - *y as f64).abs() < 0.02 * x, "{x} vs {y}");
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let (sample, _) = generate::<f64>(&setting(SettingLabel::SparseHigh, 4), 0).unwrap();
    for cfg in [
        FitConfig { k: 0, ..FitConfig::default() },
        FitConfig { d: 4, ..FitConfig::default() },
        FitConfig { k: 1000, ..FitConfig::default() },
    ] {
        let err = fit(Method::Dmfpca, &sample, &cfg).unwrap_err();
        assert!(matches!(err.root(), Error::InvalidArgument(_)), "{err}");
    }
}

#[test]
fn fit_outputs_survive_a_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (sample, _) = generate::<f64>(&setting(SettingLabel::SparseMedium, 5), 0).unwrap();
    let r = fit(Method::Dmfpca, &sample, &FitConfig::default()).unwrap();
    let ids: Vec<String> = sample.subjects().iter().map(|s| s.id.clone()).collect();

    write_eigenvalues_path(&r.eigen.eigenvalues, &dir.path().join("values.csv")).unwrap();
    assert_eq!(read_eigenvalues_path::<f64>(&dir.path().join("values.csv")).unwrap(), r.eigen.eigenvalues);

    write_eigenfunctions_path(&r.eigen, &dir.path().join("functions.csv")).unwrap();
    let (grids, functions) = read_eigenfunctions_path::<f64>(&dir.path().join("functions.csv")).unwrap();
    assert_eq!(grids, r.eigen.grids);
    assert_eq!(functions, r.eigen.eigenfunctions);

    write_curves_path(&ids, &r.reconstruction, &dir.path().join("curves.csv")).unwrap();
    let (back_ids, curves) = read_curves_path::<f64>(&dir.path().join("curves.csv")).unwrap();
    assert_eq!(back_ids, ids);
    assert_eq!(curves, r.reconstruction);
}
