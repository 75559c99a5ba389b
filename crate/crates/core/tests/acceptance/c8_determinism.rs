use std::fs;
use std::path::Path;

use decseg::checkpoint;
use decseg::data::make_synthetic_dataset;
use decseg::train::TRAIN_LOG;
use decseg::{fit, FitOptions, TrainConfig};

fn config(data: &Path, out: &Path) -> TrainConfig {
    TrainConfig {
        data_root: data.to_path_buf(),
        image_size: 64,
        max_iters: 6,
        batch_labeled: 2,
        batch_unlabeled: 2,
        seed: 7,
        skip_final_eval: true,
        output_dir: out.to_path_buf(),
        ..TrainConfig::default()
    }
}

fn params(path: &Path) -> Result<Vec<(String, Vec<f32>)>, String> {
    let loaded = checkpoint::load::<f32>(path).map_err(|e| e.to_string())?;
    Ok(loaded.tensors.into_iter().map(|(k, v)| (k, v.data().to_vec())).collect())
}

pub fn run() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    make_synthetic_dataset(&data, 5, 5, 0, 64, 3).map_err(|e| e.to_string())?;
    let err = |e: decseg::Error| e.to_string();

    let runs: Vec<_> = ["a", "b"].iter().map(|n| tmp.path().join(n)).collect();
    let mut finals = Vec::new();
    for out in &runs {
        finals.push(fit(&config(&data, out), &FitOptions::default()).map_err(err)?.checkpoint);
    }
    let log_a = fs::read(runs[0].join(TRAIN_LOG)).map_err(|e| e.to_string())?;
    let log_b = fs::read(runs[1].join(TRAIN_LOG)).map_err(|e| e.to_string())?;
    ensure!(log_a == log_b, "identical runs wrote different train logs");
    ensure!(params(&finals[0])? == params(&finals[1])?, "identical runs ended with different parameters");

    let out = tmp.path().join("resumed");
    let cfg = config(&data, &out);
    let first = fit(&cfg, &FitOptions { stop_after: Some(3), ..Default::default() }).map_err(err)?;
    let rest = fit(&cfg, &FitOptions { resume: Some(first.checkpoint.clone()), ..Default::default() }).map_err(err)?;
    ensure!(first.reports.len() == 3 && rest.reports.len() == 3, "resume split the run unevenly");
    let log_r = fs::read(out.join(TRAIN_LOG)).map_err(|e| e.to_string())?;
    if log_r != log_a {
        let (a, r) = (String::from_utf8_lossy(&log_a), String::from_utf8_lossy(&log_r));
        let line = a.lines().zip(r.lines()).position(|(x, y)| x != y);
        return Err(format!("resumed log differs from the uninterrupted one at line {line:?}"));
    }
    ensure!(params(&rest.checkpoint)? == params(&finals[0])?, "resumed run ended with different parameters");
    Ok(format!("{} logged steps", log_a.iter().filter(|&&b| b == b'\n').count() - 1))
}
