use std::time::Instant;

use decseg::data::make_synthetic_dataset;
use decseg::{fit, FitOptions, TrainConfig};

/// Supervised-only training on ten synthetic images, scored on twenty held-out ones.
pub fn run() -> Result<String, String> {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    make_synthetic_dataset(&data, 10, 0, 20, 96, 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        data_root: data,
        image_size: 96,
        max_iters: 300,
        use_sc: false,
        use_cc: false,
        output_dir: tmp.path().join("run"),
        ..TrainConfig::default()
    };
    let summary = fit(&cfg, &FitOptions::default()).map_err(|e| e.to_string())?;
    let m = summary.metrics.ok_or("no test metrics")?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("test mDice {:.4} over {} images, {secs:.0}s", m.m_dice, m.n_images);
    ensure!(m.m_dice > 0.95, "{detail}; need > 0.95");
    ensure!(secs < 600.0, "{detail}; budget 600s");
    Ok(detail)
}
