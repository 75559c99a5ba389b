use std::path::{Path, PathBuf};
use std::time::Instant;

use decseg::data::make_synthetic_dataset;
use decseg::{fit, FitOptions, TrainConfig};

const SEEDS: [u64; 3] = [0, 1, 2];
const SIZE: usize = 64;

fn base(data: &Path, out: PathBuf, seed: u64) -> TrainConfig {
    TrainConfig { data_root: data.to_path_buf(), image_size: SIZE, max_iters: 300, seed, output_dir: out, ..TrainConfig::default() }
}

fn spc_only(mut c: TrainConfig) -> TrainConfig {
    c.use_sc = false;
    c.use_cc = false;
    c.use_dcf = false;
    c.use_cfa = false;
    c
}

/// Supervised warm-up on the labelled split with the same architecture as `arm`,
/// then the semi-supervised run initialised from it. Returns test mDice.
fn train_arm(arm: TrainConfig) -> Result<f64, String> {
    let err = |e: decseg::Error| e.to_string();
    let warm = TrainConfig {
        use_sc: false,
        use_cc: false,
        unlabeled_list: "no-unlabeled.txt".into(),
        skip_final_eval: true,
        output_dir: arm.output_dir.join("warmup"),
        ..arm.clone()
    };
    let init = fit(&warm, &FitOptions::default()).map_err(err)?.checkpoint;
    let cfg = TrainConfig { init_from: init, ..arm };
    let m = fit(&cfg, &FitOptions::default()).map_err(err)?.metrics.ok_or("no test metrics")?;
    Ok(m.m_dice)
}

/// Full method against the perturbation-consistency-only baseline with
/// 10 labelled and 80 unlabelled images, averaged over three seeds.
pub fn run() -> Result<String, String> {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut full, mut spc) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let data = tmp.path().join(format!("data{seed}"));
        make_synthetic_dataset(&data, 10, 80, 20, SIZE, 100 + seed).map_err(|e| e.to_string())?;
        full.push(train_arm(base(&data, tmp.path().join(format!("full{seed}")), seed))?);
        spc.push(train_arm(spc_only(base(&data, tmp.path().join(format!("spc{seed}")), seed)))?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let margin = mean(&full) - mean(&spc);
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "full {:.4} {full:.4?} vs SPC-only {:.4} {spc:.4?}: margin {margin:+.4} ({}), {secs:.0}s",
        mean(&full),
        mean(&spc),
        if margin >= 0.01 { "meets the expected +0.01" } else { "below the expected +0.01" }
    );
    ensure!(margin >= 0.0, "{detail}");
    ensure!(secs < 45.0 * 60.0, "{detail}; budget 45 min");
    Ok(detail)
}
