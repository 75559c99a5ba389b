use decseg::model::Backbone;
use decseg::{poly_lr, Recipe, TrainConfig};

const GOLDEN: &str = include_str!("../golden/polyp_recipe.toml");

pub fn run() -> Result<String, String> {
    let polyp = TrainConfig::recipe(Recipe::Polyp);
    let text = polyp.to_toml();
    if text != GOLDEN {
        let line = text.lines().zip(GOLDEN.lines()).position(|(a, b)| a != b);
        return Err(format!("polyp recipe differs from golden file (first differing line {line:?})"));
    }
    ensure!(TrainConfig::from_toml(GOLDEN).map_err(|e| e.to_string())? == polyp, "golden file does not round-trip");

    for (recipe, size) in [(Recipe::Polyp, 352), (Recipe::SkinLesion, 352), (Recipe::BrainMri, 256)] {
        let c = TrainConfig::recipe(recipe);
        ensure!(c.image_size == size, "{recipe:?} input {}", c.image_size);
        ensure!(c.max_iters == 10_000, "{recipe:?} max_iters {}", c.max_iters);
        ensure!(c.batch_labeled == 3 && c.batch_unlabeled == 3, "{recipe:?} batch {}+{}", c.batch_labeled, c.batch_unlabeled);
        ensure!(c.lr0 == 1e-2, "{recipe:?} lr0 {}", c.lr0);
        ensure!(c.backbone == Backbone::Res2net50, "{recipe:?} backbone {:?}", c.backbone);
        ensure!(c.use_sc && c.use_dcf && c.use_cc && c.use_cfa, "{recipe:?} has a disabled component");
    }

    let c = &polyp;
    let at = |step| poly_lr(step, c.max_iters, c.lr0, c.poly_power).unwrap();
    ensure!(at(0) == 0.01, "lr at step 0 is {}", at(0));
    ensure!(at(10_000) == 0.0, "lr at the last step is {}", at(10_000));
    let mid = 0.01 * 0.5f64.powf(0.9);
    ensure!((at(5000) - mid).abs() < 1e-15 && (mid - 0.005359).abs() < 5e-7, "lr at step 5000 is {}", at(5000));
    ensure!(poly_lr(10_001, c.max_iters, c.lr0, c.poly_power).is_err(), "step past the schedule accepted");
    Ok(String::new())
}
