use std::collections::BTreeSet;

use decseg::metrics::eval_pair;

fn set(bits: u32) -> BTreeSet<usize> {
    (0..4).filter(|i| bits >> i & 1 == 1).collect()
}

pub fn run() -> Result<String, String> {
    let mut exact_matches = 0;
    for pb in 0..16u32 {
        for gb in 0..16u32 {
            let (p, g) = (set(pb), set(gb));
            let pred: Vec<f64> = (0..4).map(|i| p.contains(&i) as u8 as f64).collect();
            let gt: Vec<u8> = (0..4).map(|i| g.contains(&i) as u8).collect();
            let s = eval_pair(&pred, &gt, 2, 2).map_err(|e| e.to_string())?;

            let inter = p.intersection(&g).count();
            let union = p.union(&g).count();
            let (dice, iou) = if union == 0 {
                (1.0, 1.0)
            } else {
                (2.0 * inter as f64 / (p.len() + g.len()) as f64, inter as f64 / union as f64)
            };
            let mae = p.symmetric_difference(&g).count() as f64 / 4.0;
            ensure!(s.dice == dice, "pred {p:?} gt {g:?}: Dice {} vs {dice}", s.dice);
            ensure!(s.iou == iou, "pred {p:?} gt {g:?}: IoU {} vs {iou}", s.iou);
            ensure!(s.mae == mae, "pred {p:?} gt {g:?}: MAE {} vs {mae}", s.mae);
            for (name, v) in [("Fbw", s.fbw), ("Salpha", s.s_alpha)] {
                ensure!((0.0..=1.0).contains(&v), "pred {p:?} gt {g:?}: {name} = {v}");
            }
            if p == g {
                ensure!(s.fbw == 1.0 && s.s_alpha == 1.0, "exact match {p:?}: Fbw {} Salpha {}", s.fbw, s.s_alpha);
                exact_matches += 1;
            }
        }
    }

    // The worked 2x2 example: one predicted pixel inside a two-pixel mask.
    let s = eval_pair(&[1.0, 0.0, 0.0, 0.0], &[1, 1, 0, 0], 2, 2).unwrap();
    ensure!(s.dice == 2.0 / 3.0 && s.iou == 0.5 && s.mae == 0.25, "worked example gives {s:?}");
    Ok(format!("256 pairs, {exact_matches} exact matches"))
}
