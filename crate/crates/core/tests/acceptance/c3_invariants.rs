use decseg::data::ImageBatch;
use decseg::metrics::eval_pair;
use decseg::model::{Cfa, Dcf};
use decseg::nn::{ParamStore, Session};
use decseg::{DecSegNet, LabelMap, ModelConfig, Tape, TrainConfig, Trainer};

use crate::util::noise;

fn channel_sum_error(probs: &decseg::Array<f32>) -> f64 {
    let (n, c, h, w) = probs.dims4().unwrap();
    let d = probs.data();
    let mut worst = 0.0f64;
    for b in 0..n {
        for p in 0..h * w {
            let s: f64 = (0..c).map(|k| d[(b * c + k) * h * w + p] as f64).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

fn images(n: usize, size: usize, seed: u64) -> ImageBatch {
    let a = noise(&[n, 3, size, size], seed);
    ImageBatch::new(n, size, size, a.data().iter().map(|v| (0.5 + 0.45 * v) as f32).collect()).unwrap()
}

pub fn run() -> Result<String, String> {
    let mut checked = 0usize;
    for seed in 0..4u64 {
        // DCF blend weights.
        let mut store = ParamStore::<f64>::new(seed);
        let dcf = Dcf::new(&mut store, "dcf", 6).unwrap();
        let cfa = Cfa::new(&mut store, "cfa", 6, 12, 8, 4).unwrap();
        let tape = Tape::no_grad();
        let mut s = Session::new(&tape, &mut store, true);
        let h1 = tape.constant(noise(&[2, 6, 10, 10], seed * 7 + 1).map(|v| 3.0 * v));
        let h2 = tape.constant(noise(&[2, 6, 5, 5], seed * 7 + 2).map(|v| 3.0 * v));
        let alpha = dcf.forward(&mut s, h1, h2).unwrap().alpha.value();
        let (n, _, h, w) = alpha.dims4().unwrap();
        let a = alpha.data();
        for b in 0..n {
            for p in 0..h * w {
                let (a1, a2) = (a[(b * 2) * h * w + p], a[(b * 2 + 1) * h * w + p]);
                ensure!((a1 + a2 - 1.0).abs() <= 1e-6, "alpha sum {} at pixel {p}", a1 + a2);
                ensure!(a1 > 0.0 && a1 < 1.0 && a2 > 0.0 && a2 < 1.0, "alpha outside (0,1)");
                checked += 1;
            }
        }

        // CFA channel weights.
        let wts = cfa.forward(&mut s, h1, tape.constant(noise(&[2, 12, 5, 5], seed + 50))).unwrap().weights.value();
        ensure!(wts.shape() == [2, 8, 1, 1], "CFA weights shape {:?}", wts.shape());
        ensure!(wts.data().iter().all(|&v| v > 0.0 && v < 1.0), "CFA weights outside (0,1)");

        // Softmax outputs of all three decoders.
        let mut store = ParamStore::<f32>::new(seed);
        let net = DecSegNet::new(&ModelConfig::default(), &mut store).unwrap();
        let tape = Tape::no_grad();
        for training in [true, false] {
            let mut s = Session::new(&tape, &mut store, training);
            let out = net.forward(&mut s, tape.constant(images(2, 64, seed).to_array())).unwrap();
            for o in [&out.full, &out.half, out.fused.as_ref().unwrap()] {
                let err = channel_sum_error(&o.probs.value());
                ensure!(err <= 1e-5, "softmax channel sum off by {err}");
            }
        }

        // Loss components from a full semi-supervised step.
        let cfg = TrainConfig { image_size: 64, max_iters: 10, seed, ..TrainConfig::default() };
        let mut trainer = Trainer::new(&cfg).unwrap();
        let y = LabelMap::new(2, 64, 64, (0..2 * 64 * 64).map(|i| ((i / 64) % 64 > 40) as u8).collect()).unwrap();
        let r = trainer.train_step(&images(2, 64, seed + 10), &y, Some(&images(2, 64, seed + 20))).unwrap();
        for (name, v) in [
            ("L_S", r.l_s),
            ("L_SC_l", r.l_sc_l),
            ("L_SC_u", r.l_sc_u),
            ("L_SC_p", r.l_sc_p),
            ("L_SPC", r.l_spc),
            ("L_CC", r.l_cc),
            ("total", r.total),
        ] {
            ensure!(v.is_finite() && v >= 0.0, "{name} = {v}");
        }
    }

    // Dice = 2 IoU / (1 + IoU) per image.
    for seed in 0..200u64 {
        let (h, w) = (1 + (seed % 9) as usize, 1 + (seed % 13) as usize);
        let p = noise(&[h * w], seed);
        let g = noise(&[h * w], seed + 1000);
        let pred: Vec<f64> = p.data().iter().map(|v| (v + 1.0) / 2.0).collect();
        let gt: Vec<u8> = g.data().iter().map(|&v| (v > 0.3) as u8).collect();
        let s = eval_pair(&pred, &gt, h, w).unwrap();
        let expect = 2.0 * s.iou / (1.0 + s.iou);
        ensure!((s.dice - expect).abs() <= 1e-9, "Dice {} vs 2IoU/(1+IoU) {expect}", s.dice);
        ensure!(s.dice >= s.iou, "Dice below IoU");
    }
    Ok(format!("{checked} DCF pixels, 200 metric pairs"))
}
