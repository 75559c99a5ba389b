use std::time::Instant;

use decseg::data::ImageBatch;
use decseg::losses::{
    cross_generative_loss, perturbation_consistency_loss, scale_consistency_loss, supervised_loss, supervised_term,
    total_loss, LossTerms, LossWeights,
};
use decseg::model::{Cfa, Dcf, Generator, Scale, SegOutput};
use decseg::nn::{ConvBnRelu, ParamStore, Session};
use decseg::{Array, LabelMap, Tape, Var};

use crate::util::{close, max_abs_diff, noise, zero_params};

pub fn run() -> Result<String, String> {
    let start = Instant::now();
    cfa_zero_excitation()?;
    cfa_shape()?;
    dcf_zero_blend()?;
    supervised_examples()?;
    scale_consistency_examples()?;
    perturbation_examples()?;
    cross_generative_examples()?;
    total_examples()?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "suite took {secs:.1}s (budget 30s)");
    Ok(String::new())
}

fn seg<'t>(logits: Var<'t, f64>, scale: Scale) -> SegOutput<'t, f64> {
    SegOutput { logits, probs: logits.softmax_channels().unwrap(), scale }
}

/// Output with given foreground probabilities (logits are unused by SPC).
fn seg_probs<'t>(tape: &'t Tape<f64>, fg: &[f64], h: usize, w: usize) -> SegOutput<'t, f64> {
    let n = fg.len() / (h * w);
    let mut data = Vec::with_capacity(2 * fg.len());
    for b in 0..n {
        let img = &fg[b * h * w..(b + 1) * h * w];
        data.extend(img.iter().map(|p| 1.0 - p));
        data.extend_from_slice(img);
    }
    let probs = tape.constant(Array::new([n, 2, h, w], data).unwrap());
    SegOutput { logits: probs, probs, scale: Scale::Full }
}

fn cfa_zero_excitation() -> Result<(), String> {
    let mut store = ParamStore::<f64>::new(11);
    let cfa = Cfa::new(&mut store, "cfa", 6, 10, 8, 4).map_err(|e| e.to_string())?;
    zero_params(&mut store, "cfa.excite.");
    let tape = Tape::no_grad();
    let (cur, next) = (tape.constant(noise(&[2, 6, 8, 8], 1)), tape.constant(noise(&[2, 10, 4, 4], 2)));
    let out = {
        let mut s = Session::new(&tape, &mut store, true);
        cfa.forward(&mut s, cur, next).unwrap()
    };
    let w = out.weights.value();
    ensure!(w.data().iter().all(|&v| v == 0.5), "zeroed excitation gives weights other than 0.5");

    // Same-seeded store reproduces the refine block's parameters by name.
    let mut twin = ParamStore::<f64>::new(11);
    let refine = ConvBnRelu::same3(&mut twin, "cfa.refine", 8, 8).unwrap();
    let mut s = Session::new(&tape, &mut twin, true);
    let expect = refine.forward(&mut s, out.merged.scale(1.5)).unwrap().value();
    let diff = max_abs_diff(out.output.value().data(), expect.data());
    ensure!(diff < 1e-12, "CFA output differs from refine(1.5 * merged) by {diff}");
    Ok(())
}

fn cfa_shape() -> Result<(), String> {
    let mut store = ParamStore::<f32>::new(0);
    let cfa = Cfa::new(&mut store, "cfa", 64, 128, 64, 4).unwrap();
    let tape = Tape::no_grad();
    let mut s = Session::new(&tape, &mut store, false);
    let out = cfa
        .forward(&mut s, tape.constant(Array::zeros([1, 64, 44, 44])), tape.constant(Array::zeros([1, 128, 22, 22])))
        .unwrap();
    ensure!(out.output.shape() == [1, 64, 44, 44], "CFA output shape {:?}", out.output.shape());
    ensure!(Cfa::new(&mut store, "bad", 64, 128, 30, 4).is_err(), "indivisible reduction accepted");
    Ok(())
}

fn dcf_zero_blend() -> Result<(), String> {
    let mut store = ParamStore::<f64>::new(5);
    let dcf = Dcf::new(&mut store, "dcf", 4).unwrap();
    zero_params(&mut store, "dcf.blend.");
    let tape = Tape::no_grad();
    let mut s = Session::new(&tape, &mut store, true);
    let out = dcf
        .forward(&mut s, tape.constant(noise(&[2, 4, 8, 8], 3)), tape.constant(noise(&[2, 4, 4, 4], 4)))
        .unwrap();
    ensure!(out.alpha.value().data().iter().all(|&a| a == 0.5), "zeroed blend gives alpha other than 0.5");
    let avg = out.rec_full.add(out.rec_half).unwrap().scale(0.5).value();
    let diff = max_abs_diff(out.output.value().data(), avg.data());
    ensure!(diff < 1e-12, "DCF output differs from the branch average by {diff}");
    Ok(())
}

fn supervised_examples() -> Result<(), String> {
    let tape = Tape::<f64>::no_grad();
    let y = LabelMap::new(1, 4, 4, (0..16).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
    let y_half = y.resize_nearest(2, 2);
    let one_hot = |lab: &LabelMap| {
        let hw = lab.h * lab.w;
        let data = (0..2 * hw).map(|i| if lab.data[i % hw] as usize == i / hw { 1000.0 } else { -1000.0 }).collect();
        tape.constant(Array::new([1, 2, lab.h, lab.w], data).unwrap())
    };
    let (f, h, d) = (seg(one_hot(&y), Scale::Full), seg(one_hot(&y_half), Scale::Half), seg(one_hot(&y), Scale::Full));
    let perfect = supervised_loss(&f, &h, Some(&d), &y).unwrap().value().item();
    ensure!(perfect == 0.0, "perfect prediction gives L_S = {perfect}");

    // Uniform 0.5 against an all-foreground 4x4 mask.
    let ones = LabelMap::new(1, 4, 4, vec![1; 16]).unwrap();
    let uniform = seg(tape.constant(Array::zeros([1, 2, 4, 4])), Scale::Full);
    let dice = uniform.probs.dice_loss(&ones.data, 1, 1.0).unwrap().value().item();
    let dice_oracle = 1.0 - (2.0 * 8.0 + 1.0) / (8.0 + 16.0 + 1.0);
    ensure!(close(dice, dice_oracle, 1e-12) && close(dice, 0.32, 1e-12), "Dice {dice} vs {dice_oracle}");
    let term = supervised_term(&uniform, &ones).unwrap().value().item();
    ensure!(close(term, (2f64.ln() + 0.32) / 2.0, 1e-12), "uniform supervised term {term}");

    // Class symmetry of CE.
    let logits = noise(&[1, 2, 4, 4], 9);
    let swapped = Array::new([1, 2, 4, 4], [&logits.data()[16..], &logits.data()[..16]].concat()).unwrap();
    let y_comp: Vec<u8> = y.data.iter().map(|v| 1 - v).collect();
    let a = tape.constant(logits).cross_entropy(&y.data).unwrap().value().item();
    let b = tape.constant(swapped).cross_entropy(&y_comp).unwrap().value().item();
    ensure!(close(a, b, 1e-12), "CE not class-symmetric: {a} vs {b}");

    let bad = LabelMap::new(1, 4, 4, vec![2; 16]).unwrap();
    ensure!(supervised_loss(&f, &h, Some(&d), &bad).is_err(), "non-binary mask accepted");
    Ok(())
}

fn log_softmax(z: [f64; 2], k: usize) -> f64 {
    let m = z[0].max(z[1]);
    z[k] - m - ((z[0] - m).exp() + (z[1] - m).exp()).ln()
}

fn scale_consistency_examples() -> Result<(), String> {
    let tape = Tape::<f64>::new();
    // Brute-force 2x2 / 1x1 instance. Channel-major logits per pixel.
    let full_z = [[0.3, 1.2], [0.9, -0.4], [-0.2, 0.1], [1.5, 0.7]];
    let half_z = [0.8, 0.2];
    let mut fd = vec![0.0; 8];
    for (p, z) in full_z.iter().enumerate() {
        fd[p] = z[0];
        fd[4 + p] = z[1];
    }
    let full_v = tape.variable(Array::new([1, 2, 2, 2], fd).unwrap());
    let half_v = tape.variable(Array::new([1, 2, 1, 1], half_z.to_vec()).unwrap());
    let (full, half) = (seg(full_v, Scale::Full), seg(half_v, Scale::Half));
    let loss = scale_consistency_loss(&full, &half).unwrap();

    let y_half = (half_z[1] > half_z[0]) as usize;
    let y_full_00 = (full_z[0][1] > full_z[0][0]) as usize;
    let ce_full = -full_z.iter().map(|&z| log_softmax(z, y_half)).sum::<f64>() / 4.0;
    let ce_half = -log_softmax(half_z, y_full_00);
    let got = loss.value().item();
    ensure!(close(got, ce_full + ce_half, 1e-6), "2x2 SC {got} vs hand {}", ce_full + ce_half);

    // Pseudo-labels carry no gradient: d/d(full) equals that of CE(full, fixed labels).
    let grads = tape.backward(loss).unwrap();
    let t2 = Tape::<f64>::new();
    let fv2 = t2.variable(full_v.value().as_ref().clone());
    let g2 = t2.backward(fv2.cross_entropy(&[y_half as u8; 4]).unwrap()).unwrap();
    let diff = max_abs_diff(grads.get(full_v).unwrap().data(), g2.get(fv2).unwrap().data());
    ensure!(diff < 1e-15, "gradient leaks through pseudo-labels ({diff})");

    // Uniform full-scale prediction costs log 2 per pixel whatever the labels.
    let nt = Tape::<f64>::no_grad();
    let uni = seg(nt.constant(Array::zeros([1, 2, 2, 2])), Scale::Full);
    let half = seg(nt.constant(Array::new([1, 2, 1, 1], vec![-0.5, 0.9]).unwrap()), Scale::Half);
    let total = scale_consistency_loss(&uni, &half).unwrap().value().item();
    // argmax of a tie resolves to class 0
    let ce_h = -log_softmax([-0.5, 0.9], 0);
    ensure!(close(total - ce_h, 2f64.ln(), 1e-12), "uniform SC term {} vs ln 2", total - ce_h);

    // Confident agreement: loss equals the summed -log(max prob) and beats uniform.
    let conf_full = seg(nt.constant(Array::new([1, 2, 2, 2], vec![3.0; 4].into_iter().chain(vec![-3.0; 4]).collect()).unwrap()), Scale::Full);
    let conf_half = seg(nt.constant(Array::new([1, 2, 1, 1], vec![2.0, -2.0]).unwrap()), Scale::Half);
    let agree = scale_consistency_loss(&conf_full, &conf_half).unwrap().value().item();
    let floor = -log_softmax([3.0, -3.0], 0) - log_softmax([2.0, -2.0], 0);
    ensure!(close(agree, floor, 1e-12) && agree < 2.0 * 2f64.ln(), "agreeing SC {agree} vs {floor}");

    let wrong = seg(nt.constant(Array::zeros([1, 2, 3, 3])), Scale::Half);
    ensure!(scale_consistency_loss(&uni, &wrong).is_err(), "non 2:1 pair accepted");
    Ok(())
}

fn perturbation_examples() -> Result<(), String> {
    let tape = Tape::<f64>::no_grad();
    let base: Vec<f64> = (0..32).map(|i| 0.2 + 0.5 * ((i * 7 % 11) as f64 / 11.0)).collect();
    let shifted: Vec<f64> = base.iter().map(|p| p + 0.1).collect();
    let (a, b) = (seg_probs(&tape, &base, 4, 4), seg_probs(&tape, &shifted, 4, 4));
    let same = perturbation_consistency_loss(&[(&a, &a), (&b, &b), (&a, &a)]).unwrap().value().item();
    ensure!(same == 0.0, "identical pairs give {same}");
    let one = perturbation_consistency_loss(&[(&a, &b), (&a, &a), (&b, &b)]).unwrap().value().item();
    ensure!(close(one, 0.01, 1e-12), "0.1 offset on one pair gives {one}");
    let swapped = perturbation_consistency_loss(&[(&b, &a), (&a, &a), (&b, &b)]).unwrap().value().item();
    ensure!(one == swapped, "SPC not symmetric: {one} vs {swapped}");
    let small = seg_probs(&tape, &base[..8], 2, 2);
    ensure!(perturbation_consistency_loss(&[(&a, &small)]).is_err(), "scale mismatch accepted");
    Ok(())
}

fn cross_generative_examples() -> Result<(), String> {
    let mut store = ParamStore::<f64>::new(3);
    let g1 = Generator::new(&mut store, "g1", 2, &[4, 8]).unwrap();
    let g2 = Generator::new(&mut store, "g2", 2, &[4, 8]).unwrap();
    zero_params(&mut store, "g1.out.");
    zero_params(&mut store, "g2.out.");

    // Images with mean exactly 0.5: values come in (v, 1 - v) pairs.
    let (n, h, w) = (2, 8, 8);
    let half_len = n * 3 * h * w / 2;
    let first: Vec<f32> = (0..half_len).map(|i| ((i * 37 % 101) as f32) / 100.0).collect();
    let data: Vec<f32> = first.iter().copied().chain(first.iter().map(|v| 1.0 - v)).collect();
    let x_u = ImageBatch::new(n, h, w, data.clone()).unwrap();
    let x_p = ImageBatch::new(n, h, w, data.iter().rev().copied().collect()).unwrap();
    let vals: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;

    let tape = Tape::<f64>::no_grad();
    let mut s = Session::new(&tape, &mut store, true);
    let z = |seed| tape.constant(noise(&[n, 2, h, w], seed));
    let got = cross_generative_loss(&mut s, z(1), z(2), &x_u, &x_p, &g1, &g2).unwrap().value().item();
    ensure!(close(mean, 0.5, 1e-6), "oracle images have mean {mean}");
    ensure!(close(got, 2.0 * var, 1e-6), "constant-0.5 generators give {got}, oracle 2v = {}", 2.0 * var);

    let grey = ImageBatch::new(n, h, w, vec![0.5; n * 3 * h * w]).unwrap();
    let zero = cross_generative_loss(&mut s, z(3), z(4), &grey, &grey, &g1, &g2).unwrap().value().item();
    ensure!(zero == 0.0, "exact reconstructions give {zero}");
    let small = ImageBatch::new(n, 4, 4, vec![0.5; n * 3 * 16]).unwrap();
    ensure!(cross_generative_loss(&mut s, z(3), z(4), &small, &grey, &g1, &g2).is_err(), "size mismatch accepted");
    Ok(())
}

fn total_examples() -> Result<(), String> {
    let tape = Tape::<f64>::no_grad();
    let c = |v: f64| Some(tape.constant(Array::scalar(v)));
    let w = LossWeights::default();

    let spc_only = LossTerms { l_s: c(0.7), l_spc: c(0.05), ..Default::default() };
    let (total, report) = total_loss(&spc_only, &w).unwrap();
    ensure!(total.unwrap().value().item() == 0.7 + 0.05, "L_S + L_SPC mismatch");
    ensure!(
        report.l_sc_l == 0.0 && report.l_sc_u == 0.0 && report.l_sc_p == 0.0 && report.l_cc == 0.0,
        "disabled terms reported non-zero"
    );

    let zeros = LossTerms { l_s: c(0.0), l_sc_l: c(0.0), l_sc_u: c(0.0), l_sc_p: c(0.0), l_spc: c(0.0), l_cc: c(0.0) };
    ensure!(total_loss(&zeros, &w).unwrap().1.total == 0.0, "all-zero terms give a non-zero total");

    for seed in 0..5u64 {
        let v = noise(&[6], seed).map(f64::abs);
        let d = v.data();
        let terms = LossTerms { l_s: c(d[0]), l_sc_l: c(d[1]), l_sc_u: c(d[2]), l_sc_p: c(d[3]), l_spc: c(d[4]), l_cc: c(d[5]) };
        let (_, r) = total_loss(&terms, &w).unwrap();
        let sum = r.l_s + r.l_sc_l + r.l_sc_u + r.l_sc_p + r.l_spc + r.l_cc;
        ensure!(close(r.total, sum, 1e-6), "total {} vs component sum {sum}", r.total);
        let bumped = LossTerms { l_cc: c(2.0 * d[5]), ..terms };
        let (_, r2) = total_loss(&bumped, &w).unwrap();
        ensure!(close(r2.total - r.total, d[5], 1e-12), "doubling L_CC changed total by {}", r2.total - r.total);
    }
    Ok(())
}
