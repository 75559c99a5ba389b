//! Training objectives.

use decseg_tensor::{Elem, Var};
use serde::Serialize;

use crate::data::{ImageBatch, LabelMap};
use crate::error::{Error, Result};
use crate::model::{Generator, SegOutput};
use crate::nn::Session;

/// Smoothing term of the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;

fn check_label_size<T: Elem>(out: &SegOutput<'_, T>, y: &LabelMap) -> Result<()> {
    let (n, _, h, w) = out.logits.dims4()?;
    if (n, h, w) != (y.n, y.h, y.w) {
        return Err(Error::Dimension(format!(
            "prediction {n}x{h}x{w} against labels {}x{}x{}",
            y.n, y.h, y.w
        )));
    }
    Ok(())
}

/// `(CE + Dice) / 2` for one decoder output.
pub fn supervised_term<'t, T: Elem>(out: &SegOutput<'t, T>, y: &LabelMap) -> Result<Var<'t, T>> {
    check_label_size(out, y)?;
    let ce = out.logits.cross_entropy(&y.data)?;
    let dice = out.probs.dice_loss(&y.data, 1, DICE_SMOOTH)?;
    Ok(ce.add(dice)?.scale(0.5))
}

/// Supervised loss summed over the full-scale, half-scale and (if present) fused
/// outputs. The half-scale output is compared with nearest-downsampled labels.
pub fn supervised_loss<'t, T: Elem>(
    full: &SegOutput<'t, T>,
    half: &SegOutput<'t, T>,
    fused: Option<&SegOutput<'t, T>>,
    y: &LabelMap,
) -> Result<Var<'t, T>> {
    y.validate_binary()?;
    let (_, _, hh, hw) = half.logits.dims4()?;
    let mut terms = vec![supervised_term(full, y)?, supervised_term(half, &y.resize_nearest(hh, hw))?];
    if let Some(f) = fused {
        terms.push(supervised_term(f, y)?);
    }
    Ok(Var::sum_of(&terms)?)
}

/// Each scale is trained on the other's hard predictions:
/// `CE(full, up(argmax half)) + CE(half, down(argmax full))`.
pub fn scale_consistency_loss<'t, T: Elem>(full: &SegOutput<'t, T>, half: &SegOutput<'t, T>) -> Result<Var<'t, T>> {
    let (n1, _, h1, w1) = full.logits.dims4()?;
    let (n2, _, h2, w2) = half.logits.dims4()?;
    if n1 != n2 || h1 != 2 * h2 || w1 != 2 * w2 {
        return Err(Error::Dimension(format!(
            "scale pair {n1}x{h1}x{w1} / {n2}x{h2}x{w2} is not 2:1"
        )));
    }
    let y_full = LabelMap::argmax(&full.probs.value())?;
    let y_half = LabelMap::argmax(&half.probs.value())?;
    let a = full.logits.cross_entropy(&y_half.resize_nearest(h1, w1).data)?;
    let b = half.logits.cross_entropy(&y_full.resize_nearest(h2, w2).data)?;
    Ok(a.add(b)?)
}

/// Sum over pairs of the mean squared difference of probability maps.
pub fn perturbation_consistency_loss<'t, T: Elem>(pairs: &[(&SegOutput<'t, T>, &SegOutput<'t, T>)]) -> Result<Var<'t, T>> {
    if pairs.is_empty() {
        return Err(Error::Config("no output pairs".into()));
    }
    let mut terms = Vec::with_capacity(pairs.len());
    for (u, p) in pairs {
        if u.probs.shape() != p.probs.shape() {
            return Err(Error::Dimension(format!(
                "pair shapes {:?} and {:?} differ",
                u.probs.shape(),
                p.probs.shape()
            )));
        }
        terms.push(u.probs.mse(p.probs)?);
    }
    Ok(Var::sum_of(&terms)?)
}

/// `MSE(g1(z_p), x_u) + MSE(g2(z_u), x_p)`: each generator rebuilds the other view's image.
pub fn cross_generative_loss<'t, T: Elem>(
    s: &mut Session<'t, '_, T>,
    z_u: Var<'t, T>,
    z_p: Var<'t, T>,
    x_u: &ImageBatch,
    x_p: &ImageBatch,
    g1: &Generator,
    g2: &Generator,
) -> Result<Var<'t, T>> {
    let (n, _, h, w) = z_u.dims4()?;
    for (z, x) in [(z_p, x_u), (z_u, x_p)] {
        let (zn, _, zh, zw) = z.dims4()?;
        if (zn, zh, zw) != (n, h, w) || (x.n, x.h, x.w) != (n, h, w) {
            return Err(Error::Dimension(format!(
                "logits {zn}x{zh}x{zw} against image {}x{}x{}",
                x.n, x.h, x.w
            )));
        }
    }
    let tape = s.tape();
    let xu = tape.constant(x_u.to_array());
    let xp = tape.constant(x_p.to_array());
    let rec_u = g1.forward(s, z_p)?;
    let rec_p = g2.forward(s, z_u)?;
    Ok(rec_u.mse(xu)?.add(rec_p.mse(xp)?)?)
}

/// Scalar values of every objective term for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    #[serde(rename = "L_S")]
    pub l_s: f64,
    #[serde(rename = "L_SC_l")]
    pub l_sc_l: f64,
    #[serde(rename = "L_SC_u")]
    pub l_sc_u: f64,
    #[serde(rename = "L_SC_p")]
    pub l_sc_p: f64,
    #[serde(rename = "L_SPC")]
    pub l_spc: f64,
    #[serde(rename = "L_CC")]
    pub l_cc: f64,
    pub total: f64,
}

/// Per-term multipliers; all 1 reproduces the plain sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub sup: f64,
    pub sc: f64,
    pub spc: f64,
    pub cc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { sup: 1.0, sc: 1.0, spc: 1.0, cc: 1.0 }
    }
}

/// The active terms of one step, as graph nodes. Absent terms contribute zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms<'t, T> {
    pub l_s: Option<Var<'t, T>>,
    pub l_sc_l: Option<Var<'t, T>>,
    pub l_sc_u: Option<Var<'t, T>>,
    pub l_sc_p: Option<Var<'t, T>>,
    pub l_spc: Option<Var<'t, T>>,
    pub l_cc: Option<Var<'t, T>>,
}

/// Weighted sum of the active terms and the matching report.
/// Fails if any active term is not finite, naming it.
pub fn total_loss<'t, T: Elem>(terms: &LossTerms<'t, T>, w: &LossWeights) -> Result<(Option<Var<'t, T>>, LossReport)> {
    let named: [(&'static str, Option<Var<'t, T>>, f64); 6] = [
        ("L_S", terms.l_s, w.sup),
        ("L_SC_l", terms.l_sc_l, w.sc),
        ("L_SC_u", terms.l_sc_u, w.sc),
        ("L_SC_p", terms.l_sc_p, w.sc),
        ("L_SPC", terms.l_spc, w.spc),
        ("L_CC", terms.l_cc, w.cc),
    ];
    let mut values = [0.0f64; 6];
    let mut weighted = Vec::new();
    for (i, (name, term, weight)) in named.into_iter().enumerate() {
        if let Some(v) = term {
            let x = Elem::to_f64(v.value().item());
            if !x.is_finite() {
                return Err(Error::NonFinite { term: name, value: x });
            }
            values[i] = x;
            weighted.push(if weight == 1.0 { v } else { v.scale(weight) });
        }
    }
    let [l_s, l_sc_l, l_sc_u, l_sc_p, l_spc, l_cc] = values;
    let total = w.sup * l_s + w.sc * (l_sc_l + l_sc_u + l_sc_p) + w.spc * l_spc + w.cc * l_cc;
    let report = LossReport { l_s, l_sc_l, l_sc_u, l_sc_p, l_spc, l_cc, total };
    let var = if weighted.is_empty() { None } else { Some(Var::sum_of(&weighted)?) };
    Ok((var, report))
}
