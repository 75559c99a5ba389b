use decseg::data::ImageBatch;
use decseg::losses::cross_generative_loss;
use decseg::model::{Cfa, Dcf, Generator};
use decseg::nn::{ParamStore, Session};
use decseg::{Array, DecSegNet, ModelConfig, Tape, Var};

use crate::util::noise;

const RTOL: f64 = 1e-3;
const ATOL: f64 = 1e-5;
const EPS: f64 = 1e-6;

/// Compares analytic input gradients of `f` with central differences.
/// `f` sees a fresh training-mode session on every evaluation.
fn gradcheck<F>(store: &mut ParamStore<f64>, inputs: &[Array<f64>], f: F) -> Result<usize, String>
where
    F: for<'t, 's> Fn(&mut Session<'t, 's, f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let analytic: Vec<Array<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
        let loss = {
            let mut s = Session::new(&tape, store, true);
            f(&mut s, &vars)
        };
        let grads = tape.backward(loss).map_err(|e| e.to_string())?;
        vars.iter()
            .zip(inputs)
            .map(|(v, x)| grads.get(*v).cloned().unwrap_or_else(|| Array::zeros(x.shape().to_vec())))
            .collect()
    };
    let mut eval = |xs: &[Array<f64>]| {
        let tape = Tape::no_grad();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let mut s = Session::new(&tape, store, true);
        f(&mut s, &vars).value().item()
    };
    let mut checked = 0;
    for (k, x) in inputs.iter().enumerate() {
        for i in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let a = analytic[k].data()[i];
            ensure!(
                (a - numeric).abs() <= ATOL + RTOL * numeric.abs(),
                "input {k} element {i}: analytic {a:.8e} vs numeric {numeric:.8e}"
            );
            checked += 1;
        }
    }
    let nonzero = analytic.iter().any(|g| g.data().iter().any(|&v| v != 0.0));
    ensure!(nonzero, "all analytic gradients are zero");
    Ok(checked)
}

/// Scalar projection onto fixed weights so every output element matters.
fn project<'t>(y: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let w = y.tape().constant(noise(&y.shape(), seed));
    y.mul(w).unwrap().sum_all()
}

pub fn run() -> Result<String, String> {
    let mut store = ParamStore::<f64>::new(21);
    let cfa = Cfa::new(&mut store, "cfa", 8, 8, 8, 4).unwrap();
    let n_cfa = gradcheck(&mut store, &[noise(&[1, 8, 6, 6], 1), noise(&[1, 8, 3, 3], 2)], |s, v| {
        project(cfa.forward(s, v[0], v[1]).unwrap().output, 100)
    })
    .map_err(|e| format!("CFA: {e}"))?;

    let dcf = Dcf::new(&mut store, "dcf", 4).unwrap();
    let n_dcf = gradcheck(&mut store, &[noise(&[1, 4, 8, 8], 3), noise(&[1, 4, 4, 4], 4)], |s, v| {
        project(dcf.forward(s, v[0], v[1]).unwrap().output, 101)
    })
    .map_err(|e| format!("DCF: {e}"))?;

    let g1 = Generator::new(&mut store, "g1", 2, &[4, 8]).unwrap();
    let g2 = Generator::new(&mut store, "g2", 2, &[4, 8]).unwrap();
    let img = |seed| {
        let a = noise(&[1, 3, 8, 8], seed);
        ImageBatch::new(1, 8, 8, a.data().iter().map(|v| (0.5 + 0.4 * v) as f32).collect()).unwrap()
    };
    let (x_u, x_p) = (img(5), img(6));
    let n_cc = gradcheck(&mut store, &[noise(&[1, 2, 8, 8], 7), noise(&[1, 2, 8, 8], 8)], |s, v| {
        cross_generative_loss(s, v[0], v[1], &x_u, &x_p, &g1, &g2).unwrap()
    })
    .map_err(|e| format!("L_CC: {e}"))?;

    df_receives_cc_gradient()?;
    Ok(format!("{} input elements checked (CFA {n_cfa}, DCF {n_dcf}, L_CC {n_cc})", n_cfa + n_dcf + n_cc))
}

/// L_CC computed on the fused decoder's logits reaches the fused decoder's parameters.
fn df_receives_cc_gradient() -> Result<(), String> {
    let mut store = ParamStore::<f64>::new(4);
    let net = DecSegNet::new(&ModelConfig::default(), &mut store).unwrap();
    let (g1, g2) = net.generators().unwrap();
    let img = |seed| {
        let a = noise(&[2, 3, 32, 32], seed);
        ImageBatch::new(2, 32, 32, a.data().iter().map(|v| (0.5 + 0.4 * v) as f32).collect()).unwrap()
    };
    let (x_u, x_p) = (img(1), img(2));
    let tape = Tape::new();
    let mut s = Session::new(&tape, &mut store, true);
    let out_u = net.forward(&mut s, tape.constant(x_u.to_array())).unwrap();
    let out_p = net.forward(&mut s, tape.constant(x_p.to_array())).unwrap();
    let (zu, zp) = (out_u.fused.unwrap().logits, out_p.fused.unwrap().logits);
    let loss = cross_generative_loss(&mut s, zu, zp, &x_u, &x_p, g1, g2).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    let pg = s.param_grads(&mut grads);
    let df_norm: f64 = pg
        .iter()
        .filter(|(id, _)| s.store().name(*id).starts_with("df."))
        .flat_map(|(_, g)| g.data().iter().map(|v| v * v))
        .sum();
    ensure!(df_norm > 0.0, "no L_CC gradient reaches the fused decoder");
    Ok(())
}
