//! Helpers shared by the integration tests.
#![allow(dead_code)]

use sap_core::code::ParityCheckMatrix;
use sap_core::decoder::{
    bce_loss, bce_loss_grad, flip_targets, tokenize, CodeLayout, DecoderModel, Gates, Weights,
};

pub const FD_STEP: f64 = 1e-4;

/// Mean BCE of `model` over frames `ys` (all-zero codeword targets).
pub fn batch_loss(
    model: &DecoderModel,
    layout: &CodeLayout,
    gates: &Gates,
    ys: &[Vec<f64>],
) -> f64 {
    ys.iter()
        .map(|y| {
            let tokens = tokenize(&layout.pcm, y).unwrap();
            let (logits, _) = model.forward_with_gates(layout, &tokens, gates).unwrap();
            bce_loss(&logits, &flip_targets(y))
        })
        .sum::<f64>()
        / ys.len() as f64
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn small_pcm() -> ParityCheckMatrix {
    ParityCheckMatrix::from_rows(&[[1u8, 1, 0, 1], [0, 1, 1, 1]]).unwrap()
}

/// Channel outputs with a mix of flipped and unflipped signs.
pub fn small_frames() -> Vec<Vec<f64>> {
    vec![
        vec![0.8, -0.3, 1.4, 0.2],
        vec![-0.6, 1.1, 0.05, -1.3],
        vec![1.7, 0.9, -0.4, 0.6],
    ]
}

/// Mean reverse-mode gradients over `ys`.
pub fn analytic(
    model: &DecoderModel,
    layout: &CodeLayout,
    gates: &Gates,
    ys: &[Vec<f64>],
) -> (Weights, Gates) {
    let mut gw = model.weights.zeros_like();
    let mut gg = Gates::zeros(&model.shapes());
    for y in ys {
        let tokens = tokenize(&layout.pcm, y).unwrap();
        let (logits, cache) = model.forward_with_gates(layout, &tokens, gates).unwrap();
        let (_, dl) = bce_loss_grad(&logits, &flip_targets(y));
        let (w, g) = model.backward(layout, gates, &cache, &dl).unwrap();
        gw.add_assign(&w);
        gg.add_assign(&g);
    }
    gw.scale(1.0 / ys.len() as f64);
    for v in gg.head.iter_mut().chain(gg.ffn.iter_mut()).flatten() {
        *v /= ys.len() as f64;
    }
    (gw, gg)
}

/// Largest relative error between analytic weight gradients and central
/// differences, with a description of where it occurred.
pub fn worst_weight_error(
    model: &DecoderModel,
    layout: &CodeLayout,
    ys: &[Vec<f64>],
) -> (f64, String) {
    let gates = model.gates();
    let (grad, _) = analytic(model, layout, &gates, ys);
    let mut worst = (0.0, String::new());
    let mut probe = model.clone();
    for (ti, (name, g)) in grad.tensors().into_iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            let orig = probe.weights.tensors()[ti].1[j];
            probe.weights.tensors_mut()[ti].1[j] = orig + FD_STEP;
            let up = batch_loss(&probe, layout, &gates, ys);
            probe.weights.tensors_mut()[ti].1[j] = orig - FD_STEP;
            let down = batch_loss(&probe, layout, &gates, ys);
            probe.weights.tensors_mut()[ti].1[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(a, numeric, 1e-6);
            if e > worst.0 {
                worst = (e, format!("{name}[{j}] analytic {a} numeric {numeric}"));
            }
        }
    }
    worst
}

/// Same as [`worst_weight_error`] for the head and FFN gates.
pub fn worst_gate_error(
    model: &DecoderModel,
    layout: &CodeLayout,
    ys: &[Vec<f64>],
) -> (f64, String) {
    let gates = model.gates();
    let (_, gg) = analytic(model, layout, &gates, ys);
    let mut worst = (0.0, String::new());
    let mut check = |analytic: f64, set: &dyn Fn(&mut Gates, f64), what: String| {
        let mut g = gates.clone();
        set(&mut g, 1.0 + FD_STEP);
        let up = batch_loss(model, layout, &g, ys);
        set(&mut g, 1.0 - FD_STEP);
        let down = batch_loss(model, layout, &g, ys);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let e = rel_err(analytic, numeric, 1e-6);
        if e > worst.0 {
            worst = (e, format!("{what} analytic {analytic} numeric {numeric}"));
        }
    };
    for l in 0..gg.head.len() {
        for h in 0..gg.head[l].len() {
            check(
                gg.head[l][h],
                &|g, v| g.head[l][h] = v,
                format!("head[{l}][{h}]"),
            );
        }
        for c in 0..gg.ffn[l].len() {
            check(
                gg.ffn[l][c],
                &|g, v| g.ffn[l][c] = v,
                format!("ffn[{l}][{c}]"),
            );
        }
    }
    worst
}
