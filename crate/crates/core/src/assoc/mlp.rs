//! Residual MLP over fused pair features, with hand-written backprop.
//!
//! Layout: `input -> hidden` dense + ReLU, two residual blocks
//! `h + relu(W h + b)`, then a `hidden -> 1` logit. Dropout (inverted) is
//! applied to the first hidden activation and to each residual branch.

use rand::Rng;

use crate::error::{Error, Result};

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub input: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn new(input: usize, hidden: usize) -> Self {
        Layout { input, hidden }
    }

    pub fn w1(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.input
    }
    pub fn b1(&self) -> std::ops::Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }
    pub fn w2(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        s..s + self.hidden * self.hidden
    }
    pub fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + self.hidden
    }
    pub fn w3(&self) -> std::ops::Range<usize> {
        let s = self.b2().end;
        s..s + self.hidden * self.hidden
    }
    pub fn b3(&self) -> std::ops::Range<usize> {
        let s = self.w3().end;
        s..s + self.hidden
    }
    pub fn w4(&self) -> std::ops::Range<usize> {
        let s = self.b3().end;
        s..s + self.hidden
    }
    pub fn b4(&self) -> usize {
        self.w4().end
    }
    pub fn len(&self) -> usize {
        self.b4() + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per-unit dropout multipliers for one forward pass (0 or 1/(1-p)).
#[derive(Clone, Debug)]
pub struct Masks {
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub m3: Vec<f64>,
}

impl Masks {
    pub fn sample(hidden: usize, rate: f64, rng: &mut impl Rng) -> Self {
        let keep = 1.0 - rate;
        let mut draw = || -> Vec<f64> {
            (0..hidden)
                .map(|_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        Masks {
            m1: draw(),
            m2: draw(),
            m3: draw(),
        }
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    z3: Vec<f64>,
    h3: Vec<f64>,
    pub logit: f64,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, computed stably.
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let row = &w[r * n_in..(r + 1) * n_in];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub fn forward(params: &[f64], layout: Layout, x: &[f64], masks: Option<&Masks>) -> Trace {
    let p = params;
    let z1 = affine(&p[layout.w1()], &p[layout.b1()], x);
    let mut h1: Vec<f64> = z1.iter().map(|&z| relu(z)).collect();
    if let Some(m) = masks {
        h1.iter_mut().zip(&m.m1).for_each(|(h, k)| *h *= k);
    }
    let z2 = affine(&p[layout.w2()], &p[layout.b2()], &h1);
    let h2: Vec<f64> = (0..layout.hidden)
        .map(|i| h1[i] + relu(z2[i]) * masks.map_or(1.0, |m| m.m2[i]))
        .collect();
    let z3 = affine(&p[layout.w3()], &p[layout.b3()], &h2);
    let h3: Vec<f64> = (0..layout.hidden)
        .map(|i| h2[i] + relu(z3[i]) * masks.map_or(1.0, |m| m.m3[i]))
        .collect();
    let logit = p[layout.b4()]
        + p[layout.w4()]
            .iter()
            .zip(&h3)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    Trace {
        z1,
        h1,
        z2,
        h2,
        z3,
        h3,
        logit,
    }
}

/// Accumulates `scale * dLoss/dparams` into `grad` given dLoss/dlogit.
pub fn backward(
    params: &[f64],
    layout: Layout,
    x: &[f64],
    trace: &Trace,
    masks: Option<&Masks>,
    dlogit: f64,
    grad: &mut [f64],
) {
    let h = layout.hidden;
    let n_in = layout.input;
    let w2 = &params[layout.w2()];
    let w3 = &params[layout.w3()];
    let w4 = &params[layout.w4()];

    grad[layout.b4()] += dlogit;
    let gw4 = layout.w4();
    for i in 0..h {
        grad[gw4.start + i] += dlogit * trace.h3[i];
    }
    let g_h3: Vec<f64> = w4.iter().map(|w| w * dlogit).collect();

    // block 3: h3 = h2 + m3 * relu(z3)
    let g_z3: Vec<f64> = (0..h)
        .map(|i| {
            if trace.z3[i] > 0.0 {
                g_h3[i] * masks.map_or(1.0, |m| m.m3[i])
            } else {
                0.0
            }
        })
        .collect();
    let mut g_h2 = g_h3.clone();
    let (w3r, b3r) = (layout.w3(), layout.b3());
    for r in 0..h {
        let g = g_z3[r];
        if g == 0.0 {
            continue;
        }
        grad[b3r.start + r] += g;
        let row = r * h;
        for c in 0..h {
            grad[w3r.start + row + c] += g * trace.h2[c];
            g_h2[c] += g * w3[row + c];
        }
    }

    // block 2: h2 = h1 + m2 * relu(z2)
    let g_z2: Vec<f64> = (0..h)
        .map(|i| {
            if trace.z2[i] > 0.0 {
                g_h2[i] * masks.map_or(1.0, |m| m.m2[i])
            } else {
                0.0
            }
        })
        .collect();
    let mut g_h1 = g_h2.clone();
    let (w2r, b2r) = (layout.w2(), layout.b2());
    for r in 0..h {
        let g = g_z2[r];
        if g == 0.0 {
            continue;
        }
        grad[b2r.start + r] += g;
        let row = r * h;
        for c in 0..h {
            grad[w2r.start + row + c] += g * trace.h1[c];
            g_h1[c] += g * w2[row + c];
        }
    }

    // input layer: h1 = m1 * relu(z1)
    let (w1r, b1r) = (layout.w1(), layout.b1());
    for r in 0..h {
        if trace.z1[r] <= 0.0 {
            continue;
        }
        let g = g_h1[r] * masks.map_or(1.0, |m| m.m1[r]);
        if g == 0.0 {
            continue;
        }
        grad[b1r.start + r] += g;
        let row = r * n_in;
        for c in 0..n_in {
            grad[w1r.start + row + c] += g * x[c];
        }
    }
}

/// Mean BCE loss and its gradient over a batch.
pub fn batch_loss_and_grad(
    params: &[f64],
    layout: Layout,
    batch: &[(&[f64], f64)],
    masks: Option<&[Masks]>,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; layout.len()];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (n, &(x, y)) in batch.iter().enumerate() {
        if x.len() != layout.input {
            return Err(Error::DimensionMismatch {
                expected: layout.input,
                got: x.len(),
            });
        }
        let m = masks.map(|ms| &ms[n]);
        let trace = forward(params, layout, x, m);
        loss += bce_with_logit(trace.logit, y);
        let dlogit = (sigmoid(trace.logit) - y) * scale;
        backward(params, layout, x, &trace, m, dlogit, &mut grad);
    }
    Ok((loss * scale, grad))
}
