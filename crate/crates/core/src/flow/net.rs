//! One-hidden-layer conditioner: SwiGLU, layer normalization, dropout,
//! linear head. Parameters live in one flat vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spline::{identity_raw, N_PARAMS};

pub const HIDDEN: usize = 128;
pub const DROPOUT: f64 = 0.1;
const LN_EPS: f64 = 1e-5;

/// Parameter groups, in storage order.
pub const GROUPS: [&str; 8] = ["w1", "b1", "v1", "e1", "gamma", "beta", "w2", "b2"];

/// Offsets of each group in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "usize", into = "usize")]
pub struct Layout {
    pub inputs: usize,
    offsets: [usize; 9],
}

impl From<usize> for Layout {
    fn from(inputs: usize) -> Self {
        Self::new(inputs)
    }
}

impl From<Layout> for usize {
    fn from(l: Layout) -> usize {
        l.inputs
    }
}

impl Layout {
    pub fn new(inputs: usize) -> Self {
        let sizes = [
            HIDDEN * inputs,
            HIDDEN,
            HIDDEN * inputs,
            HIDDEN,
            HIDDEN,
            HIDDEN,
            N_PARAMS * HIDDEN,
            N_PARAMS,
        ];
        let mut offsets = [0; 9];
        for (i, s) in sizes.iter().enumerate() {
            offsets[i + 1] = offsets[i] + s;
        }
        Self { inputs, offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets[8]
    }

    pub fn group(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    /// Whether decoupled weight decay applies (weight matrices only).
    pub fn decays(&self, g: usize) -> bool {
        matches!(GROUPS[g], "w1" | "v1" | "w2")
    }

    /// Random hidden layer, zero head with identity biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.len()];
        let bound = 1.0 / (self.inputs as f64).sqrt();
        for g in [0, 2] {
            p[self.group(g)].iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        }
        for g in [1, 3] {
            p[self.group(g)].iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        }
        p[self.group(4)].iter_mut().for_each(|w| *w = 1.0);
        p[self.group(7)].copy_from_slice(&identity_raw());
        p
    }
}

/// Per-row activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    h: [f64; HIDDEN],
    g: [f64; HIDDEN],
    sig: [f64; HIDDEN],
    norm: [f64; HIDDEN],
    inv_std: f64,
    act: [f64; HIDDEN],
    pub out: [f64; N_PARAMS],
}

impl Default for Cache {
    fn default() -> Self {
        Self {
            h: [0.0; HIDDEN],
            g: [0.0; HIDDEN],
            sig: [0.0; HIDDEN],
            norm: [0.0; HIDDEN],
            inv_std: 0.0,
            act: [0.0; HIDDEN],
            out: [0.0; N_PARAMS],
        }
    }
}

/// Inverted dropout mask: each unit is 0 or `1 / (1 - DROPOUT)`.
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, mask: &mut [f64; HIDDEN]) {
    let keep = 1.0 / (1.0 - DROPOUT);
    mask.iter_mut()
        .for_each(|m| *m = if rng.random::<f64>() < DROPOUT { 0.0 } else { keep });
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn forward(layout: &Layout, params: &[f64], c: &[f64], mask: Option<&[f64; HIDDEN]>, cache: &mut Cache) {
    let p = layout.inputs;
    let w1 = &params[layout.group(0)];
    let b1 = &params[layout.group(1)];
    let v1 = &params[layout.group(2)];
    let e1 = &params[layout.group(3)];
    let gamma = &params[layout.group(4)];
    let beta = &params[layout.group(5)];
    let w2 = &params[layout.group(6)];
    let b2 = &params[layout.group(7)];

    let mut s = [0.0; HIDDEN];
    for j in 0..HIDDEN {
        let h = dot(&w1[j * p..(j + 1) * p], c) + b1[j];
        let g = dot(&v1[j * p..(j + 1) * p], c) + e1[j];
        let sig = 1.0 / (1.0 + (-h).exp());
        cache.h[j] = h;
        cache.g[j] = g;
        cache.sig[j] = sig;
        s[j] = h * sig * g;
    }
    let mean = s.iter().sum::<f64>() / HIDDEN as f64;
    let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / HIDDEN as f64;
    cache.inv_std = 1.0 / (var + LN_EPS).sqrt();
    for j in 0..HIDDEN {
        cache.norm[j] = (s[j] - mean) * cache.inv_std;
        let a = gamma[j] * cache.norm[j] + beta[j];
        cache.act[j] = match mask {
            Some(m) => a * m[j],
            None => a,
        };
    }
    for k in 0..N_PARAMS {
        cache.out[k] = dot(&w2[k * HIDDEN..(k + 1) * HIDDEN], &cache.act) + b2[k];
    }
}

/// Accumulates d loss / d params into `grad` given d loss / d outputs.
pub fn backward(
    layout: &Layout,
    params: &[f64],
    c: &[f64],
    mask: Option<&[f64; HIDDEN]>,
    cache: &Cache,
    dout: &[f64; N_PARAMS],
    grad: &mut [f64],
) {
    let p = layout.inputs;
    let gamma = &params[layout.group(4)];
    let w2 = &params[layout.group(6)];

    let mut dact = [0.0; HIDDEN];
    {
        let (r6, r7) = (layout.group(6), layout.group(7));
        for k in 0..N_PARAMS {
            let dk = dout[k];
            if dk == 0.0 {
                continue;
            }
            grad[r7.start + k] += dk;
            let row = &mut grad[r6.start + k * HIDDEN..r6.start + (k + 1) * HIDDEN];
            row.iter_mut().zip(&cache.act).for_each(|(g, a)| *g += dk * a);
            dact.iter_mut()
                .zip(&w2[k * HIDDEN..(k + 1) * HIDDEN])
                .for_each(|(d, w)| *d += dk * w);
        }
    }
    if let Some(m) = mask {
        dact.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
    }
    let (r4, r5) = (layout.group(4), layout.group(5));
    let mut dnorm = [0.0; HIDDEN];
    for j in 0..HIDDEN {
        grad[r4.start + j] += dact[j] * cache.norm[j];
        grad[r5.start + j] += dact[j];
        dnorm[j] = dact[j] * gamma[j];
    }
    let mean_d = dnorm.iter().sum::<f64>() / HIDDEN as f64;
    let mean_dn = dot(&dnorm, &cache.norm) / HIDDEN as f64;
    let (r0, r1, r2, r3) = (layout.group(0), layout.group(1), layout.group(2), layout.group(3));
    for j in 0..HIDDEN {
        let ds = cache.inv_std * (dnorm[j] - mean_d - cache.norm[j] * mean_dn);
        let (h, sig, g) = (cache.h[j], cache.sig[j], cache.g[j]);
        let dh = ds * g * sig * (1.0 + h * (1.0 - sig));
        let dg = ds * h * sig;
        grad[r1.start + j] += dh;
        grad[r3.start + j] += dg;
        let w = &mut grad[r0.start + j * p..r0.start + (j + 1) * p];
        w.iter_mut().zip(c).for_each(|(g, x)| *g += dh * x);
        let v = &mut grad[r2.start + j * p..r2.start + (j + 1) * p];
        v.iter_mut().zip(c).for_each(|(g, x)| *g += dg * x);
    }
}
