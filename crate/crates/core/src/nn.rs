//! Recurrent, attention and dense layers on top of the autodiff graph.
//!
//! Parameter tensors are grouped into `*Params` structs for initialisation
//! and storage; `*Vars` hold the same parameters bound to a [`Graph`].

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{dim_mismatch, Error, Result};
use crate::tensor::{Real, Tensor};

/// Weights of one GRU level. Input-side matrices are `[input, hidden]`,
/// hidden-side matrices `[hidden, hidden]`, biases `[1, hidden]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams<T> {
    pub w_xz: Tensor<T>,
    pub w_hz: Tensor<T>,
    pub b_z: Tensor<T>,
    pub w_xr: Tensor<T>,
    pub w_hr: Tensor<T>,
    pub b_r: Tensor<T>,
    pub w_xh: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b_h: Tensor<T>,
}

pub const GRU_FIELDS: [&str; 9] = ["w_xz", "w_hz", "b_z", "w_xr", "w_hr", "b_r", "w_xh", "w_hh", "b_h"];

impl<T: Real> GruParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let (x, h, b) = ([input, hidden], [hidden, hidden], [1, hidden]);
        Self {
            w_xz: Tensor::zeros(&x),
            w_hz: Tensor::zeros(&h),
            b_z: Tensor::zeros(&b),
            w_xr: Tensor::zeros(&x),
            w_hr: Tensor::zeros(&h),
            b_r: Tensor::zeros(&b),
            w_xh: Tensor::zeros(&x),
            w_hh: Tensor::zeros(&h),
            b_h: Tensor::zeros(&b),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden);
        for w in [&mut p.w_xz, &mut p.w_xr, &mut p.w_xh] {
            *w = init_glorot(&[input, hidden], rng);
        }
        for w in [&mut p.w_hz, &mut p.w_hr, &mut p.w_hh] {
            *w = init_glorot(&[hidden, hidden], rng);
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_xz.dims()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hz.dims()[0]
    }

    pub fn tensors(&self) -> [&Tensor<T>; 9] {
        [
            &self.w_xz, &self.w_hz, &self.b_z, &self.w_xr, &self.w_hr, &self.b_r, &self.w_xh, &self.w_hh, &self.b_h,
        ]
    }

    pub fn into_tensors(self) -> [Tensor<T>; 9] {
        [
            self.w_xz, self.w_hz, self.b_z, self.w_xr, self.w_hr, self.b_r, self.w_xh, self.w_hh, self.b_h,
        ]
    }

    pub fn bind(&self, g: &mut Graph<T>) -> GruVars {
        let v: Vec<Var> = self.tensors().iter().map(|t| g.param((*t).clone())).collect();
        GruVars::from_slice(&v)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_xz: Var,
    pub w_hz: Var,
    pub b_z: Var,
    pub w_xr: Var,
    pub w_hr: Var,
    pub b_r: Var,
    pub w_xh: Var,
    pub w_hh: Var,
    pub b_h: Var,
}

impl GruVars {
    /// From nine handles in [`GRU_FIELDS`] order.
    pub fn from_slice(v: &[Var]) -> Self {
        Self {
            w_xz: v[0],
            w_hz: v[1],
            b_z: v[2],
            w_xr: v[3],
            w_hr: v[4],
            b_r: v[5],
            w_xh: v[6],
            w_hh: v[7],
            b_h: v[8],
        }
    }
}

fn check_gru<T: Real>(g: &Graph<T>, x: Var, h: Var, p: &GruVars) -> Result<()> {
    let (xd, hd) = (g.dims(x), g.dims(h));
    let (wx, wh) = (g.dims(p.w_xz), g.dims(p.w_hz));
    if xd.len() != 2 || xd[1] != wx[0] || hd != [1, wh[0]] || wh[0] != wh[1] || wx[1] != wh[0] {
        return Err(dim_mismatch("gru", xd, hd));
    }
    Ok(())
}

/// One GRU step with the input projections already applied
/// (`xz = x·W_xz`, `xr = x·W_xr`, `xh = x·W_xh`, each `[1, hidden]`).
fn gru_step<T: Real>(g: &mut Graph<T>, xz: Var, xr: Var, xh: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let hz = g.matmul(h_prev, p.w_hz)?;
    let z = g.add(xz, hz)?;
    let z = g.add(z, p.b_z)?;
    let z = g.sigmoid(z);

    let hr = g.matmul(h_prev, p.w_hr)?;
    let r = g.add(xr, hr)?;
    let r = g.add(r, p.b_r)?;
    let r = g.sigmoid(r);

    let gated = g.mul(r, h_prev)?;
    let hh = g.matmul(gated, p.w_hh)?;
    let cand = g.add(xh, hh)?;
    let cand = g.add(cand, p.b_h)?;
    let cand = g.tanh(cand);

    let keep = g.one_minus(z);
    let keep = g.mul(keep, h_prev)?;
    let update = g.mul(z, cand)?;
    g.add(keep, update)
}

/// `h_t = (1 - z) ⊙ h_prev + z ⊙ tanh(x·W_xh + (r ⊙ h_prev)·W_hh + b_h)` with
/// sigmoid update gate `z` and reset gate `r`. `x: [1, input]`, `h_prev: [1, hidden]`.
pub fn gru_cell<T: Real>(g: &mut Graph<T>, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    check_gru(g, x, h_prev, p)?;
    let xz = g.matmul(x, p.w_xz)?;
    let xr = g.matmul(x, p.w_xr)?;
    let xh = g.matmul(x, p.w_xh)?;
    gru_step(g, xz, xr, xh, h_prev, p)
}

/// Runs the cell over the rows of `xs: [T, input]`; returns every hidden state as `[T, hidden]`.
pub fn gru_sequence<T: Real>(g: &mut Graph<T>, xs: Var, h0: Var, p: &GruVars) -> Result<Var> {
    check_gru(g, xs, h0, p)?;
    let steps = g.dims(xs)[0];
    // input projections for all steps at once
    let xz = g.matmul(xs, p.w_xz)?;
    let xr = g.matmul(xs, p.w_xr)?;
    let xh = g.matmul(xs, p.w_xh)?;
    let mut h = h0;
    let mut states = Vec::with_capacity(steps);
    for t in 0..steps {
        let (a, b, c) = (g.row(xz, t)?, g.row(xr, t)?, g.row(xh, t)?);
        h = gru_step(g, a, b, c, h, p)?;
        states.push(h);
    }
    g.concat(&states, 0)
}

/// Zero initial state `[1, hidden]`.
pub fn zero_state<T: Real>(g: &mut Graph<T>, hidden: usize) -> Var {
    g.constant(Tensor::zeros(&[1, hidden]))
}

/// Temporal attention weights. `w_p: [d, d]` scores the final state against
/// every state; `w_c: [out, 2d]` combines the context vector with the final state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams<T> {
    pub w_p: Tensor<T>,
    pub w_c: Tensor<T>,
}

impl<T: Real> AttentionParams<T> {
    pub fn glorot(width: usize, out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_p: init_glorot(&[width, width], rng),
            w_c: init_glorot(&[out, 2 * width], rng),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>) -> AttentionVars {
        AttentionVars {
            w_p: g.param(self.w_p.clone()),
            w_c: g.param(self.w_c.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_p: Var,
    pub w_c: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// `[1, out]`
    pub output: Var,
    /// `[1, T]`
    pub weights: Var,
    /// Raw scores `[1, T]`.
    pub scores: Var,
    /// Attention-weighted context `[1, d]`.
    pub context: Var,
}

/// Attention over `states: [T, d]` using the last row as the query:
/// `score_t = h_mᵀ W_p h_t`, `α = softmax(score)`, `h_c = Σ α_t h_t`,
/// output `tanh(W_c [h_c ; h_m])`.
pub fn attention<T: Real>(g: &mut Graph<T>, states: Var, p: &AttentionVars) -> Result<AttentionOutput> {
    let sd = g.dims(states).to_vec();
    let (wp, wc) = (g.dims(p.w_p).to_vec(), g.dims(p.w_c).to_vec());
    if sd.len() != 2 || wp != [sd[1], sd[1]] || wc.len() != 2 || wc[1] != 2 * sd[1] {
        return Err(dim_mismatch("attention", &sd, &wc));
    }
    let last = g.row(states, sd[0] - 1)?;
    let proj = g.matmul(last, p.w_p)?;
    let st = g.transpose(states)?;
    let scores = g.matmul(proj, st)?;
    let weights = g.softmax(scores);
    let context = g.matmul(weights, states)?;
    let joined = g.concat(&[context, last], 1)?;
    let wct = g.transpose(p.w_c)?;
    let pre = g.matmul(joined, wct)?;
    let output = g.tanh(pre);
    Ok(AttentionOutput {
        output,
        weights,
        scores,
        context,
    })
}

/// Dense layer `W: [out, in]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> LinearParams<T> {
    pub fn glorot(input: usize, out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: init_glorot(&[out, input], rng),
            b: Tensor::zeros(&[1, out]),
        }
    }
}

/// `x·Wᵀ + b` applied to every row of `x: [N, in]`.
pub fn fully_connected<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let (xd, wd) = (g.dims(x).to_vec(), g.dims(w).to_vec());
    if xd.len() != 2 || wd.len() != 2 || xd[1] != wd[1] || g.value(b).len() != wd[0] {
        return Err(dim_mismatch("fully_connected", &xd, &wd));
    }
    let wt = g.transpose(w)?;
    let y = g.matmul(x, wt)?;
    g.bias_add(y, b)
}

/// Inverted dropout. Identity in evaluation mode or at rate 0.
pub fn dropout<T: Real>(g: &mut Graph<T>, x: Var, rate: f64, rng: &mut impl Rng, training: bool) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::BadRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(g.dims(x), |_| if rng.random::<f64>() < rate { T::zero() } else { keep });
    g.mul_const(x, mask)
}

/// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
///
/// Matrices use their two extents as fans; kernels `[out, in, k...]`
/// multiply both by the receptive-field size.
pub fn init_glorot<T: Real>(dims: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let (fan_in, fan_out) = match dims {
        [n] => (*n, *n),
        [a, b] => (*a, *b),
        [o, i, rest @ ..] => {
            let r: usize = rest.iter().product();
            (i * r, o * r)
        }
        [] => (1, 1),
    };
    let a = num_traits::Float::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(dims, |_| T::from_f64(rng.random_range(-a..=a)))
}

/// Name of GRU parameter `field` under `prefix`.
pub fn gru_name(prefix: &str, field: &str) -> String {
    alloc::format!("{prefix}.{field}")
}
