//! Finite-difference gradient suite over every differentiable op, the
//! recurrent and attention layers, camera aggregation and both full models.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::gradcheck::{finite_diff_check, CheckOptions};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::features::{Feature, FeatureSet, Sample};
use crate::model::{build_model_as, forward_graph, BoundParams, ModelConfig, Variant};
use crate::nn::{self, AttentionVars, GruParams, GruVars};
use crate::rng::{seeded, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
}

fn random(rng: &mut Rng, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

/// Sample with every feature filled with uniform noise at raw extents.
pub fn random_sample(config: &ModelConfig, seed: u64) -> Sample {
    let mut rng = seeded(seed);
    let mut s = Sample {
        sentinel: rng.random_range(0..config.cameras),
        label: rng.random_range(0..2),
        ..Sample::default()
    };
    for f in Feature::ALL {
        let mut dims = config.input_dims(f);
        if !f.is_kinematic() {
            let side = if matches!(f, Feature::LocalContent | Feature::LocalMotion) {
                config.crop_side
            } else {
                config.raster
            };
            dims[2] = side;
            dims[3] = side;
        }
        let scale = if f == Feature::Speed { 60.0 } else { 1.0 };
        *s.slot(f) = Some(Tensor::from_fn(&dims, |_| scale * rng.random_range(0.0..1.0f32)));
    }
    s
}

/// Weighted sum with fixed, non-uniform weights so every element matters.
fn wsum(g: &mut Graph<f64>, x: Var) -> Result<Var> {
    let w = Tensor::from_fn(g.dims(x), |i| 0.3 + (i as f64 * 0.37).sin());
    let y = g.mul_const(x, w)?;
    Ok(g.sum_all(y))
}

fn run(
    out: &mut Vec<SuiteEntry>,
    name: &str,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    params: &[Tensor<f64>],
    opts: &CheckOptions,
) -> Result<()> {
    let r = finite_diff_check(f, params, opts)?;
    out.push(SuiteEntry {
        name: String::from(name),
        max_rel_err: r.max_rel_err(),
        coords: r.coords_checked(),
    });
    Ok(())
}

/// Options used for the full-model checks: a larger step and error floor
/// keep float rounding in long chains and max-pool kinks out of the ratio.
pub const MODEL_CHECK: CheckOptions = CheckOptions {
    eps: 1e-5,
    max_coords_per_param: Some(24),
    floor: 1e-6,
};

pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = seeded(seed);
    let o = CheckOptions::default();
    let mut out = Vec::new();
    let a = random(&mut rng, &[2, 3]);
    let b = random(&mut rng, &[3, 2]);
    let c = random(&mut rng, &[2, 3]);
    let x = random(&mut rng, &[2, 3, 4, 3]);
    let k = random(&mut rng, &[2, 2, 2, 3, 2]);

    run(
        &mut out,
        "matmul",
        |g, p| {
            let y = g.matmul(p[0], p[1])?;
            wsum(g, y)
        },
        &[a.clone(), b.clone()],
        &o,
    )?;
    run(
        &mut out,
        "add",
        |g, p| {
            let y = g.add(p[0], p[1])?;
            wsum(g, y)
        },
        &[a.clone(), c.clone()],
        &o,
    )?;
    run(
        &mut out,
        "sub",
        |g, p| {
            let y = g.sub(p[0], p[1])?;
            wsum(g, y)
        },
        &[a.clone(), c.clone()],
        &o,
    )?;
    run(
        &mut out,
        "mul",
        |g, p| {
            let y = g.mul(p[0], p[1])?;
            wsum(g, y)
        },
        &[a.clone(), c.clone()],
        &o,
    )?;
    run(
        &mut out,
        "affine",
        |g, p| {
            let y = g.affine(p[0], -1.7, 0.3);
            wsum(g, y)
        },
        core::slice::from_ref(&a),
        &o,
    )?;
    run(
        &mut out,
        "sigmoid",
        |g, p| {
            let y = g.sigmoid(p[0]);
            wsum(g, y)
        },
        core::slice::from_ref(&a),
        &o,
    )?;
    run(
        &mut out,
        "tanh",
        |g, p| {
            let y = g.tanh(p[0]);
            wsum(g, y)
        },
        core::slice::from_ref(&a),
        &o,
    )?;
    run(
        &mut out,
        "softmax",
        |g, p| {
            let y = g.softmax(p[0]);
            wsum(g, y)
        },
        core::slice::from_ref(&a),
        &o,
    )?;
    run(
        &mut out,
        "concat",
        |g, p| {
            let y = g.concat(&[p[0], p[1]], 1)?;
            wsum(g, y)
        },
        &[a.clone(), c.clone()],
        &o,
    )?;
    run(
        &mut out,
        "transpose",
        |g, p| {
            let y = g.transpose(p[0])?;
            wsum(g, y)
        },
        core::slice::from_ref(&a),
        &o,
    )?;
    run(
        &mut out,
        "narrow",
        |g, p| {
            let y = g.narrow(p[0], 1, 1, 2)?;
            wsum(g, y)
        },
        core::slice::from_ref(&a),
        &o,
    )?;
    run(
        &mut out,
        "reshape",
        |g, p| {
            let y = g.reshape(p[0], &[3, 2])?;
            wsum(g, y)
        },
        core::slice::from_ref(&a),
        &o,
    )?;
    run(
        &mut out,
        "permute",
        |g, p| {
            let y = g.permute(p[0], &[1, 0, 3, 2])?;
            wsum(g, y)
        },
        core::slice::from_ref(&x),
        &o,
    )?;
    run(
        &mut out,
        "sum_squares",
        |g, p| g.sum_squares(p[0]),
        core::slice::from_ref(&a),
        &o,
    )?;
    run(
        &mut out,
        "bce",
        |g, p| {
            let s = g.sigmoid(p[0]);
            let s = g.narrow(s, 1, 0, 1)?;
            let s = g.narrow(s, 0, 1, 1)?;
            g.bce(s, 1.0)
        },
        core::slice::from_ref(&a),
        &o,
    )?;
    run(
        &mut out,
        "conv3d",
        |g, p| {
            let y = g.conv3d(p[0], p[1], [1, 1, 1], [1, 0, 1])?;
            wsum(g, y)
        },
        &[x.clone(), k.clone()],
        &o,
    )?;
    let bias = random(&mut rng, &[2]);
    run(
        &mut out,
        "channel_bias",
        |g, p| {
            let y = g.channel_bias(p[0], p[1])?;
            wsum(g, y)
        },
        &[x.clone(), bias],
        &o,
    )?;
    let rb = random(&mut rng, &[1, 3]);
    run(
        &mut out,
        "bias_add",
        |g, p| {
            let y = g.bias_add(p[0], p[1])?;
            wsum(g, y)
        },
        &[a.clone(), rb],
        &o,
    )?;
    run(
        &mut out,
        "maxpool3d",
        |g, p| {
            let y = g.maxpool3d(p[0], [1, 2, 2], [1, 2, 1])?;
            wsum(g, y)
        },
        core::slice::from_ref(&x),
        &o,
    )?;
    run(
        &mut out,
        "avgpool3d",
        |g, p| {
            let y = g.avgpool3d(p[0], [2, 2, 1], [1, 2, 1])?;
            wsum(g, y)
        },
        core::slice::from_ref(&x),
        &o,
    )?;
    let pw = random(&mut rng, &[3, 2]);
    run(
        &mut out,
        "pointwise_conv",
        |g, p| {
            let y = g.pointwise_conv(p[0], p[1])?;
            wsum(g, y)
        },
        &[x.clone(), pw],
        &o,
    )?;

    let gru: [Tensor<f64>; 9] = GruParams::glorot(2, 3, &mut rng).into_tensors();
    let mut gp: Vec<Tensor<f64>> = gru.into();
    gp.push(random(&mut rng, &[4, 2]));
    run(
        &mut out,
        "gru_sequence",
        |g, v| {
            let vars = GruVars::from_slice(&v[..9]);
            let h0 = nn::zero_state(g, 3);
            let hs = nn::gru_sequence(g, v[9], h0, &vars)?;
            wsum(g, hs)
        },
        &gp,
        &o,
    )?;
    let att = [
        random(&mut rng, &[4, 3]),
        random(&mut rng, &[3, 3]),
        random(&mut rng, &[2, 6]),
    ];
    run(
        &mut out,
        "attention",
        |g, v| {
            let r = nn::attention(g, v[0], &AttentionVars { w_p: v[1], w_c: v[2] })?;
            wsum(g, r.output)
        },
        &att,
        &o,
    )?;
    let fc = [
        random(&mut rng, &[2, 3]),
        random(&mut rng, &[4, 3]),
        random(&mut rng, &[1, 4]),
    ];
    run(
        &mut out,
        "fully_connected",
        |g, v| {
            let y = nn::fully_connected(g, v[0], v[1], v[2])?;
            wsum(g, y)
        },
        &fc,
        &o,
    )?;
    let feats = random(&mut rng, &[6, 2, 3, 3]);
    let mask = crate::multicam::padding_mask_seq::<f64>(3, 1, &[2, 3, 3])?;
    let agg = random(&mut rng, &[2, 9]);
    run(
        &mut out,
        "aggregate",
        |g, v| {
            let m = g.constant(mask.clone());
            let y = crate::multicam::aggregate(g, v[0], m, v[1])?;
            wsum(g, y)
        },
        &[feats, agg],
        &o,
    )?;

    for (name, variant) in [("model_alpha", Variant::Alpha), ("model_beta", Variant::Beta)] {
        let config = ModelConfig {
            features: FeatureSet::ALL,
            ..ModelConfig::tiny(variant)
        };
        let params = build_model_as::<f64>(&config, seed)?;
        let sample = random_sample(&config, seed + 1);
        let label = sample.label as f64;
        run(
            &mut out,
            name,
            |g, vars| {
                let bound = BoundParams::from_vars(&params, vars);
                let o = forward_graph(g, &bound, &sample, &config, true, &mut seeded(seed))?;
                g.bce(o.prob, label)
            },
            &params.to_vec(),
            &MODEL_CHECK,
        )?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_ops_layers_and_models() {
        let entries = gradient_suite(5).unwrap();
        assert_eq!(entries.len(), 27);
        for e in &entries {
            assert!(e.max_rel_err < 1e-4, "{e:?}");
            assert!(e.coords > 0);
        }
        assert!(entries.iter().any(|e| e.name == "model_beta"));
    }
}
