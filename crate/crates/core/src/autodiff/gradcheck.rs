//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;

use super::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Default floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub eps: f64,
    /// Check at most this many evenly spaced coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
    /// Gradients smaller than this are compared on an absolute scale, since
    /// central differences cannot resolve them below rounding noise.
    pub floor: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_coords_per_param: None,
            floor: REL_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordError {
    pub param: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub errors: Vec<CoordError>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.errors.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordError> {
        self.errors.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn coords_checked(&self) -> usize {
        self.errors.len()
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh graph and one parameter handle per entry of
/// `params`, and must return a scalar node. It is called once for the
/// analytic pass and twice per checked coordinate.
pub fn finite_diff_check<F>(f: F, params: &[Tensor<f64>], opts: &CheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(g);

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradReport::default();
    for (pi, p) in params.iter().enumerate() {
        let n = p.len();
        let step = match opts.max_coords_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for coord in (0..n).step_by(step) {
            let orig = p.data()[coord];
            work[pi].data_mut()[coord] = orig + opts.eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[coord] = orig - opts.eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[coord] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[pi].data()[coord];
            report.errors.push(CoordError {
                param: pi,
                coord,
                analytic: a,
                numeric,
                rel_err: rel_err(a, numeric, opts.floor),
            });
        }
    }
    Ok(report)
}
