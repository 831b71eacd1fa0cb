//! Central finite-difference verification of analytic gradients (64-bit).

use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::params::{keyed_rng, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    /// Central difference step.
    pub eps: f64,
    /// Absolute floor of the relative-error denominator.
    pub floor: f64,
    /// Entries probed per tensor (all entries if the tensor is smaller).
    pub samples: usize,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            eps: 1e-3,
            floor: 1e-6,
            samples: 12,
            seed: 0,
        }
    }
}

/// Largest relative discrepancy found for one tensor.
#[derive(Clone, Debug)]
pub struct FdResult {
    pub name: String,
    pub max_rel_err: f64,
    pub probed: usize,
    /// Probes whose `±eps` step crossed a kink of the unpinned function.
    pub crossed: usize,
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn probe_indices(len: usize, opts: &FdOptions, key: &str) -> Vec<usize> {
    if len <= opts.samples {
        return (0..len).collect();
    }
    let mut idx = sample(&mut keyed_rng(opts.seed, key), len, opts.samples).into_vec();
    idx.sort_unstable();
    idx
}

/// Central differences for sampled entries. `eval` returns the shifted
/// loss and whether the shift crossed a kink.
fn probe_tensor(
    name: String,
    analytic: &Tensor<f64>,
    opts: &FdOptions,
    mut eval: impl FnMut(usize, f64) -> Result<(f64, bool)>,
) -> Result<FdResult> {
    let mut res = FdResult {
        name,
        max_rel_err: 0.0,
        probed: 0,
        crossed: 0,
    };
    for j in probe_indices(analytic.len(), opts, &res.name) {
        let (plus, cp) = eval(j, opts.eps)?;
        let (minus, cm) = eval(j, -opts.eps)?;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        res.max_rel_err = res.max_rel_err.max(rel_err(analytic.data()[j], numeric, opts.floor));
        res.probed += 1;
        res.crossed += (cp || cm) as usize;
    }
    Ok(res)
}

fn scalar_of(g: &Graph<'_, f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::usage("finite-difference target must be scalar"));
    }
    Ok(t.item())
}

/// Checks the gradient of `f(inputs)` with respect to every input tensor.
///
/// Shifted evaluations replay the kink sides of the unshifted one, so the
/// difference quotient is taken on the smooth piece whose gradient
/// backpropagation computes.
pub fn check_inputs<'p, F>(name: &str, inputs: &[Tensor<f64>], f: F, opts: &FdOptions) -> Result<Vec<FdResult>>
where
    F: Fn(&mut Graph<'p, f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    g.record_branches();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let sides = g.take_branches().unwrap_or_default();
    let mut results = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        let res = probe_tensor(format!("{name}.{i}"), &analytic, opts, |j, delta| {
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[j] += delta;
            let mut g = Graph::new();
            g.replay_branches(sides.clone());
            let vs: Vec<Var> = shifted.into_iter().map(|t| g.constant(t)).collect();
            let o = f(&mut g, &vs)?;
            Ok((scalar_of(&g, o)?, g.branches_diverged()))
        })?;
        results.push(res);
    }
    Ok(results)
}

/// Checks the gradient of `f` with respect to every tensor of `store`.
pub fn check_params<F>(store: &ParamStore<f64>, f: F, opts: &FdOptions) -> Result<Vec<FdResult>>
where
    F: for<'p> Fn(&mut Graph<'p, f64>) -> Result<Var>,
{
    check_params_with(store, &[], f, opts)
}

/// Like [`check_params`], with `frozen` stores bound as constants on every
/// evaluation.
pub fn check_params_with<F>(
    store: &ParamStore<f64>,
    frozen: &[&ParamStore<f64>],
    f: F,
    opts: &FdOptions,
) -> Result<Vec<FdResult>>
where
    F: for<'p> Fn(&mut Graph<'p, f64>) -> Result<Var>,
{
    let (analytic, sides) = {
        let mut g = Graph::new();
        g.record_branches();
        g.bind(store, true);
        for s in frozen {
            g.bind(s, false);
        }
        let out = f(&mut g)?;
        let grads = g.backward(out)?;
        let mut acc = store.zeros_like();
        grads.accumulate(store, &mut acc, 1.0);
        (acc, g.take_branches().unwrap_or_default())
    };
    let mut results = Vec::new();
    let mut work = store.clone();
    for id in store.ids() {
        let res = probe_tensor(store.name(id).to_string(), &analytic[id.index()], opts, |j, delta| {
            let orig = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + delta;
            let mut g = Graph::new();
            g.replay_branches(sides.clone());
            g.bind(&work, false);
            for s in frozen {
                g.bind(s, false);
            }
            let o = f(&mut g);
            let crossed = g.branches_diverged();
            let v = o.and_then(|o| scalar_of(&g, o));
            drop(g);
            work.get_mut(id).data_mut()[j] = orig;
            Ok((v?, crossed))
        })?;
        results.push(res);
    }
    Ok(results)
}

pub fn worst(results: &[FdResult]) -> f64 {
    results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
}
