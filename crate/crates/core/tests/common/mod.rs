#![allow(dead_code)]

use s2daft_core::params::{Binding, ParamStore};
use s2daft_core::rng;
use s2daft_core::{Graph, Result, Tensor, Var};

pub const H: f64 = 1e-5;
/// Below this magnitude a gradient tensor is compared absolutely.
pub const FLOOR: f64 = 1e-5;

/// Relative error between two gradient tensors, measured in max-norm.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale < FLOOR {
        diff / FLOOR
    } else {
        diff / scale
    }
}

/// Indices to probe: every element of small tensors, an even spread of
/// `limit` elements otherwise.
pub fn probe_indices(len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        (0..limit).map(|i| i * len / limit + (i * 7919) % (len / limit).max(1)).collect()
    }
}

/// Worst relative error over all inputs of `f`, which must reduce to a
/// scalar. Returns the error and a label of the worst input.
pub fn check_inputs(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> (f64, usize) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let l = f(&mut g, &vs).unwrap();
        g.value(l).item()
    };
    let mut worst = (0.0, 0);
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
        let idx = probe_indices(t.len(), 64);
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        for &j in &idx {
            let mut ins = inputs.to_vec();
            ins[i].data_mut()[j] = t.data()[j] + H;
            let up = eval(&ins);
            ins[i].data_mut()[j] = t.data()[j] - H;
            let down = eval(&ins);
            n.push((up - down) / (2.0 * H));
            a.push(analytic.data()[j]);
        }
        let e = rel_err(&a, &n);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    worst
}

/// Worst relative error over the named parameters of a model loss.
pub fn check_params(
    store: &ParamStore,
    limit: usize,
    f: impl Fn(&mut Graph, &mut Binding) -> Result<Var>,
) -> Vec<(String, f64)> {
    let mut g = Graph::new();
    let mut p = Binding::trainable(store);
    let loss = f(&mut g, &mut p).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic = p.collect_grads(&grads);
    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let mut p = Binding::frozen(s);
        let l = f(&mut g, &mut p).unwrap();
        g.value(l).item()
    };
    let mut out = Vec::new();
    let mut work = store.clone();
    for (name, value) in store.iter() {
        let idx = probe_indices(value.len(), limit);
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &j in &idx {
            let orig = value.data()[j];
            work.get_mut(name).unwrap().data_mut()[j] = orig + H;
            let up = eval(&work);
            work.get_mut(name).unwrap().data_mut()[j] = orig - H;
            let down = eval(&work);
            work.get_mut(name).unwrap().data_mut()[j] = orig;
            n.push((up - down) / (2.0 * H));
            a.push(analytic.get(name).unwrap().data()[j]);
        }
        out.push((name.clone(), rel_err(&a, &n)));
    }
    out
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng::seeded(seed))
}

/// `sum(x ⊙ w)` with a fixed random weight, turning any output into a
/// scalar with a generic gradient.
pub fn readout(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let w = g.constant(randn(g.shape(x), seed));
    let p = g.mul(x, w)?;
    g.sum(p)
}
