use crate::error::{Error, Result};

use super::{HasParams, Param, Real};

/// Bias-corrected Adam state, one moment pair per parameter tensor in visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// State with zeroed moments shaped like `model`'s parameters.
    pub fn for_model<R: Real>(lr: f64, model: &mut impl HasParams<R>) -> Self {
        let mut s = Self::new(lr);
        model.visit_params(&mut |p| {
            s.m.push(vec![0.0; p.len()]);
            s.v.push(vec![0.0; p.len()]);
        });
        s
    }
}

fn update<R: Real>(p: &mut Param<R>, m: &mut [f32], v: &mut [f32], s: &AdamState, c1: f64, c2: f64) {
    for ((w, &g), (m, v)) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut().zip(v.iter_mut())) {
        let g = g.f64();
        let mn = s.beta1 * *m as f64 + (1.0 - s.beta1) * g;
        let vn = s.beta2 * *v as f64 + (1.0 - s.beta2) * g * g;
        *m = mn as f32;
        *v = vn as f32;
        let step = s.lr * (mn / c1) / ((vn / c2).sqrt() + s.eps);
        *w = R::of(w.f64() - step);
    }
}

/// One Adam update from the accumulated gradients.
pub fn adam_step<R: Real>(model: &mut impl HasParams<R>, state: &mut AdamState) -> Result<()> {
    let mut shapes = Vec::new();
    model.visit_params(&mut |p| shapes.push(p.len()));
    if shapes.len() != state.m.len()
        || shapes.iter().zip(&state.m).zip(&state.v).any(|((&n, m), v)| m.len() != n || v.len() != n)
    {
        return Err(Error::shape("optimizer state does not match the parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let s = state.clone_hyper();
    let mut i = 0;
    let (ms, vs) = (&mut state.m, &mut state.v);
    model.visit_params(&mut |p| {
        update(p, &mut ms[i], &mut vs[i], &s, c1, c2);
        i += 1;
    });
    Ok(())
}

impl AdamState {
    fn clone_hyper(&self) -> AdamState {
        AdamState { m: Vec::new(), v: Vec::new(), ..*self }
    }
}

/// Rescales each consecutive `unit_len` block of `weights` whose L2 norm
/// exceeds `limit` down to norm `limit`.
pub fn max_norm_project<R: Real>(weights: &mut [R], unit_len: usize, limit: f64) -> Result<()> {
    if !(limit > 0.0) || unit_len == 0 || weights.len() % unit_len != 0 {
        return Err(Error::invalid("max-norm needs a positive limit and whole units"));
    }
    for unit in weights.chunks_mut(unit_len) {
        let norm = unit.iter().map(|w| w.f64().powi(2)).sum::<f64>().sqrt();
        if norm > limit {
            let s = limit / norm;
            unit.iter_mut().for_each(|w| *w = R::of(w.f64() * s));
        }
    }
    Ok(())
}
