//! Single-sample SGD on factor rows `a⁽ⁿ⁾_{i_n,:}`.
//!
//! For one observed entry `x` at index `(i_1..i_N)` and mode `n`, the
//! gradient is
//!
//! ```text
//! g = −x·GS + λ_a·a + (a·GS)·GS
//! ```
//!
//! with `GS` from [`kernels::gs_vector_into`]. Modes are visited in
//! ascending order and the mode's dot cache is refreshed after its row moves,
//! so later modes of the same sample see the updated row.

use crate::error::{Error, Result};
use crate::kernels::{self, op_count, Workspace};
use crate::model::{FactorRowsMut, KruskalCore, TuckerModel};
use crate::sparse_tensor::SparseTensorCoo;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGradient {
    pub mode: usize,
    pub row: usize,
    pub g: Vec<f64>,
}

#[inline]
fn gradient_into(a: &[f64], gs: &[f64], x: f64, lambda: f64, out: &mut [f64]) {
    let inter = kernels::dot(a, gs);
    op_count::add(3 * a.len());
    for ((o, &aj), &gj) in out.iter_mut().zip(a).zip(gs) {
        *o = -x * gj + lambda * aj + inter * gj;
    }
}

pub fn factor_gradient(
    model: &TuckerModel,
    index: &[usize],
    x: f64,
    mode: usize,
    lambda_a: f64,
    ws: &mut Workspace,
) -> Result<FactorGradient> {
    model.check_index(index)?;
    if mode >= model.order() {
        return Err(Error::invalid(format!("mode {mode} out of range")));
    }
    let jn = model.j_ranks()[mode];
    kernels::mode_dots_into(model.factors(), model.core(), index, &mut ws.cache);
    kernels::gs_vector_into(model.core(), &ws.cache, mode, &mut ws.gs[..jn]);
    let mut g = vec![0.0; jn];
    gradient_into(model.factor(mode).row(index[mode]), &ws.gs[..jn], x, lambda_a, &mut g);
    Ok(FactorGradient {
        mode,
        row: index[mode],
        g,
    })
}

/// `w − γ·g`.
pub fn sgd_step(w: &[f64], g: &[f64], gamma: f64) -> Vec<f64> {
    w.iter().zip(g).map(|(wi, gi)| wi - gamma * gi).collect()
}

/// Runs the full mode loop for one sample against `rows`.
#[inline]
pub fn update_sample<F: FactorRowsMut + ?Sized>(
    rows: &mut F,
    core: &KruskalCore,
    index: &[usize],
    x: f64,
    gammas: &[f64],
    lambdas: &[f64],
    ws: &mut Workspace,
) {
    kernels::mode_dots_into(rows, core, index, &mut ws.cache);
    for (mode, &i) in index.iter().enumerate() {
        let jn = core.j_ranks()[mode];
        kernels::gs_vector_into(core, &ws.cache, mode, &mut ws.gs[..jn]);
        let a = rows.row_mut(mode, i);
        gradient_into(a, &ws.gs[..jn], x, lambdas[mode], &mut ws.grad[..jn]);
        let gamma = gammas[mode];
        op_count::add(jn);
        for (aj, gj) in a.iter_mut().zip(&ws.grad[..jn]) {
            *aj -= gamma * gj;
        }
        kernels::refresh_mode(rows, core, mode, i, &mut ws.cache);
    }
}

/// Applies [`update_sample`] to `data` entries at `positions`, in order.
/// Returns the number of samples processed.
///
/// The caller guarantees that every row these samples touch is owned by
/// `rows` exclusively for the duration of the call.
pub fn factor_epoch_shard<F: FactorRowsMut + ?Sized>(
    rows: &mut F,
    core: &KruskalCore,
    data: &SparseTensorCoo,
    positions: &[usize],
    gammas: &[f64],
    lambdas: &[f64],
    ws: &mut Workspace,
) -> usize {
    for &p in positions {
        update_sample(rows, core, data.index(p), data.value(p), gammas, lambdas, ws);
    }
    positions.len()
}
