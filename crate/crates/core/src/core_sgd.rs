//! Batch SGD on the Kruskal core columns `b⁽ⁿ⁾_{:,r}`.
//!
//! Each sample contributes `(x̂ − x)·Q⁽ⁿ⁾ʳ` to every `(n, r)` pair, computed
//! against a frozen model. Once the batch is accumulated (possibly by several
//! workers whose accumulators are merged), all columns are moved at once:
//!
//! ```text
//! b⁽ⁿ⁾_{:,r} ← b⁽ⁿ⁾_{:,r} − γ_b·(acc[n][r]/count + λ_b·b⁽ⁿ⁾_{:,r})
//! ```

use crate::error::{Error, Result};
use crate::kernels::{self, op_count, Workspace};
use crate::model::{FactorRows, KruskalCore, TuckerModel};

/// How the accumulated data term is normalised before the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchReduction {
    /// Divide by the number of accumulated samples.
    #[default]
    Mean,
    /// Use the raw sum.
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreGradientAccumulator {
    j_ranks: Vec<usize>,
    r_core: usize,
    /// Per mode, laid out like [`KruskalCore`]: R_core blocks of J_n.
    sums: Vec<Vec<f64>>,
    count: usize,
}

impl CoreGradientAccumulator {
    pub fn new(j_ranks: &[usize], r_core: usize) -> Self {
        Self {
            j_ranks: j_ranks.to_vec(),
            r_core,
            sums: j_ranks.iter().map(|&j| vec![0.0; j * r_core]).collect(),
            count: 0,
        }
    }

    pub fn for_model(model: &TuckerModel) -> Self {
        Self::new(model.j_ranks(), model.r_core())
    }

    pub fn sample_count(&self) -> usize {
        self.count
    }

    /// Accumulated data term for `(mode, r)`.
    pub fn column(&self, mode: usize, r: usize) -> &[f64] {
        let j = self.j_ranks[mode];
        &self.sums[mode][r * j..(r + 1) * j]
    }

    pub fn column_mut(&mut self, mode: usize, r: usize) -> &mut [f64] {
        let j = self.j_ranks[mode];
        &mut self.sums[mode][r * j..(r + 1) * j]
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.j_ranks == other.j_ranks && self.r_core == other.r_core
    }

    pub fn merge_from(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("accumulator shapes differ".into()));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.count += other.count;
        Ok(())
    }
}

/// Elementwise sum of two accumulators; sample counts add.
pub fn merge_accumulators(
    a: &CoreGradientAccumulator,
    b: &CoreGradientAccumulator,
) -> Result<CoreGradientAccumulator> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}

/// Adds one sample's `(x̂ − x)·Q⁽ⁿ⁾ʳ` for all `(n, r)`. No bounds checks.
#[inline]
pub fn accumulate_sample<F: FactorRows + ?Sized>(
    rows: &F,
    core: &KruskalCore,
    index: &[usize],
    x: f64,
    acc: &mut CoreGradientAccumulator,
    ws: &mut Workspace,
) {
    kernels::mode_dots_into(rows, core, index, &mut ws.cache);
    let residual = kernels::predict(&ws.cache) - x;
    for (mode, &i) in index.iter().enumerate() {
        let a = rows.row(mode, i);
        for r in 0..core.r_core() {
            let w = residual * ws.cache.off_mode_product(mode, r);
            op_count::add(1 + a.len());
            for (s, &aj) in acc.column_mut(mode, r).iter_mut().zip(a) {
                *s += w * aj;
            }
        }
    }
    acc.count += 1;
}

pub fn core_accumulate(
    model: &TuckerModel,
    index: &[usize],
    x: f64,
    acc: &mut CoreGradientAccumulator,
    ws: &mut Workspace,
) -> Result<()> {
    model.check_index(index)?;
    if acc.j_ranks != model.j_ranks() || acc.r_core != model.r_core() {
        return Err(Error::ShapeMismatch("accumulator does not match model".into()));
    }
    accumulate_sample(model.factors(), model.core(), index, x, acc, ws);
    Ok(())
}

fn apply_in_order(
    core: &mut KruskalCore,
    acc: &CoreGradientAccumulator,
    gamma_b: f64,
    lambda_b: f64,
    reduction: BatchReduction,
    order: impl Iterator<Item = (usize, usize)>,
) {
    let scale = match reduction {
        BatchReduction::Mean => 1.0 / acc.count as f64,
        BatchReduction::Sum => 1.0,
    };
    // Each column's update reads only its own pre-update values and the
    // accumulator, so any visiting order yields the same result.
    for (mode, r) in order {
        let g = acc.column(mode, r);
        for (b, &gj) in core.column_mut(mode, r).iter_mut().zip(g) {
            *b -= gamma_b * (gj * scale + lambda_b * *b);
        }
    }
}

pub fn core_apply(
    model: &mut TuckerModel,
    acc: &CoreGradientAccumulator,
    gamma_b: f64,
    lambda_b: f64,
    reduction: BatchReduction,
) -> Result<()> {
    if acc.count == 0 {
        return Err(Error::Empty);
    }
    if acc.j_ranks != model.j_ranks() || acc.r_core != model.r_core() {
        return Err(Error::ShapeMismatch("accumulator does not match model".into()));
    }
    let (order, r_core) = (model.order(), model.r_core());
    let pairs = (0..order).flat_map(|n| (0..r_core).map(move |r| (n, r)));
    apply_in_order(model.core_mut(), acc, gamma_b, lambda_b, reduction, pairs);
    Ok(())
}
