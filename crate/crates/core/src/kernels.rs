//! Per-sample contraction primitives.
//!
//! With a Kruskal core, every Kronecker contraction against a sample's
//! factor rows reduces to the scalars `c[n][r] = b⁽ⁿ⁾_{:,r} · a⁽ⁿ⁾_{i_n,:}`:
//!
//! - `(⊗ₙ xₙ)·(⊗ₙ yₙ) = Πₙ (xₙ·yₙ)` turns the coefficient row of a factor
//!   update into `GS = Σ_r (Π_{n₀≠n} c[n₀][r]) b⁽ⁿ⁾_{:,r}`;
//! - `(⊗ₙ xₙ)(⊗ₙ Yₙ)ᵀ = ⊗ₙ (xₙ Yₙᵀ)` turns the core-gradient coefficient into
//!   `Q⁽ⁿ⁾ʳ = (Π_{n₀≠n} c[n₀][r]) a⁽ⁿ⁾_{i_n,:}`.
//!
//! Every function here is read-only over the model; scratch lives in a
//! per-worker [`Workspace`].

use crate::error::{Error, Result};
use crate::model::{FactorRows, KruskalCore, TuckerModel};

/// Thread-local multiply counter used by the cost tests.
///
/// Kernels report the number of scalar multiplications they perform; the
/// oracle reports its own through the same counter so the two paths can be
/// compared on identical inputs.
pub mod op_count {
    use std::cell::Cell;

    thread_local! {
        static MULTS: Cell<u64> = const { Cell::new(0) };
    }

    #[inline]
    pub fn add(n: usize) {
        MULTS.with(|c| c.set(c.get() + n as u64));
    }

    pub fn reset() {
        MULTS.with(|c| c.set(0));
    }

    pub fn get() -> u64 {
        MULTS.with(|c| c.get())
    }

    /// Runs `f` and returns the multiplications it performed on this thread.
    pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
        let before = get();
        let out = f();
        (out, get() - before)
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    op_count::add(x.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `c[n][r] = b⁽ⁿ⁾_{:,r} · a⁽ⁿ⁾_{i_n,:}` for one observed index.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDotCache {
    order: usize,
    r_core: usize,
    c: Vec<f64>,
}

impl ModeDotCache {
    pub fn zeros(order: usize, r_core: usize) -> Self {
        Self {
            order,
            r_core,
            c: vec![0.0; order * r_core],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let order = rows.len();
        let r_core = rows.first().map_or(0, Vec::len);
        if order == 0 || r_core == 0 || rows.iter().any(|r| r.len() != r_core) {
            return Err(Error::ShapeMismatch("cache rows must be a non-empty N x R grid".into()));
        }
        Ok(Self {
            order,
            r_core,
            c: rows.into_iter().flatten().collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn r_core(&self) -> usize {
        self.r_core
    }

    #[inline]
    pub fn get(&self, mode: usize, r: usize) -> f64 {
        self.c[mode * self.r_core + r]
    }

    #[inline]
    fn mode_mut(&mut self, mode: usize) -> &mut [f64] {
        &mut self.c[mode * self.r_core..(mode + 1) * self.r_core]
    }

    /// `Π_{n₀≠mode} c[n₀][r]`.
    #[inline]
    pub fn off_mode_product(&self, mode: usize, r: usize) -> f64 {
        let mut p = 1.0;
        for n0 in 0..self.order {
            if n0 != mode {
                p *= self.get(n0, r);
            }
        }
        op_count::add(self.order.saturating_sub(2));
        p
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.c.chunks(self.r_core).map(<[f64]>::to_vec).collect()
    }
}

/// Per-worker scratch reused across samples.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub cache: ModeDotCache,
    pub gs: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Workspace {
    pub fn new(j_ranks: &[usize], r_core: usize) -> Self {
        let jmax = j_ranks.iter().copied().max().unwrap_or(0);
        Self {
            cache: ModeDotCache::zeros(j_ranks.len(), r_core),
            gs: vec![0.0; jmax],
            grad: vec![0.0; jmax],
        }
    }

    pub fn for_model(model: &TuckerModel) -> Self {
        Self::new(model.j_ranks(), model.r_core())
    }
}

/// Recomputes `c[mode][·]` from the current row `a⁽ᵐᵒᵈᵉ⁾_{i,:}`.
#[inline]
pub fn refresh_mode<F: FactorRows + ?Sized>(
    rows: &F,
    core: &KruskalCore,
    mode: usize,
    i: usize,
    cache: &mut ModeDotCache,
) {
    let a = rows.row(mode, i);
    for (r, c) in cache.mode_mut(mode).iter_mut().enumerate() {
        *c = dot(core.column(mode, r), a);
    }
}

/// Fills `cache` for `index`; cost Θ(R_core · Σₙ J_n). No bounds checks.
#[inline]
pub fn mode_dots_into<F: FactorRows + ?Sized>(
    rows: &F,
    core: &KruskalCore,
    index: &[usize],
    cache: &mut ModeDotCache,
) {
    for (mode, &i) in index.iter().enumerate() {
        refresh_mode(rows, core, mode, i, cache);
    }
}

pub fn mode_dots(model: &TuckerModel, index: &[usize]) -> Result<ModeDotCache> {
    model.check_index(index)?;
    let mut cache = ModeDotCache::zeros(model.order(), model.r_core());
    mode_dots_into(model.factors(), model.core(), index, &mut cache);
    Ok(cache)
}

/// `GS = Σ_r (Π_{n₀≠n} c[n₀][r]) · b⁽ⁿ⁾_{:,r}` written into `out` (length J_n).
#[inline]
pub fn gs_vector_into(core: &KruskalCore, cache: &ModeDotCache, mode: usize, out: &mut [f64]) {
    out.fill(0.0);
    for r in 0..core.r_core() {
        let w = cache.off_mode_product(mode, r);
        let b = core.column(mode, r);
        op_count::add(b.len());
        for (o, &bj) in out.iter_mut().zip(b) {
            *o += w * bj;
        }
    }
}

fn check_mode(model: &TuckerModel, cache: &ModeDotCache, mode: usize) -> Result<()> {
    if mode >= model.order() {
        return Err(Error::invalid(format!("mode {mode} out of range for order {}", model.order())));
    }
    if cache.order() != model.order() || cache.r_core() != model.r_core() {
        return Err(Error::ShapeMismatch("cache does not match model".into()));
    }
    Ok(())
}

pub fn gs_vector(model: &TuckerModel, cache: &ModeDotCache, mode: usize) -> Result<Vec<f64>> {
    check_mode(model, cache, mode)?;
    let mut out = vec![0.0; model.j_ranks()[mode]];
    gs_vector_into(model.core(), cache, mode, &mut out);
    Ok(out)
}

/// `Q⁽ⁿ⁾ʳ = (Π_{n₀≠n} c[n₀][r]) · a⁽ⁿ⁾_{i_n,:}`.
pub fn q_vector(
    model: &TuckerModel,
    index: &[usize],
    cache: &ModeDotCache,
    mode: usize,
    r: usize,
) -> Result<Vec<f64>> {
    check_mode(model, cache, mode)?;
    model.check_index(index)?;
    if r >= model.r_core() {
        return Err(Error::invalid(format!("rank {r} out of range for R_core {}", model.r_core())));
    }
    let w = cache.off_mode_product(mode, r);
    let a = model.factor(mode).row(index[mode]);
    op_count::add(a.len());
    Ok(a.iter().map(|&v| w * v).collect())
}

/// `Σ_r Πₙ c[n][r]`.
#[inline]
pub fn predict(cache: &ModeDotCache) -> f64 {
    let mut total = 0.0;
    for r in 0..cache.r_core() {
        let mut p = 1.0;
        for n in 0..cache.order() {
            p *= cache.get(n, r);
        }
        total += p;
    }
    op_count::add(cache.r_core() * cache.order().saturating_sub(1));
    total
}

/// `b⁽ⁿ⁾_{:,r} · Q⁽ⁿ⁾ʳ`; summing over `r` gives the prediction for any mode.
pub fn intermx(
    model: &TuckerModel,
    index: &[usize],
    cache: &ModeDotCache,
    mode: usize,
    r: usize,
) -> Result<f64> {
    let q = q_vector(model, index, cache, mode, r)?;
    Ok(dot(model.core().column(mode, r), &q))
}

/// Kronecker dot product computed factor-wise: `(⊗ₙ xₙ)·(⊗ₙ yₙ) = Πₙ xₙ·yₙ`.
pub fn kron_dot(xs: &[&[f64]], ys: &[&[f64]]) -> Result<f64> {
    if xs.len() != ys.len() || xs.iter().zip(ys).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::ShapeMismatch("kron_dot operands differ in shape".into()));
    }
    Ok(xs.iter().zip(ys).map(|(x, y)| dot(x, y)).product())
}

/// `(⊗ₙ xₙ)(⊗ₙ Yₙ)ᵀ` computed factor-wise as `⊗ₙ (xₙ Yₙᵀ)`.
///
/// Operands are listed mode 1 first; `ys[n]` is row-major `J_n × I_n`. The
/// output uses the mode-N-leftmost Kronecker ordering, so the mode-1
/// component varies fastest.
pub fn kron_matvec(xs: &[&[f64]], ys: &[(&[f64], usize)]) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch("kron_matvec operand counts differ".into()));
    }
    let mut parts = Vec::with_capacity(xs.len());
    for (x, &(y, rows)) in xs.iter().zip(ys) {
        if rows == 0 || y.len() != rows * x.len() {
            return Err(Error::ShapeMismatch("kron_matvec matrix shape".into()));
        }
        parts.push(y.chunks(x.len()).map(|row| dot(row, x)).collect::<Vec<f64>>());
    }
    Ok(kron_fast(&parts))
}

/// Kronecker product of vectors listed mode 1 first (mode 1 fastest).
fn kron_fast(parts: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![1.0];
    for p in parts {
        let mut next = Vec::with_capacity(out.len() * p.len());
        for &v in p {
            next.extend(out.iter().map(|&o| o * v));
        }
        op_count::add(next.len());
        out = next;
    }
    out
}
