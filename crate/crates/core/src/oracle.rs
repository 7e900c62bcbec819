//! Dense brute-force reference for the contractions the kernels shortcut.
//!
//! Everything here builds explicit Kronecker products, dense cores and
//! matricizations, so it is only usable at small sizes; hard caps turn
//! oversized requests into errors. Sums run left to right.
//!
//! Linearization follows the usual Tucker index maps with the first listed
//! mode varying fastest:
//! - tensor entry `(i_1..i_N)` lives at `Σ_k i_k Π_{m<k} I_m`;
//! - mode-`n` matricization puts `i_n` on rows and
//!   `j = Σ_{k≠n} i_k Π_{m<k, m≠n} I_m` on columns;
//! - mode-`n` vectorization stacks matricization columns: `k = j·I_n + i_n`.

use crate::error::{Error, Result};
use crate::kernels::op_count;
use crate::model::{FactorMatrix, KruskalCore, TuckerModel};

pub const DENSE_CAP: usize = 10_000_000;
pub const CORE_CAP: usize = 1_000_000;

fn checked_size(dims: &[usize], cap: usize, what: &'static str) -> Result<usize> {
    let size: u128 = dims.iter().map(|&d| d as u128).product();
    if size > cap as u128 {
        return Err(Error::SizeCap {
            what,
            size,
            cap: cap as u128,
        });
    }
    Ok(size as usize)
}

/// Dense tensor, first mode fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let size = checked_size(dims, DENSE_CAP, "dense tensor")?;
        Ok(Self {
            dims: dims.to_vec(),
            values: vec![0.0; size],
        })
    }

    pub fn from_vec(dims: &[usize], values: Vec<f64>) -> Result<Self> {
        let size = checked_size(dims, DENSE_CAP, "dense tensor")?;
        if values.len() != size {
            return Err(Error::ShapeMismatch(format!("{} values for dims {dims:?}", values.len())));
        }
        Ok(Self {
            dims: dims.to_vec(),
            values,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn linear_index(&self, index: &[usize]) -> usize {
        let mut k = 0;
        let mut stride = 1;
        for (&i, &d) in index.iter().zip(&self.dims) {
            k += i * stride;
            stride *= d;
        }
        k
    }

    pub fn multi_index(&self, mut k: usize) -> Vec<usize> {
        self.dims
            .iter()
            .map(|&d| {
                let i = k % d;
                k /= d;
                i
            })
            .collect()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.values[self.linear_index(index)]
    }

    pub fn set(&mut self, index: &[usize], v: f64) {
        let k = self.linear_index(index);
        self.values[k] = v;
    }

    /// Column of the mode-`n` matricization holding `index`.
    pub fn matricization_column(&self, index: &[usize], mode: usize) -> usize {
        let mut j = 0;
        let mut stride = 1;
        for (k, (&i, &d)) in index.iter().zip(&self.dims).enumerate() {
            if k != mode {
                j += i * stride;
                stride *= d;
            }
        }
        j
    }

    /// Mode-`n` matricization as a row-major `I_n × Π_{k≠n} I_k` matrix.
    pub fn matricize(&self, mode: usize) -> Vec<f64> {
        let rows = self.dims[mode];
        let cols = self.values.len() / rows;
        let mut out = vec![0.0; rows * cols];
        for k in 0..self.values.len() {
            let idx = self.multi_index(k);
            out[idx[mode] * cols + self.matricization_column(&idx, mode)] = self.values[k];
        }
        out
    }

    /// Inverse of [`DenseTensor::matricize`].
    pub fn fold(dims: &[usize], mode: usize, matrix: &[f64]) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        if matrix.len() != t.values.len() {
            return Err(Error::ShapeMismatch("matricization length".into()));
        }
        let cols = t.values.len() / dims[mode];
        for k in 0..t.values.len() {
            let idx = t.multi_index(k);
            t.values[k] = matrix[idx[mode] * cols + t.matricization_column(&idx, mode)];
        }
        Ok(t)
    }

    /// Mode-`n` vectorization: matricization columns stacked.
    pub fn vectorize(&self, mode: usize) -> Vec<f64> {
        let rows = self.dims[mode];
        let mut out = vec![0.0; self.values.len()];
        for k in 0..self.values.len() {
            let idx = self.multi_index(k);
            out[self.matricization_column(&idx, mode) * rows + idx[mode]] = self.values[k];
        }
        out
    }

    /// Mode-`n` product with `U` (`I_new × dims[n]`, row-major).
    pub fn mode_product(&self, mode: usize, u: &FactorMatrix) -> Result<Self> {
        if u.cols() != self.dims[mode] {
            return Err(Error::ShapeMismatch(format!(
                "mode-{mode} product: matrix has {} columns, tensor mode has {}",
                u.cols(),
                self.dims[mode]
            )));
        }
        let mut dims = self.dims.clone();
        dims[mode] = u.rows();
        let mut out = Self::zeros(&dims)?;
        for k in 0..out.values.len() {
            let idx = out.multi_index(k);
            let mut src = idx.clone();
            let mut s = 0.0;
            for j in 0..self.dims[mode] {
                src[mode] = j;
                s += self.get(&src) * u.row(idx[mode])[j];
            }
            op_count::add(self.dims[mode]);
            out.values[k] = s;
        }
        Ok(out)
    }
}

/// Explicit Kronecker product `v_0 ⊗ v_1 ⊗ …` (first operand leftmost, so
/// the last operand varies fastest). Each entry is the product of its
/// per-operand components.
pub fn kron_vec(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let lens: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    let total = checked_size(&lens, DENSE_CAP, "kronecker vector")?;
    let mut out = Vec::with_capacity(total);
    for mut k in 0..total {
        let mut p = 1.0;
        for v in vectors.iter().rev() {
            p *= v[k % v.len()];
            k /= v.len();
        }
        out.push(p);
    }
    op_count::add(total * vectors.len());
    Ok(out)
}

/// Explicit Kronecker product of row-major matrices given as `(data, rows)`.
pub fn kron_mat(mats: &[(&[f64], usize)]) -> Result<(Vec<f64>, usize, usize)> {
    let shapes: Vec<(usize, usize)> = mats
        .iter()
        .map(|&(d, r)| (r, d.len().checked_div(r).unwrap_or(0)))
        .collect();
    let rows: usize = shapes.iter().map(|s| s.0).product();
    let cols: usize = shapes.iter().map(|s| s.1).product();
    checked_size(&[rows, cols], DENSE_CAP, "kronecker matrix")?;
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let (mut ii, mut jj, mut p) = (i, j, 1.0);
            for (&(d, _), &(r, c)) in mats.iter().zip(&shapes).rev() {
                p *= d[(ii % r) * c + jj % c];
                ii /= r;
                jj /= c;
            }
            out[i * cols + j] = p;
        }
    }
    op_count::add(rows * cols * mats.len());
    Ok((out, rows, cols))
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    op_count::add(x.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Dense core `Σ_r b⁽¹⁾_{:,r} ∘ ⋯ ∘ b⁽ᴺ⁾_{:,r}`, by enumeration.
pub fn dense_core_from_kruskal(core: &KruskalCore) -> Result<DenseTensor> {
    checked_size(core.j_ranks(), CORE_CAP, "dense core")?;
    let mut t = DenseTensor::zeros(core.j_ranks())?;
    for k in 0..t.values.len() {
        let idx = t.multi_index(k);
        let mut s = 0.0;
        for r in 0..core.r_core() {
            let mut p = 1.0;
            for (n, &j) in idx.iter().enumerate() {
                p *= core.get(n, j, r);
            }
            s += p;
        }
        op_count::add(core.r_core() * idx.len());
        t.values[k] = s;
    }
    Ok(t)
}

fn off_mode_columns(core: &KruskalCore, mode: usize, r: usize) -> Vec<&[f64]> {
    (0..core.order())
        .rev()
        .filter(|&k| k != mode)
        .map(|k| core.column(k, r))
        .collect()
}

/// `Ĝ⁽ⁿ⁾ = Σ_r b⁽ⁿ⁾_{:,r} (b⁽ᴺ⁾_{:,r} ⊗ ⋯ ⊗ b⁽ⁿ⁺¹⁾ ⊗ b⁽ⁿ⁻¹⁾ ⊗ ⋯ ⊗ b⁽¹⁾_{:,r})ᵀ`
/// as a row-major `J_n × Π_{k≠n} J_k` matrix.
pub fn dense_core_matricized(core: &KruskalCore, mode: usize) -> Result<Vec<f64>> {
    checked_size(core.j_ranks(), CORE_CAP, "dense core")?;
    let jn = core.j_ranks()[mode];
    let cols: usize = core.j_ranks().iter().product::<usize>() / jn;
    let mut out = vec![0.0; jn * cols];
    for r in 0..core.r_core() {
        let kr = kron_vec(&off_mode_columns(core, mode, r))?;
        let b = core.column(mode, r);
        for (i, &bi) in b.iter().enumerate() {
            for (o, &kv) in out[i * cols..(i + 1) * cols].iter_mut().zip(&kr) {
                *o += bi * kv;
            }
        }
        op_count::add(jn * cols);
    }
    Ok(out)
}

fn off_mode_rows<'a>(model: &'a TuckerModel, index: &[usize], mode: usize) -> Vec<&'a [f64]> {
    (0..model.order())
        .rev()
        .filter(|&k| k != mode)
        .map(|k| model.factor(k).row(index[k]))
        .collect()
}

/// `S⁽ⁿ⁾` row for one sample: off-mode factor rows, Kronecker in descending
/// mode order.
pub fn s_row(model: &TuckerModel, index: &[usize], mode: usize) -> Result<Vec<f64>> {
    model.check_index(index)?;
    kron_vec(&off_mode_rows(model, index, mode))
}

/// `H⁽ⁿ⁾` row for one sample: the `S⁽ⁿ⁾` row ⊗ `a⁽ⁿ⁾_{i_n,:}`.
pub fn h_row(model: &TuckerModel, index: &[usize], mode: usize) -> Result<Vec<f64>> {
    model.check_index(index)?;
    let mut rows = off_mode_rows(model, index, mode);
    rows.push(model.factor(mode).row(index[mode]));
    kron_vec(&rows)
}

/// `G ×₁ A⁽¹⁾ ⋯ ×_N A⁽ᴺ⁾`, applying the mode products in order.
pub fn dense_reconstruct(factors: &[FactorMatrix], core: &DenseTensor) -> Result<DenseTensor> {
    if factors.len() != core.dims().len() {
        return Err(Error::ShapeMismatch("factor count differs from core order".into()));
    }
    let out_dims: Vec<usize> = factors.iter().map(FactorMatrix::rows).collect();
    checked_size(&out_dims, DENSE_CAP, "dense reconstruction")?;
    let mut t = core.clone();
    for (n, f) in factors.iter().enumerate() {
        t = t.mode_product(n, f)?;
    }
    Ok(t)
}

/// Prediction through the dense core: `H⁽ⁿ⁾` row · mode-`n` vectorized core.
pub fn dense_predict(model: &TuckerModel, index: &[usize], mode: usize) -> Result<f64> {
    let core = dense_core_from_kruskal(model.core())?;
    Ok(dot(&h_row(model, index, mode)?, &core.vectorize(mode)))
}

/// `D = Ĝ⁽ⁿ⁾ · S⁽ⁿ⁾ row`, length J_n.
pub fn dense_gs(model: &TuckerModel, index: &[usize], mode: usize) -> Result<Vec<f64>> {
    let g = dense_core_matricized(model.core(), mode)?;
    let s = s_row(model, index, mode)?;
    Ok(g.chunks(s.len()).map(|row| dot(row, &s)).collect())
}

/// Factor-row gradient `−x·D + λ_a·a + (a·D)·D` with `D` built densely.
pub fn dense_factor_gradient(
    model: &TuckerModel,
    index: &[usize],
    x: f64,
    mode: usize,
    lambda_a: f64,
) -> Result<Vec<f64>> {
    let d = dense_gs(model, index, mode)?;
    let a = model.factor(mode).row(index[mode]);
    let inter = dot(a, &d);
    Ok(a
        .iter()
        .zip(&d)
        .map(|(&aj, &dj)| -x * dj + lambda_a * aj + inter * dj)
        .collect())
}

/// `Q⁽ⁿ⁾ʳ` for one sample via the explicit Kronecker contraction
/// `a⁽ⁿ⁾ᵀ (⊗_{k≠n} b⁽ᵏ⁾_{:,r})ᵀ S⁽ⁿ⁾ᵀ`.
pub fn dense_q(model: &TuckerModel, index: &[usize], mode: usize, r: usize) -> Result<Vec<f64>> {
    let kb = kron_vec(&off_mode_columns(model.core(), mode, r))?;
    let s = s_row(model, index, mode)?;
    let scale = dot(&kb, &s);
    Ok(model.factor(mode).row(index[mode]).iter().map(|&a| a * scale).collect())
}

/// Core-column gradient over a batch:
/// `(1/|batch|) Σ (x̂ − x)·Q⁽ⁿ⁾ʳ + λ_b·b⁽ⁿ⁾_{:,r}`, where `x̂` comes from the
/// dense core and `Q` from explicit Kronecker products.
pub fn dense_core_gradient(
    model: &TuckerModel,
    batch: &[(Vec<usize>, f64)],
    mode: usize,
    r: usize,
    lambda_b: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty);
    }
    let core = dense_core_from_kruskal(model.core())?;
    let gvec = core.vectorize(mode);
    let jn = model.j_ranks()[mode];
    let mut sum = vec![0.0; jn];
    for (index, x) in batch {
        let xhat = dot(&h_row(model, index, mode)?, &gvec);
        let q = dense_q(model, index, mode, r)?;
        for (s, qj) in sum.iter_mut().zip(q) {
            *s += (xhat - x) * qj;
        }
    }
    let b = model.core().column(mode, r);
    let m = batch.len() as f64;
    Ok(sum.iter().zip(b).map(|(s, &bj)| s / m + lambda_b * bj).collect())
}
