//! Sparse COO tensors: loading, writing, synthetic generation and
//! train/test splitting.
//!
//! The text format is whitespace-separated COO, one nonzero per line: N
//! integer indices followed by one real value. Lines starting with `#` are
//! comments, except for an optional `# dims: I1 I2 ... IN` header which fixes
//! the mode sizes instead of inferring them from the largest index.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels;
use crate::model::{init_model, ModelConfig, TuckerModel};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensorCoo {
    dims: Vec<usize>,
    /// Flattened index tuples, `order` entries per nonzero.
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseTensorCoo {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid(format!("order must be at least 2, got {}", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("dimensions must be positive"));
        }
        Ok(Self {
            dims,
            indices: Vec::new(),
            values: Vec::new(),
        })
    }

    pub fn from_entries(dims: Vec<usize>, entries: &[(Vec<usize>, f64)]) -> Result<Self> {
        let mut t = Self::new(dims)?;
        for (idx, v) in entries {
            t.push(idx, *v)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, index: &[usize], value: f64) -> Result<()> {
        if index.len() != self.dims.len() || index.iter().zip(&self.dims).any(|(&i, &d)| i >= d) {
            return Err(Error::IndexOutOfBounds {
                index: index.to_vec(),
                dims: self.dims.clone(),
            });
        }
        if !value.is_finite() {
            return Err(Error::invalid(format!("non-finite value {value}")));
        }
        self.indices.extend_from_slice(index);
        self.values.push(value);
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, k: usize) -> &[usize] {
        let n = self.dims.len();
        &self.indices[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.indices
            .chunks_exact(self.dims.len())
            .zip(self.values.iter().copied())
    }

    /// New tensor holding the entries at `positions`, in that order.
    pub fn select(&self, positions: &[usize]) -> Self {
        let n = self.order();
        let mut indices = Vec::with_capacity(positions.len() * n);
        let mut values = Vec::with_capacity(positions.len());
        for &p in positions {
            indices.extend_from_slice(self.index(p));
            values.push(self.values[p]);
        }
        Self {
            dims: self.dims.clone(),
            indices,
            values,
        }
    }

    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.nnz() as f64
    }

    /// Population standard deviation of the stored values.
    pub fn value_std(&self) -> f64 {
        let mean = self.mean_value();
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.nnz() as f64;
        var.sqrt()
    }
}

/// Parses COO text. `index_base` is 0 or 1.
pub fn parse_coo(text: &str, index_base: usize) -> Result<SparseTensorCoo> {
    if index_base > 1 {
        return Err(Error::invalid("index base must be 0 or 1"));
    }
    let mut header_dims: Option<Vec<usize>> = None;
    let mut order: Option<usize> = None;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut tuple = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(rest) = comment.trim_start().strip_prefix("dims:") {
                let dims = rest
                    .split_whitespace()
                    .map(|t| t.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Parse {
                        line: line_no,
                        msg: "bad dims header".into(),
                    })?;
                header_dims = Some(dims);
            }
            continue;
        }

        let toks: Vec<&str> = line.split_whitespace().collect();
        let n = toks.len() - 1;
        match order {
            None => {
                if n < 2 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("need at least 2 indices and a value, found {} tokens", toks.len()),
                    });
                }
                order = Some(n);
            }
            Some(o) if o != n => {
                return Err(Error::InconsistentTokens {
                    line: line_no,
                    expected: o + 1,
                    found: toks.len(),
                });
            }
            Some(_) => {}
        }

        tuple.clear();
        for t in &toks[..n] {
            let i: usize = t.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad index {t:?}"),
            })?;
            if i < index_base {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("index {i} below base {index_base}"),
                });
            }
            tuple.push(i - index_base);
        }
        let value: f64 = toks[n].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad value {:?}", toks[n]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("non-finite value {:?}", toks[n]),
            });
        }
        indices.extend_from_slice(&tuple);
        values.push(value);
    }

    let order = order.ok_or(Error::Empty)?;
    let dims = match header_dims {
        Some(d) => {
            if d.len() != order {
                return Err(Error::ShapeMismatch(format!(
                    "dims header has {} modes but entries have {order}",
                    d.len()
                )));
            }
            d
        }
        None => {
            let mut d = vec![0; order];
            for t in indices.chunks_exact(order) {
                for (m, &i) in d.iter_mut().zip(t) {
                    *m = (*m).max(i + 1);
                }
            }
            d
        }
    };
    let mut tensor = SparseTensorCoo::new(dims)?;
    if let Some((k, t)) = indices
        .chunks_exact(order)
        .enumerate()
        .find(|(_, t)| t.iter().zip(&tensor.dims).any(|(&i, &d)| i >= d))
    {
        return Err(Error::Parse {
            line: 0,
            msg: format!("entry {} has index {:?} outside dims {:?}", k + 1, t, tensor.dims),
        });
    }
    tensor.indices = indices;
    tensor.values = values;
    Ok(tensor)
}

pub fn load_coo(path: impl AsRef<Path>, index_base: usize) -> Result<SparseTensorCoo> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_coo(&text, index_base)
}

/// Renders a tensor as COO text with a `# dims:` header. Values are written
/// with 17 significant digits so parsing recovers them exactly.
pub fn format_coo(tensor: &SparseTensorCoo, index_base: usize) -> Result<String> {
    if tensor.is_empty() {
        return Err(Error::Empty);
    }
    if index_base > 1 {
        return Err(Error::invalid("index base must be 0 or 1"));
    }
    let mut out = String::with_capacity(tensor.nnz() * 32);
    let dims: Vec<String> = tensor.dims.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "# dims: {}", dims.join(" "));
    for (idx, v) in tensor.iter() {
        for &i in idx {
            let _ = write!(out, "{} ", i + index_base);
        }
        let _ = writeln!(out, "{v:.16e}");
    }
    Ok(out)
}

pub fn write_coo(tensor: &SparseTensorCoo, path: impl AsRef<Path>, index_base: usize) -> Result<()> {
    let path = path.as_ref();
    let text = format_coo(tensor, index_base)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dims: Vec<usize>,
    pub nnz: usize,
    pub j_ranks: Vec<usize>,
    pub r_core: usize,
    pub noise_sigma: f64,
    /// Scale factor of the ground-truth model (see [`init_model`]).
    pub init_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Ground-truth scale used by the CLI unless overridden. Gives values
    /// of order one for small ranks.
    pub const DEFAULT_SCALE: f64 = 1.5;
}

/// Draws a ground-truth model and `nnz` entries at distinct uniform indices,
/// each valued `predict(model, index) + N(0, σ²)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(SparseTensorCoo, TuckerModel)> {
    let dense: u128 = spec.dims.iter().map(|&d| d as u128).product();
    if spec.nnz as u128 > dense {
        return Err(Error::invalid(format!(
            "nnz {} exceeds dense size {dense}",
            spec.nnz
        )));
    }
    if spec.nnz == 0 {
        return Err(Error::Empty);
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::invalid("noise sigma must be finite and non-negative"));
    }
    let dense = usize::try_from(dense).map_err(|_| Error::invalid("dense size overflows usize"))?;

    let model = init_model(
        &spec.dims,
        &ModelConfig {
            j_ranks: spec.j_ranks.clone(),
            r_core: spec.r_core,
            init_scale_factor: spec.init_scale,
            seed: rng::derive_seed(spec.seed, &[0]),
        },
    )?;

    let mut idx_rng = rng::stream(spec.seed, &[1]);
    let mut noise_rng = rng::stream(spec.seed, &[2]);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;

    let mut tensor = SparseTensorCoo::new(spec.dims.clone())?;
    tensor.indices.reserve(spec.nnz * spec.dims.len());
    tensor.values.reserve(spec.nnz);
    let mut cache = kernels::ModeDotCache::zeros(spec.dims.len(), spec.r_core);
    let mut tuple = vec![0; spec.dims.len()];
    for linear in index::sample(&mut idx_rng, dense, spec.nnz) {
        let mut rest = linear;
        for (t, &d) in tuple.iter_mut().zip(&spec.dims) {
            *t = rest % d;
            rest /= d;
        }
        kernels::mode_dots_into(model.factors(), model.core(), &tuple, &mut cache);
        let mut v = kernels::predict(&cache);
        if spec.noise_sigma > 0.0 {
            v += noise.sample(&mut noise_rng);
        }
        tensor.indices.extend_from_slice(&tuple);
        tensor.values.push(v);
    }
    Ok((tensor, model))
}

/// Training set Ω and held-out set Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: SparseTensorCoo,
    pub test: SparseTensorCoo,
}

/// Holds out `round(test_fraction · nnz)` entries chosen uniformly without
/// replacement. Both parts keep the source entry order.
pub fn split(tensor: &SparseTensorCoo, test_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if tensor.is_empty() {
        return Err(Error::Empty);
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!("test fraction {test_fraction} not in [0, 1)")));
    }
    let nnz = tensor.nnz();
    let n_test = (test_fraction * nnz as f64).round() as usize;
    if n_test >= nnz {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} leaves no training entries"
        )));
    }
    let mut in_test = vec![false; nnz];
    for p in index::sample(&mut rng::seeded(seed), nnz, n_test) {
        in_test[p] = true;
    }
    let (test_pos, train_pos): (Vec<usize>, Vec<usize>) = (0..nnz).partition(|&p| in_test[p]);
    Ok(DatasetSplit {
        train: tensor.select(&train_pos),
        test: tensor.select(&test_pos),
    })
}
