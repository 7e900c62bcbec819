//! Trainable state: factor matrices `A⁽ⁿ⁾` (I_n × J_n) and the Kruskal core
//! factors `B⁽ⁿ⁾` (J_n × R_core).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Dense row-major matrix holding one mode's factor `A⁽ⁿ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix given {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Kruskal factors of the core tensor.
///
/// `B⁽ⁿ⁾` is stored transposed (R_core × J_n) so that each column
/// `b⁽ⁿ⁾_{:,r}` is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalCore {
    j_ranks: Vec<usize>,
    r_core: usize,
    columns: Vec<Vec<f64>>,
}

impl KruskalCore {
    pub fn zeros(j_ranks: &[usize], r_core: usize) -> Self {
        Self {
            j_ranks: j_ranks.to_vec(),
            r_core,
            columns: j_ranks.iter().map(|&j| vec![0.0; j * r_core]).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.j_ranks.len()
    }

    pub fn j_ranks(&self) -> &[usize] {
        &self.j_ranks
    }

    pub fn r_core(&self) -> usize {
        self.r_core
    }

    /// Column `r` of `B⁽ⁿ⁾`, length J_n.
    #[inline]
    pub fn column(&self, mode: usize, r: usize) -> &[f64] {
        let j = self.j_ranks[mode];
        &self.columns[mode][r * j..(r + 1) * j]
    }

    #[inline]
    pub fn column_mut(&mut self, mode: usize, r: usize) -> &mut [f64] {
        let j = self.j_ranks[mode];
        &mut self.columns[mode][r * j..(r + 1) * j]
    }

    /// Entry `b⁽ⁿ⁾_{j,r}`.
    pub fn get(&self, mode: usize, j: usize, r: usize) -> f64 {
        self.columns[mode][r * self.j_ranks[mode] + j]
    }

    pub fn set(&mut self, mode: usize, j: usize, r: usize, value: f64) {
        let jn = self.j_ranks[mode];
        self.columns[mode][r * jn + j] = value;
    }

    /// All of mode `n`'s storage (column-major `B⁽ⁿ⁾`).
    pub fn mode_storage(&self, mode: usize) -> &[f64] {
        &self.columns[mode]
    }

    pub fn mode_storage_mut(&mut self, mode: usize) -> &mut [f64] {
        &mut self.columns[mode]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.columns.iter().flatten().map(|v| v * v).sum()
    }
}

/// Read access to factor rows; implemented by whole factor sets and by the
/// row-disjoint shards the scheduler hands to workers.
pub trait FactorRows {
    fn row(&self, mode: usize, i: usize) -> &[f64];
}

pub trait FactorRowsMut: FactorRows {
    fn row_mut(&mut self, mode: usize, i: usize) -> &mut [f64];
}

impl FactorRows for [FactorMatrix] {
    #[inline]
    fn row(&self, mode: usize, i: usize) -> &[f64] {
        self[mode].row(i)
    }
}

impl FactorRowsMut for [FactorMatrix] {
    #[inline]
    fn row_mut(&mut self, mode: usize, i: usize) -> &mut [f64] {
        self[mode].row_mut(i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub j_ranks: Vec<usize>,
    pub r_core: usize,
    pub init_scale_factor: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// `(mean value)^(1/N)` clamped to `[0.1, 1]`.
    pub fn scale_for_mean(mean_value: f64, order: usize) -> f64 {
        let s = mean_value.abs().powf(1.0 / order as f64);
        if s.is_finite() {
            s.clamp(0.1, 1.0)
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuckerModel {
    dims: Vec<usize>,
    factors: Vec<FactorMatrix>,
    core: KruskalCore,
}

impl TuckerModel {
    pub fn zeros(dims: &[usize], j_ranks: &[usize], r_core: usize) -> Result<Self> {
        validate_shape(dims, j_ranks, r_core)?;
        Ok(Self {
            dims: dims.to_vec(),
            factors: dims
                .iter()
                .zip(j_ranks)
                .map(|(&i, &j)| FactorMatrix::zeros(i, j))
                .collect(),
            core: KruskalCore::zeros(j_ranks, r_core),
        })
    }

    pub fn from_parts(dims: &[usize], factors: Vec<FactorMatrix>, core: KruskalCore) -> Result<Self> {
        let j_ranks = core.j_ranks().to_vec();
        validate_shape(dims, &j_ranks, core.r_core())?;
        if factors.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} factor matrices for order {}",
                factors.len(),
                dims.len()
            )));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.rows() != dims[n] || f.cols() != j_ranks[n] {
                return Err(Error::ShapeMismatch(format!(
                    "factor {n} is {}x{}, expected {}x{}",
                    f.rows(),
                    f.cols(),
                    dims[n],
                    j_ranks[n]
                )));
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            factors,
            core,
        })
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn j_ranks(&self) -> &[usize] {
        self.core.j_ranks()
    }

    pub fn r_core(&self) -> usize {
        self.core.r_core()
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [FactorMatrix] {
        &mut self.factors
    }

    pub fn factor(&self, mode: usize) -> &FactorMatrix {
        &self.factors[mode]
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut FactorMatrix {
        &mut self.factors[mode]
    }

    pub fn core(&self) -> &KruskalCore {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut KruskalCore {
        &mut self.core
    }

    /// Mutable factors alongside a shared view of the core factors.
    pub fn split_mut(&mut self) -> (&mut [FactorMatrix], &KruskalCore) {
        (&mut self.factors, &self.core)
    }

    /// True when `R_core > min_n J_n`, which the model tolerates but which
    /// leaves the core over-parameterised.
    pub fn core_rank_exceeds_min_j(&self) -> bool {
        self.j_ranks()
            .iter()
            .min()
            .is_some_and(|&j| self.r_core() > j)
    }

    pub fn check_index(&self, index: &[usize]) -> Result<()> {
        if index.len() != self.dims.len() || index.iter().zip(&self.dims).any(|(&i, &d)| i >= d) {
            return Err(Error::IndexOutOfBounds {
                index: index.to_vec(),
                dims: self.dims.clone(),
            });
        }
        Ok(())
    }

    /// Model prediction at one index.
    pub fn predict(&self, index: &[usize]) -> Result<f64> {
        Ok(crate::kernels::predict(&crate::kernels::mode_dots(self, index)?))
    }

    pub fn is_finite(&self) -> bool {
        self.factors
            .iter()
            .all(|f| f.as_slice().iter().all(|v| v.is_finite()))
            && (0..self.order()).all(|n| self.core.mode_storage(n).iter().all(|v| v.is_finite()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }

    /// Text checkpoint: a header with dims and ranks, then every `A⁽ⁿ⁾`
    /// (I_n rows of J_n values) and every `B⁽ⁿ⁾` (J_n rows of R_core values),
    /// row-major, 17 significant digits.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "sptucker-model 1");
        let _ = writeln!(out, "dims {}", join(&self.dims));
        let _ = writeln!(out, "ranks {}", join(self.j_ranks()));
        let _ = writeln!(out, "rcore {}", self.r_core());
        for (n, f) in self.factors.iter().enumerate() {
            let _ = writeln!(out, "factor {n}");
            for i in 0..f.rows() {
                write_row(&mut out, f.row(i).iter().copied());
            }
        }
        for n in 0..self.order() {
            let _ = writeln!(out, "core {n}");
            for j in 0..self.j_ranks()[n] {
                write_row(&mut out, (0..self.r_core()).map(|r| self.core.get(n, j, r)));
            }
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("unexpected end of checkpoint, expected {what}"),
            })
        };

        let (line, magic) = next("header")?;
        if magic != "sptucker-model 1" {
            return Err(Error::Parse {
                line,
                msg: format!("not a model checkpoint: {magic:?}"),
            });
        }
        let dims = keyed_usizes(next("dims")?, "dims")?;
        let j_ranks = keyed_usizes(next("ranks")?, "ranks")?;
        let r_core = keyed_usizes(next("rcore")?, "rcore")?;
        if r_core.len() != 1 {
            return Err(Error::Parse {
                line,
                msg: "rcore takes one value".into(),
            });
        }
        let mut model = TuckerModel::zeros(&dims, &j_ranks, r_core[0])?;

        for n in 0..dims.len() {
            expect_section(next("factor section")?, "factor", n)?;
            for i in 0..dims[n] {
                let vals = parse_row(next("factor row")?, j_ranks[n])?;
                model.factors[n].row_mut(i).copy_from_slice(&vals);
            }
        }
        for (n, &jn) in j_ranks.iter().enumerate() {
            expect_section(next("core section")?, "core", n)?;
            for j in 0..jn {
                let vals = parse_row(next("core row")?, r_core[0])?;
                for (r, v) in vals.into_iter().enumerate() {
                    model.core.set(n, j, r, v);
                }
            }
        }
        Ok(model)
    }
}

fn write_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let row: Vec<String> = values.map(|v| format!("{v:.16e}")).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

fn keyed_usizes((line, text): (usize, &str), key: &str) -> Result<Vec<usize>> {
    let mut toks = text.split_whitespace();
    if toks.next() != Some(key) {
        return Err(Error::Parse {
            line,
            msg: format!("expected `{key}`"),
        });
    }
    toks.map(|t| {
        t.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad integer {t:?}"),
        })
    })
    .collect()
}

fn expect_section((line, text): (usize, &str), key: &str, n: usize) -> Result<()> {
    if text != format!("{key} {n}") {
        return Err(Error::Parse {
            line,
            msg: format!("expected `{key} {n}`, found {text:?}"),
        });
    }
    Ok(())
}

fn parse_row((line, text): (usize, &str), len: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("bad value {t:?}"),
                })
        })
        .collect::<Result<_>>()?;
    if vals.len() != len {
        return Err(Error::InconsistentTokens {
            line,
            expected: len,
            found: vals.len(),
        });
    }
    Ok(vals)
}

fn validate_shape(dims: &[usize], j_ranks: &[usize], r_core: usize) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid(format!("order must be at least 2, got {}", dims.len())));
    }
    if j_ranks.len() != dims.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ranks for order {}",
            j_ranks.len(),
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::invalid("dimensions must be positive"));
    }
    if j_ranks.contains(&0) || r_core == 0 {
        return Err(Error::invalid("ranks must be positive"));
    }
    Ok(())
}

/// Draws a model with `A⁽ⁿ⁾ ~ U(0, s/√J_n)` and `B⁽ⁿ⁾ ~ U(0, s/√R_core)`
/// where `s` is the configured scale factor.
pub fn init_model(dims: &[usize], config: &ModelConfig) -> Result<TuckerModel> {
    let mut model = TuckerModel::zeros(dims, &config.j_ranks, config.r_core)?;
    if !(config.init_scale_factor.is_finite() && config.init_scale_factor >= 0.0) {
        return Err(Error::invalid("init scale factor must be finite and non-negative"));
    }
    let mut rng = rng::seeded(config.seed);
    let s = config.init_scale_factor;
    for (f, &j) in model.factors.iter_mut().zip(&config.j_ranks) {
        let bound = s / (j as f64).sqrt();
        for v in f.as_mut_slice() {
            *v = rng.random::<f64>() * bound;
        }
    }
    let bound = s / (config.r_core as f64).sqrt();
    for n in 0..dims.len() {
        for v in model.core.mode_storage_mut(n) {
            *v = rng.random::<f64>() * bound;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config(j: &[usize], r: usize, s: f64, seed: u64) -> ModelConfig {
        ModelConfig {
            j_ranks: j.to_vec(),
            r_core: r,
            init_scale_factor: s,
            seed,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let c = config(&[2, 3, 2], 2, 1.0, 11);
        let a = init_model(&[4, 5, 6], &c).unwrap();
        let b = init_model(&[4, 5, 6], &c).unwrap();
        assert_eq!(a, b);
        let other = init_model(&[4, 5, 6], &config(&[2, 3, 2], 2, 1.0, 12)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn zero_scale_gives_zero_model() {
        let m = init_model(&[4, 5, 6], &config(&[2, 3, 2], 2, 0.0, 3)).unwrap();
        assert!(m.factors().iter().all(|f| f.as_slice().iter().all(|&v| v == 0.0)));
        assert_eq!(m.predict(&[3, 4, 5]).unwrap(), 0.0);
    }

    #[test]
    fn shapes_follow_ranks() {
        let m = init_model(&[4, 5, 6], &config(&[2, 3, 2], 2, 1.0, 3)).unwrap();
        let shapes: Vec<_> = m.factors().iter().map(|f| (f.rows(), f.cols())).collect();
        assert_eq!(shapes, vec![(4, 2), (5, 3), (6, 2)]);
        for (n, &j) in [2, 3, 2].iter().enumerate() {
            assert_eq!(m.core().mode_storage(n).len(), j * 2);
        }
    }

    #[test]
    fn rejects_zero_dims_and_ranks() {
        assert!(init_model(&[4, 0, 6], &config(&[2, 3, 2], 2, 1.0, 0)).is_err());
        assert!(init_model(&[4, 5, 6], &config(&[2, 0, 2], 2, 1.0, 0)).is_err());
        assert!(init_model(&[4, 5, 6], &config(&[2, 3, 2], 0, 1.0, 0)).is_err());
        assert!(init_model(&[4], &config(&[2], 1, 1.0, 0)).is_err());
    }

    #[test]
    fn clone_is_independent() {
        let original = init_model(&[3, 3], &config(&[2, 2], 2, 1.0, 5)).unwrap();
        let mut copy = original.clone();
        for n in 0..2 {
            copy.factor_mut(n).as_mut_slice().fill(0.0);
            copy.core_mut().mode_storage_mut(n).fill(0.0);
        }
        assert_ne!(copy, original);
        assert!(original.factor(0).as_slice().iter().any(|&v| v != 0.0));
        let fresh = original.clone();
        assert_eq!(fresh.predict(&[1, 2]).unwrap(), original.predict(&[1, 2]).unwrap());

        let zero = TuckerModel::zeros(&[3, 3], &[2, 2], 1).unwrap();
        assert_eq!(zero.clone(), zero);
    }

    #[test]
    fn warns_when_core_rank_exceeds_j() {
        let m = TuckerModel::zeros(&[3, 3], &[2, 4], 3).unwrap();
        assert!(m.core_rank_exceeds_min_j());
        let m = TuckerModel::zeros(&[3, 3], &[3, 4], 3).unwrap();
        assert!(!m.core_rank_exceeds_min_j());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = init_model(&[4, 5, 6], &config(&[2, 3, 2], 2, 0.7, 19)).unwrap();
        let text = m.to_checkpoint_string();
        assert_eq!(TuckerModel::from_checkpoint_str(&text).unwrap(), m);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        m.save(&path).unwrap();
        assert_eq!(TuckerModel::load(&path).unwrap(), m);
    }

    #[test]
    fn checkpoint_rejects_truncation() {
        let m = init_model(&[2, 2], &config(&[1, 1], 1, 1.0, 0)).unwrap();
        let text = m.to_checkpoint_string();
        let cut: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(TuckerModel::from_checkpoint_str(&cut).is_err());
        assert!(TuckerModel::from_checkpoint_str("garbage").is_err());
    }

    #[test]
    fn scale_for_mean_is_clamped() {
        assert_eq!(ModelConfig::scale_for_mean(8.0, 3), 1.0);
        assert_eq!(ModelConfig::scale_for_mean(1e-9, 3), 0.1);
        assert!((ModelConfig::scale_for_mean(0.125, 3) - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn init_respects_shapes_and_bounds(
            dims in prop::collection::vec(1usize..6, 2..5),
            jseed in prop::collection::vec(1usize..5, 5),
            r in 1usize..4,
            s in 0.0f64..3.0,
            seed in any::<u64>(),
        ) {
            let j: Vec<usize> = jseed[..dims.len()].to_vec();
            let m = init_model(&dims, &config(&j, r, s, seed)).unwrap();
            for n in 0..dims.len() {
                let f = m.factor(n);
                prop_assert_eq!((f.rows(), f.cols()), (dims[n], j[n]));
                let sa = s / (j[n] as f64).sqrt();
                prop_assert!(f.as_slice().iter().all(|&v| v >= 0.0 && (v < sa || s == 0.0)));
                let sb = s / (r as f64).sqrt();
                let b = m.core().mode_storage(n);
                prop_assert_eq!(b.len(), j[n] * r);
                prop_assert!(b.iter().all(|&v| v >= 0.0 && (v < sb || s == 0.0)));
            }
        }
    }
}
