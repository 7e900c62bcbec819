//! Conflict-free block partition for parallel factor updates.
//!
//! Every mode is cut into `M` contiguous slices, giving `M^N` blocks. A
//! round assigns one block to each of `M` workers such that the assigned
//! blocks differ in every mode component; workers in a round therefore own
//! disjoint row ranges of every factor matrix and can update them without
//! locks. `M^(N−1)` rounds cover every block exactly once.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{FactorMatrix, FactorRows, FactorRowsMut};
use crate::sparse_tensor::SparseTensorCoo;

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    m: usize,
    dims: Vec<usize>,
    /// Per mode, `m + 1` cut points from 0 to I_n.
    boundaries: Vec<Vec<usize>>,
    /// Entry positions per block, indexed by [`PartitionPlan::block_id`].
    blocks: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn parts(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn boundaries(&self, mode: usize) -> &[usize] {
        &self.boundaries[mode]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Linear id of a block; mode 0 is the most significant digit.
    pub fn block_id(&self, components: &[usize]) -> usize {
        components.iter().fold(0, |acc, &c| acc * self.m + c)
    }

    pub fn block_components(&self, mut id: usize) -> Vec<usize> {
        let mut out = vec![0; self.order()];
        for c in out.iter_mut().rev() {
            *c = id % self.m;
            id /= self.m;
        }
        out
    }

    pub fn block_entries(&self, components: &[usize]) -> &[usize] {
        &self.blocks[self.block_id(components)]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Slice of mode `mode` that row `i` falls in.
    #[inline]
    pub fn bucket(&self, mode: usize, i: usize) -> usize {
        self.boundaries[mode][1..].partition_point(|&b| b <= i)
    }

    /// Splits factor storage into per-worker views for one round.
    ///
    /// `assignment[w]` is worker `w`'s block. Fails if two workers share a
    /// slice in any mode.
    pub fn split_rows<'a>(
        &self,
        factors: &'a mut [FactorMatrix],
        assignment: &[Vec<usize>],
    ) -> Result<Vec<ShardRows<'a>>> {
        if factors.len() != self.order() {
            return Err(Error::ShapeMismatch("factor count differs from partition order".into()));
        }
        let mut per_mode: Vec<Vec<Option<&'a mut [f64]>>> = Vec::with_capacity(self.order());
        let mut cols = Vec::with_capacity(self.order());
        for (mode, f) in factors.iter_mut().enumerate() {
            if f.rows() != self.dims[mode] {
                return Err(Error::ShapeMismatch(format!("factor {mode} rows differ from partition dims")));
            }
            let c = f.cols();
            cols.push(c);
            let mut rest = f.as_mut_slice();
            let mut chunks = Vec::with_capacity(self.m);
            for k in 0..self.m {
                let len = (self.boundaries[mode][k + 1] - self.boundaries[mode][k]) * c;
                let (head, tail) = rest.split_at_mut(len);
                chunks.push(Some(head));
                rest = tail;
            }
            per_mode.push(chunks);
        }

        let mut shards = Vec::with_capacity(assignment.len());
        for block in assignment {
            if block.len() != self.order() || block.iter().any(|&b| b >= self.m) {
                return Err(Error::invalid(format!("bad block {block:?}")));
            }
            let mut chunks = Vec::with_capacity(self.order());
            let mut starts = Vec::with_capacity(self.order());
            for (mode, &b) in block.iter().enumerate() {
                let chunk = per_mode[mode][b]
                    .take()
                    .ok_or_else(|| Error::invalid(format!("slice {b} of mode {mode} assigned twice")))?;
                chunks.push(chunk);
                starts.push(self.boundaries[mode][b]);
            }
            shards.push(ShardRows {
                chunks,
                starts,
                cols: cols.clone(),
            });
        }
        Ok(shards)
    }
}

/// A worker's exclusive view of one slice of every factor matrix.
#[derive(Debug)]
pub struct ShardRows<'a> {
    chunks: Vec<&'a mut [f64]>,
    starts: Vec<usize>,
    cols: Vec<usize>,
}

impl FactorRows for ShardRows<'_> {
    #[inline]
    fn row(&self, mode: usize, i: usize) -> &[f64] {
        let c = self.cols[mode];
        let k = i - self.starts[mode];
        &self.chunks[mode][k * c..(k + 1) * c]
    }
}

impl FactorRowsMut for ShardRows<'_> {
    #[inline]
    fn row_mut(&mut self, mode: usize, i: usize) -> &mut [f64] {
        let c = self.cols[mode];
        let k = i - self.starts[mode];
        &mut self.chunks[mode][k * c..(k + 1) * c]
    }
}

/// Cuts each mode at `floor(k·I_n/m)` and buckets the entries.
pub fn build_partition(tensor: &SparseTensorCoo, m: usize) -> Result<PartitionPlan> {
    if m == 0 {
        return Err(Error::invalid("number of parts must be at least 1"));
    }
    if let Some(&d) = tensor.dims().iter().find(|&&d| d < m) {
        return Err(Error::invalid(format!("{m} parts exceed mode dimension {d}")));
    }
    let order = tensor.order();
    let boundaries: Vec<Vec<usize>> = tensor
        .dims()
        .iter()
        .map(|&d| (0..=m).map(|k| k * d / m).collect())
        .collect();
    let mut plan = PartitionPlan {
        m,
        dims: tensor.dims().to_vec(),
        boundaries,
        blocks: vec![Vec::new(); m.pow(order as u32)],
    };
    for (p, (idx, _)) in tensor.iter().enumerate() {
        let id = idx
            .iter()
            .enumerate()
            .fold(0, |acc, (mode, &i)| acc * m + plan.bucket(mode, i));
        plan.blocks[id].push(p);
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundSchedule {
    order: usize,
    m: usize,
    /// `rounds[t][w]` = block components handled by worker `w` in round `t`.
    rounds: Vec<Vec<Vec<usize>>>,
}

impl RoundSchedule {
    pub fn rounds(&self) -> &[Vec<Vec<usize>>] {
        &self.rounds
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn parts(&self) -> usize {
        self.m
    }

    /// Blocks handled by `worker`, in round order.
    pub fn worker_blocks(&self, worker: usize) -> Vec<Vec<usize>> {
        self.rounds.iter().map(|r| r[worker].clone()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# order {} parts {} rounds {}",
            self.order,
            self.m,
            self.rounds.len()
        );
        for (t, round) in self.rounds.iter().enumerate() {
            let _ = write!(out, "round {t}:");
            for (w, block) in round.iter().enumerate() {
                let comps: Vec<String> = block.iter().map(usize::to_string).collect();
                let _ = write!(out, " w{w}=({})", comps.join(","));
            }
            out.push('\n');
        }
        out
    }
}

/// Offset vectors `d ∈ {0..m−1}^(n−1)` in reflected (boustrophedon) order:
/// consecutive vectors differ in one digit, the last digit moving fastest.
fn reflected_offsets(digits: usize, m: usize) -> Vec<Vec<usize>> {
    let total = m.pow(digits as u32);
    (0..total)
        .map(|k| {
            let mut plain = vec![0; digits];
            let mut rest = k;
            for d in plain.iter_mut().rev() {
                *d = rest % m;
                rest /= m;
            }
            let mut prefix_sum = 0;
            plain
                .iter()
                .map(|&d| {
                    let g = if prefix_sum % 2 == 1 { m - 1 - d } else { d };
                    prefix_sum += d;
                    g
                })
                .collect()
        })
        .collect()
}

/// Worker `w` in the round with offsets `d` gets block
/// `(w, (w+d₁) mod m, …, (w+d_{N−1}) mod m)`.
///
/// For `N = 3, m = 2` worker 0 visits `(0,0,0), (0,0,1), (0,1,1), (0,1,0)`
/// and worker 1 visits `(1,1,1), (1,1,0), (1,0,0), (1,0,1)`.
pub fn round_schedule(order: usize, m: usize) -> Result<RoundSchedule> {
    if order < 2 {
        return Err(Error::invalid("order must be at least 2"));
    }
    if m == 0 {
        return Err(Error::invalid("number of parts must be at least 1"));
    }
    let rounds = reflected_offsets(order - 1, m)
        .into_iter()
        .map(|d| {
            (0..m)
                .map(|w| std::iter::once(w).chain(d.iter().map(|&dk| (w + dk) % m)).collect())
                .collect()
        })
        .collect();
    Ok(RoundSchedule { order, m, rounds })
}
