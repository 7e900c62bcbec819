//! Alternating epoch loop, learning-rate schedule and error metrics.
//!
//! Each epoch runs a factor phase followed by an optional core phase:
//!
//! 1. Factor phase: the training entries are bucketed into `W^N` blocks and
//!    processed in `W^(N−1)` rounds. In a round every worker takes one block
//!    and owns the factor rows it touches, so rows are updated in place
//!    without locks. Workers meet at a barrier between rounds.
//! 2. Core phase: a seeded batch of up to `core_batch_cap` entries is split
//!    among the workers, each fills a private gradient accumulator against
//!    the frozen model, the accumulators are merged in worker order and the
//!    core factors get one simultaneous update.
//!
//! The schedule counter `t` is the 0-based epoch index.

use std::io::Write as _;
use std::path::Path;
use std::thread;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::core_sgd::{self, BatchReduction, CoreGradientAccumulator};
use crate::error::{Error, Result};
use crate::factor_sgd;
use crate::kernels::Workspace;
use crate::model::TuckerModel;
use crate::oracle;
use crate::partition::{build_partition, round_schedule};
use crate::rng;
use crate::sparse_tensor::{DatasetSplit, SparseTensorCoo};

const SHUFFLE_STREAM: u64 = 0x5348;
const CORE_STREAM: u64 = 0x434f;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub workers: usize,
    pub update_core: bool,
    pub alpha_a: f64,
    pub beta_a: f64,
    pub lambda_a: f64,
    pub alpha_b: f64,
    pub beta_b: f64,
    pub lambda_b: f64,
    pub core_batch_cap: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub reduction: BatchReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            workers: 1,
            update_core: true,
            alpha_a: 0.009,
            beta_a: 0.05,
            lambda_a: 0.01,
            alpha_b: 0.0045,
            beta_b: 0.1,
            lambda_b: 0.01,
            core_batch_cap: 1 << 20,
            seed: 0,
            eval_every: 1,
            reduction: BatchReduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        if self.core_batch_cap == 0 {
            return Err(Error::invalid("core batch cap must be at least 1"));
        }
        let params = [
            ("alpha_a", self.alpha_a),
            ("beta_a", self.beta_a),
            ("lambda_a", self.lambda_a),
            ("alpha_b", self.alpha_b),
            ("beta_b", self.beta_b),
            ("lambda_b", self.lambda_b),
        ];
        for (name, v) in params {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// One evaluation row. `wall_seconds` is cumulative training time and
/// excludes metric evaluation. Test metrics are NaN when the test set is
/// empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub wall_seconds: f64,
    pub train_rmse: f64,
    pub train_mae: f64,
    pub test_rmse: f64,
    pub test_mae: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
}

/// Per-epoch counters, mostly for tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochStats {
    pub epoch: usize,
    pub factor_samples: usize,
    pub core_samples: usize,
}

/// `α / (1 + β·t^1.5)`.
pub fn learning_rate(alpha: f64, beta: f64, t: u64) -> f64 {
    alpha / (1.0 + beta * (t as f64).powf(1.5))
}

/// `(rmse, mae)` of the model over `data`, in one pass.
pub fn error_metrics(model: &TuckerModel, data: &SparseTensorCoo) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Empty);
    }
    check_dims(model, data)?;
    let mut ws = Workspace::for_model(model);
    let (mut sq, mut abs) = (0.0, 0.0);
    for (idx, x) in data.iter() {
        crate::kernels::mode_dots_into(model.factors(), model.core(), idx, &mut ws.cache);
        let e = x - crate::kernels::predict(&ws.cache);
        sq += e * e;
        abs += e.abs();
    }
    let n = data.nnz() as f64;
    Ok(((sq / n).sqrt(), abs / n))
}

pub fn rmse(model: &TuckerModel, data: &SparseTensorCoo) -> Result<f64> {
    error_metrics(model, data).map(|m| m.0)
}

pub fn mae(model: &TuckerModel, data: &SparseTensorCoo) -> Result<f64> {
    error_metrics(model, data).map(|m| m.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub residual: f64,
    pub factor_penalty: f64,
    /// `None` when the dense core would exceed the oracle size cap.
    pub core_penalty: Option<f64>,
}

impl Objective {
    pub fn total(&self) -> Option<f64> {
        self.core_penalty.map(|c| self.residual + self.factor_penalty + c)
    }
}

/// `Σ_Ω (x − x̂)² + λ_g‖Ĝ‖² + λ_A Σ_n ‖A⁽ⁿ⁾‖²`.
pub fn frobenius_objective(
    model: &TuckerModel,
    data: &SparseTensorCoo,
    lambda_a: f64,
    lambda_g: f64,
) -> Result<Objective> {
    if data.is_empty() {
        return Err(Error::Empty);
    }
    check_dims(model, data)?;
    let mut residual = 0.0;
    for (idx, x) in data.iter() {
        let e = x - model.predict(idx)?;
        residual += e * e;
    }
    let factor_penalty = lambda_a * model.factors().iter().map(|f| f.frobenius_sq()).sum::<f64>();
    let core_penalty = match oracle::dense_core_from_kruskal(model.core()) {
        Ok(g) => Some(lambda_g * g.values().iter().map(|v| v * v).sum::<f64>()),
        Err(Error::SizeCap { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Objective {
        residual,
        factor_penalty,
        core_penalty,
    })
}

fn check_dims(model: &TuckerModel, data: &SparseTensorCoo) -> Result<()> {
    if model.dims() != data.dims() {
        return Err(Error::ShapeMismatch(format!(
            "model dims {:?} differ from data dims {:?}",
            model.dims(),
            data.dims()
        )));
    }
    Ok(())
}

pub fn train(model: &mut TuckerModel, split: &DatasetSplit, config: &TrainConfig) -> Result<Vec<MetricsRow>> {
    train_with_stats(model, split, config).map(|(rows, _)| rows)
}

/// [`train`], also returning per-epoch sample counters.
pub fn train_with_stats(
    model: &mut TuckerModel,
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<(Vec<MetricsRow>, Vec<EpochStats>)> {
    config.validate()?;
    let train = &split.train;
    if train.is_empty() {
        return Err(Error::Empty);
    }
    check_dims(model, train)?;
    if !split.test.is_empty() {
        check_dims(model, &split.test)?;
    }

    let w = config.workers;
    let order = model.order();
    let plan = build_partition(train, w)?;
    let schedule = round_schedule(order, w)?;
    let mut workspaces: Vec<Workspace> = (0..w).map(|_| Workspace::for_model(model)).collect();
    let mut blocks: Vec<Vec<usize>> = plan.blocks().to_vec();

    let mut rows = Vec::new();
    let mut stats = Vec::with_capacity(config.epochs);
    let mut elapsed = 0.0;
    for epoch in 0..config.epochs {
        let t = epoch as u64;
        let gamma_a = learning_rate(config.alpha_a, config.beta_a, t);
        let gamma_b = learning_rate(config.alpha_b, config.beta_b, t);
        let gammas = vec![gamma_a; order];
        let lambdas = vec![config.lambda_a; order];
        let start = Instant::now();

        for (id, block) in blocks.iter_mut().enumerate() {
            block.copy_from_slice(&plan.blocks()[id]);
            let mut r = rng::stream(config.seed, &[SHUFFLE_STREAM, t, id as u64]);
            block.shuffle(&mut r);
        }

        let mut factor_samples = 0;
        for round in schedule.rounds() {
            let (factors, core) = model.split_mut();
            let shards = plan.split_rows(factors, round)?;
            if w == 1 {
                let mut shard = shards.into_iter().next().expect("one shard per worker");
                let positions = &blocks[plan.block_id(&round[0])];
                factor_samples +=
                    factor_sgd::factor_epoch_shard(&mut shard, core, train, positions, &gammas, &lambdas, &mut workspaces[0]);
            } else {
                factor_samples += thread::scope(|s| {
                    let handles: Vec<_> = shards
                        .into_iter()
                        .zip(round)
                        .zip(workspaces.iter_mut())
                        .map(|((mut shard, block), ws)| {
                            let positions = &blocks[plan.block_id(block)];
                            let (gammas, lambdas) = (&gammas, &lambdas);
                            s.spawn(move || {
                                factor_sgd::factor_epoch_shard(&mut shard, core, train, positions, gammas, lambdas, ws)
                            })
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("factor worker panicked")).sum::<usize>()
                });
            }
        }

        let mut core_samples = 0;
        if config.update_core {
            let batch = core_batch(train.nnz(), config.core_batch_cap, config.seed, t);
            let acc = accumulate_core(model, train, &batch, &mut workspaces)?;
            core_samples = acc.sample_count();
            core_sgd::core_apply(model, &acc, gamma_b, config.lambda_b, config.reduction)?;
        }
        elapsed += start.elapsed().as_secs_f64();
        stats.push(EpochStats {
            epoch: epoch + 1,
            factor_samples,
            core_samples,
        });

        if (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs {
            let (train_rmse, train_mae) = error_metrics(model, train)?;
            let (test_rmse, test_mae) = if split.test.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                error_metrics(model, &split.test)?
            };
            rows.push(MetricsRow {
                epoch: epoch + 1,
                wall_seconds: elapsed,
                train_rmse,
                train_mae,
                test_rmse,
                test_mae,
                gamma_a,
                gamma_b,
            });
        }
    }
    Ok((rows, stats))
}

/// Positions used for one core update: everything when it fits under the
/// cap, else a seeded sample without replacement.
fn core_batch(nnz: usize, cap: usize, seed: u64, epoch: u64) -> Vec<usize> {
    if nnz <= cap {
        return (0..nnz).collect();
    }
    let mut r = rng::stream(seed, &[CORE_STREAM, epoch]);
    rand::seq::index::sample(&mut r, nnz, cap).into_vec()
}

fn accumulate_core(
    model: &TuckerModel,
    data: &SparseTensorCoo,
    batch: &[usize],
    workspaces: &mut [Workspace],
) -> Result<CoreGradientAccumulator> {
    let factors = model.factors();
    let core = model.core();
    let run = |chunk: &[usize], ws: &mut Workspace| {
        let mut acc = CoreGradientAccumulator::for_model(model);
        for &p in chunk {
            core_sgd::accumulate_sample(factors, core, data.index(p), data.value(p), &mut acc, ws);
        }
        acc
    };
    if workspaces.len() == 1 {
        return Ok(run(batch, &mut workspaces[0]));
    }
    let chunk_len = batch.len().div_ceil(workspaces.len()).max(1);
    let parts: Vec<CoreGradientAccumulator> = thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk_len)
            .zip(workspaces.iter_mut())
            .map(|(chunk, ws)| s.spawn(move || run(chunk, ws)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("core worker panicked")).collect()
    });
    let mut total = CoreGradientAccumulator::for_model(model);
    for part in &parts {
        total.merge_from(part)?;
    }
    Ok(total)
}

pub const METRICS_HEADER: &str = "epoch,wall_seconds,train_rmse,train_mae,test_rmse,test_mae,gamma_a,gamma_b";

pub fn format_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            r.epoch, r.wall_seconds, r.train_rmse, r.train_mae, r.test_rmse, r.test_mae, r.gamma_a, r.gamma_b
        ));
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_metrics_csv(rows).as_bytes())
        .map_err(|e| Error::io(path, e))
}
