//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a precondition fails (bad flags, shape
//! mismatches, malformed input), 2 on I/O errors.

use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::core_sgd::BatchReduction;
use crate::model::{init_model, ModelConfig, TuckerModel};
use crate::partition::round_schedule;
use crate::sparse_tensor::{self, generate_synthetic, load_coo, write_coo, SparseTensorCoo, SyntheticSpec};
use crate::trainer::{self, TrainConfig};
use crate::DatasetSplit;

#[derive(Debug, Parser)]
#[command(name = "sptucker", version, about = "Sparse Tucker decomposition trained by SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic tensor from a random ground-truth model
    Gen(GenArgs),
    /// Split a tensor into train and test files
    Split(SplitArgs),
    /// Train a model and write metrics and a checkpoint
    Train(TrainArgs),
    /// Print RMSE and MAE of a model on a tensor
    Eval(EvalArgs),
    /// Time epochs over a grid of ranks and worker counts
    Bench(BenchArgs),
    /// Print the round schedule for a given order and part count
    PartitionDump(DumpArgs),
}

#[derive(Debug, Args)]
struct IndexBase {
    /// Index base of COO files (1 matches FROSTT)
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
    index_base: u8,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long)]
    nnz: usize,
    /// Core ranks: a comma list, or one value for every mode
    #[arg(long, value_delimiter = ',', default_value = "4")]
    j: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    rcore: usize,
    /// Standard deviation of added Gaussian noise
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Initialization scale of the ground-truth model
    #[arg(long, default_value_t = SyntheticSpec::DEFAULT_SCALE)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth checkpoint path [default: <out>.model]
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[command(flatten)]
    base: IndexBase,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
    #[command(flatten)]
    base: IndexBase,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training tensor
    #[arg(long)]
    data: PathBuf,
    /// Held-out tensor
    #[arg(long)]
    test: Option<PathBuf>,
    /// Explicit tensor dims, overriding what the files imply
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Core ranks: a comma list, or one value for every mode
    #[arg(long, value_delimiter = ',', default_value = "4")]
    j: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    rcore: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0.009)]
    alpha_a: f64,
    #[arg(long, default_value_t = 0.05)]
    beta_a: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_a: f64,
    #[arg(long, default_value_t = 0.0045)]
    alpha_b: f64,
    #[arg(long, default_value_t = 0.1)]
    beta_b: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_b: f64,
    /// Keep the core factors fixed
    #[arg(long)]
    no_core: bool,
    #[arg(long, default_value_t = 1 << 20)]
    core_batch_cap: usize,
    #[arg(long, value_enum, default_value_t = Reduction::Mean)]
    core_reduction: Reduction,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Initialization scale [default: derived from the mean training value]
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics CSV path [default: stdout]
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh model
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    base: IndexBase,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    base: IndexBase,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "200,200,200")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    nnz: usize,
    /// Values of J (used for every mode)
    #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
    j: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
    rcore: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[arg(long)]
    order: usize,
    #[arg(long)]
    parts: usize,
}

struct Failure {
    code: i32,
    message: String,
}

trait Context<T> {
    fn ctx(self, what: impl Display) -> Result<T, Failure>;
}

impl<T> Context<T> for crate::Result<T> {
    fn ctx(self, what: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: if e.is_io() { 2 } else { 1 },
            message: format!("{what}: {e}"),
        })
    }
}

fn precondition(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::PartitionDump(a) => partition_dump(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn expand_ranks(j: &[usize], order: usize) -> Result<Vec<usize>, Failure> {
    match j.len() {
        1 => Ok(vec![j[0]; order]),
        n if n == order => Ok(j.to_vec()),
        n => Err(precondition(format!("--j: got {n} ranks for an order-{order} tensor"))),
    }
}

fn load(path: &Path, base: &IndexBase) -> Result<SparseTensorCoo, Failure> {
    load_coo(path, base.index_base as usize).ctx(path.display())
}

fn with_dims(t: SparseTensorCoo, dims: &[usize], what: &Path) -> Result<SparseTensorCoo, Failure> {
    if t.dims() == dims {
        return Ok(t);
    }
    let entries: Vec<(Vec<usize>, f64)> = t.iter().map(|(i, v)| (i.to_vec(), v)).collect();
    SparseTensorCoo::from_entries(dims.to_vec(), &entries).ctx(format!("{} does not fit dims {dims:?}", what.display()))
}

fn write_stdout_or(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_failure(Path::new("<stdout>"), e)),
    }
}

fn gen(a: GenArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        j_ranks: expand_ranks(&a.j, a.dims.len())?,
        dims: a.dims,
        nnz: a.nnz,
        r_core: a.rcore,
        noise_sigma: a.noise,
        init_scale: a.scale,
        seed: a.seed,
    };
    let (tensor, truth) = generate_synthetic(&spec).ctx("gen")?;
    write_coo(&tensor, &a.out, a.base.index_base as usize).ctx(a.out.display())?;
    let model_out = a.model_out.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".model");
        p.into()
    });
    truth.save(&model_out).ctx(model_out.display())?;
    println!(
        "wrote {} entries to {} and the ground-truth model to {}",
        tensor.nnz(),
        a.out.display(),
        model_out.display()
    );
    Ok(())
}

fn split(a: SplitArgs) -> Result<(), Failure> {
    let t = load(&a.data, &a.base)?;
    let s = sparse_tensor::split(&t, a.test_fraction, a.seed).ctx("--test-fraction")?;
    let base = a.base.index_base as usize;
    write_coo(&s.train, &a.train_out, base).ctx(a.train_out.display())?;
    write_coo(&s.test, &a.test_out, base).ctx(a.test_out.display())?;
    println!("train {} entries, test {} entries", s.train.nnz(), s.test.nnz());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let train = load(&a.data, &a.base)?;
    let test = match &a.test {
        Some(p) => Some(load(p, &a.base)?),
        None => None,
    };
    let resumed = match &a.resume {
        Some(p) => Some(TuckerModel::load(p).ctx(p.display())?),
        None => None,
    };

    let dims: Vec<usize> = if let Some(d) = &a.dims {
        d.clone()
    } else if let Some(m) = &resumed {
        m.dims().to_vec()
    } else {
        let mut d = train.dims().to_vec();
        if let Some(t) = &test {
            if t.order() != d.len() {
                return Err(precondition("--test: order differs from --data"));
            }
            for (x, &y) in d.iter_mut().zip(t.dims()) {
                *x = (*x).max(y);
            }
        }
        d
    };
    let train = with_dims(train, &dims, &a.data)?;
    let test = match test {
        Some(t) => with_dims(t, &dims, a.test.as_deref().unwrap_or(Path::new("--test")))?,
        None => SparseTensorCoo::new(dims.clone()).ctx("--dims")?,
    };

    let mut model = match resumed {
        Some(m) => {
            if m.dims() != dims.as_slice() {
                return Err(precondition(format!("--resume: model dims {:?} differ from data dims {dims:?}", m.dims())));
            }
            m
        }
        None => {
            let config = ModelConfig {
                j_ranks: expand_ranks(&a.j, dims.len())?,
                r_core: a.rcore,
                init_scale_factor: a
                    .init_scale
                    .unwrap_or_else(|| ModelConfig::scale_for_mean(train.mean_value(), dims.len())),
                seed: a.seed,
            };
            init_model(&dims, &config).ctx("model initialization")?
        }
    };
    if model.core_rank_exceeds_min_j() {
        eprintln!(
            "warning: rcore {} exceeds the smallest core rank {:?}; the core factors are over-parameterized",
            model.r_core(),
            model.j_ranks()
        );
    }

    let config = TrainConfig {
        epochs: a.epochs,
        workers: a.workers,
        update_core: !a.no_core,
        alpha_a: a.alpha_a,
        beta_a: a.beta_a,
        lambda_a: a.lambda_a,
        alpha_b: a.alpha_b,
        beta_b: a.beta_b,
        lambda_b: a.lambda_b,
        core_batch_cap: a.core_batch_cap,
        seed: a.seed,
        eval_every: a.eval_every,
        reduction: match a.core_reduction {
            Reduction::Mean => BatchReduction::Mean,
            Reduction::Sum => BatchReduction::Sum,
        },
    };
    let split = DatasetSplit { train, test };
    let rows = trainer::train(&mut model, &split, &config).ctx("train")?;
    if !model.is_finite() {
        eprintln!("warning: training diverged to non-finite parameters; try smaller --alpha-a/--alpha-b");
    }
    write_stdout_or(a.metrics_out.as_deref(), &trainer::format_metrics_csv(&rows))?;
    if let Some(p) = &a.model_out {
        model.save(p).ctx(p.display())?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let model = TuckerModel::load(&a.model).ctx(a.model.display())?;
    let data = load(&a.data, &a.base)?;
    if data.order() != model.order() {
        return Err(precondition(format!("{}: order differs from the model", a.data.display())));
    }
    let data = with_dims(data, model.dims(), &a.data)?;
    let (rmse, mae) = trainer::error_metrics(&model, &data).ctx(a.data.display())?;
    println!("rmse {rmse}");
    println!("mae {mae}");
    Ok(())
}

pub const BENCH_HEADER: &str = "j,r_core,workers,nnz,epochs,seconds_per_epoch,train_rmse";

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let order = a.dims.len();
    let spec = SyntheticSpec {
        dims: a.dims.clone(),
        nnz: a.nnz,
        j_ranks: vec![4; order],
        r_core: 4,
        noise_sigma: 0.0,
        init_scale: SyntheticSpec::DEFAULT_SCALE,
        seed: a.seed,
    };
    let (tensor, _) = generate_synthetic(&spec).ctx("bench data")?;
    let scale = ModelConfig::scale_for_mean(tensor.mean_value(), order);
    let split = DatasetSplit {
        test: SparseTensorCoo::new(a.dims.clone()).ctx("--dims")?,
        train: tensor,
    };
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for &j in &a.j {
        for &r in &a.rcore {
            for &w in &a.workers {
                let config = ModelConfig {
                    j_ranks: vec![j; order],
                    r_core: r,
                    init_scale_factor: scale,
                    seed: a.seed,
                };
                let mut model = init_model(&a.dims, &config).ctx("bench model")?;
                let tc = TrainConfig {
                    epochs: a.epochs,
                    workers: w,
                    eval_every: a.epochs.max(1),
                    seed: a.seed,
                    ..TrainConfig::default()
                };
                let rows = trainer::train(&mut model, &split, &tc).ctx(format!("bench j={j} rcore={r} workers={w}"))?;
                let last = rows.last().expect("at least one metrics row");
                let line = format!(
                    "{j},{r},{w},{},{},{:.6},{:.6e}",
                    split.train.nnz(),
                    a.epochs,
                    last.wall_seconds / a.epochs as f64,
                    last.train_rmse
                );
                eprintln!("{line}");
                out.push_str(&line);
                out.push('\n');
            }
        }
    }
    write_stdout_or(a.out.as_deref(), &out)
}

fn partition_dump(a: DumpArgs) -> Result<(), Failure> {
    let s = round_schedule(a.order, a.parts).ctx("partition-dump")?;
    print!("{}", s.to_text());
    Ok(())
}
