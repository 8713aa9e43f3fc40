//! `hst`: dataset generation, training, evaluation, benchmarks and sweeps.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hst::data::{gen_synthetic, load_dataset, save_dataset, split, Instance, PointDistribution, SyntheticConfig};
use hst::harness::{
    bench_leaf_sizes, bench_scaling, calibrate, configure_threads, evaluate, sweep, train, uq_report, write_bench_csv,
    write_history_csv, write_sweep_csv, BenchConfig, Method, QueryPlan, SweepParam, TrainConfig,
};
use hst::model::{load_checkpoint, save_checkpoint, AttentionMode, ModelConfig, ModelParams};
use hst::uq::AvUReport;

const CHECKPOINT_FILE: &str = "model.hstm";
const HISTORY_FILE: &str = "history.csv";
const CONFIG_FILE: &str = "config.json";

#[derive(Parser)]
#[command(name = "hst", version, about = "Hierarchical spatial transformer over irregular 2D point samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-process dataset.
    Gen(GenArgs),
    /// Train on a dataset split 7:1:2 and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Time forward encoding and count attention pairs.
    Bench(BenchArgs),
    /// Train once per value of a hyperparameter and report test error.
    Sweep(SweepArgs),
    /// Accuracy-versus-uncertainty report for a checkpoint, or for given counts.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Clustered,
}

#[derive(Args)]
struct GenArgs {
    /// Points per instance.
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 2)]
    feature_dim: usize,
    #[arg(long, value_enum, default_value_t = Dist::Uniform)]
    dist: Dist,
    /// Cluster count for `--dist clustered`.
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    /// Cluster standard deviation for `--dist clustered`.
    #[arg(long, default_value_t = 0.05)]
    spread: f64,
    #[arg(long, default_value_t = 0.1)]
    length_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Hierarchical,
    AllPair,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Encoder and decoder depth.
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Leaf capacity `M`.
    #[arg(long, default_value_t = 20)]
    leaf_capacity: usize,
    /// Positional length scale.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, value_enum, default_value_t = Mode::Hierarchical)]
    mode: Mode,
    /// Reject query locations outside the context bounds.
    #[arg(long)]
    strict_bounds: bool,
}

impl ModelArgs {
    fn config(&self, feature_dim: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            heads: self.heads,
            enc_layers: self.layers,
            dec_layers: self.layers,
            feature_dim,
            leaf_capacity: self.leaf_capacity,
            length_scale: self.sigma,
            seed,
            mode: match self.mode {
                Mode::Hierarchical => AttentionMode::Hierarchical,
                Mode::AllPair => AttentionMode::AllPair,
            },
            strict_bounds: self.strict_bounds,
        }
    }
}

#[derive(Args, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-7)]
    lr_min: f64,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    /// Query points per optimisation step.
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    /// Held-out queries drawn per instance per epoch.
    #[arg(long, default_value_t = 40)]
    queries: usize,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl OptimArgs {
    fn config(&self, model: ModelConfig) -> TrainConfig {
        TrainConfig {
            lr_init: self.lr,
            lr_min: self.lr_min,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            queries_per_instance: self.queries,
            weight_decay: self.weight_decay,
            model,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory for the checkpoint, history and resolved config.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    split: SplitName,
    #[arg(long, default_value_t = 40)]
    queries: usize,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    /// Split and query seed; defaults to the seed stored in the checkpoint.
    #[arg(long)]
    seed: Option<u64>,
    /// Per-query CSV of target, prediction, error, uncertainty.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated point counts.
    #[arg(long, value_delimiter = ',', default_value = "1024,4096,16384")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "hst,all_pair")]
    methods: Vec<String>,
    /// Comma-separated leaf capacities; when given, times HST at each size for each capacity.
    #[arg(long, value_delimiter = ',')]
    leaf_sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Instances per forward pass.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Largest `n` for the all-pair method.
    #[arg(long, default_value_t = 8192)]
    all_pair_cutoff: usize,
    #[arg(long, default_value_t = 1)]
    feature_dim: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// One of m, sigma, layers, d.
    #[arg(long)]
    param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, required_unless_present = "counts")]
    data: Option<PathBuf>,
    #[arg(long, required_unless_present = "counts")]
    checkpoint: Option<PathBuf>,
    /// Report on the four counts n_ac,n_au,n_ic,n_iu instead of a model.
    #[arg(long, value_delimiter = ',', num_args = 1, conflicts_with_all = ["data", "checkpoint"])]
    counts: Option<Vec<u64>>,
    #[arg(long, default_value_t = 40)]
    queries: usize,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Key-value metrics file.
    #[arg(long)]
    kv: Option<PathBuf>,
}

fn echo<C: Serialize>(command: &str, config: &C) -> Result<()> {
    eprintln!("hst {command}: {}", serde_json::to_string(config)?);
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load(path: &Path) -> Result<Vec<Instance>> {
    let data = load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if data.is_empty() {
        bail!("dataset {} has no instances", path.display());
    }
    Ok(data)
}

fn run_gen(a: GenArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n: a.n,
        instances: a.instances,
        feature_dim: a.feature_dim,
        length_scale: a.length_scale,
        variance: a.variance,
        noise: a.noise,
        distribution: match a.dist {
            Dist::Uniform => PointDistribution::Uniform,
            Dist::Clustered => PointDistribution::Clustered { k: a.clusters, spread: a.spread },
        },
        seed: a.seed,
    };
    echo("gen", &cfg)?;
    let data = gen_synthetic(&cfg)?;
    save_dataset(&a.out, &data, Some(&cfg))?;
    eprintln!("wrote {} instances to {}", data.len(), a.out.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let data = load(&a.data)?;
    let seed = a.optim.seed;
    let cfg = a.optim.config(a.model.config(data[0].points.feature_dim(), seed));
    echo("train", &cfg)?;
    let (tr, va, _) = split(&data, seed);
    let trained = train(&cfg, &tr, &va)?;
    let plan = QueryPlan::from_config(&cfg);
    let val = evaluate(&trained.params, &va, plan, cfg.batch_size)?;
    let params = calibrate(&trained.params, &val)?;
    fs::create_dir_all(&a.out_dir)?;
    save_checkpoint(&params, a.out_dir.join(CHECKPOINT_FILE))?;
    write_history_csv(&trained.history, File::create(a.out_dir.join(HISTORY_FILE))?)?;
    fs::write(a.out_dir.join(CONFIG_FILE), serde_json::to_string_pretty(&cfg)?)?;
    println!(
        "best_epoch={} epochs={} stopped_early={} val_mse={:.6} val_mae={:.6} t_u={}",
        trained.history.best_epoch,
        trained.history.records.len(),
        trained.history.stopped_early,
        val.mse,
        val.mae,
        params.uq.t_u
    );
    Ok(())
}

fn pick(data: &[Instance], which: SplitName, seed: u64) -> Vec<Instance> {
    let (tr, va, te) = split(data, seed);
    match which {
        SplitName::Train => tr,
        SplitName::Val => va,
        SplitName::Test => te,
    }
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let data = load(&a.data)?;
    let params: ModelParams<f64> = load_checkpoint(&a.checkpoint)?;
    let seed = a.seed.unwrap_or(params.config.seed);
    echo("eval", &serde_json::json!({ "model": params.config, "seed": seed, "queries": a.queries }))?;
    let set = pick(&data, a.split, seed);
    if set.is_empty() {
        bail!("selected split is empty");
    }
    let plan = QueryPlan::new(a.queries, seed);
    let r = evaluate(&params, &set, plan, a.batch_size)?;
    println!("queries={} mse={:.6} mae={:.6}", r.errors.len(), r.mse, r.mae);
    if let Some(path) = a.out {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["target", "prediction", "error", "uncertainty"])?;
        for i in 0..r.errors.len() {
            w.write_record([r.targets[i], r.y_hat[i], r.errors[i], r.uncertainties[i]].map(|v| v.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let methods = a.methods.iter().map(|m| m.parse::<Method>()).collect::<hst::Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        model: a.model.config(a.feature_dim, a.seed),
        reps: a.reps,
        batch: a.batch,
        all_pair_cutoff: a.all_pair_cutoff,
        seed: a.seed,
    };
    echo("bench", &serde_json::json!({ "config": cfg, "sizes": a.sizes, "methods": methods, "leaf_sizes": a.leaf_sizes }))?;
    let records = match &a.leaf_sizes {
        Some(caps) => {
            let mut out = Vec::new();
            for &n in &a.sizes {
                out.extend(bench_leaf_sizes(n, caps, &cfg)?);
            }
            out
        }
        None => bench_scaling(&a.sizes, &methods, &cfg)?,
    };
    let mut w = output(a.out.as_deref())?;
    write_bench_csv(&records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let param: SweepParam = a.param.parse()?;
    let data = load(&a.data)?;
    let seed = a.optim.seed;
    let cfg = a.optim.config(a.model.config(data[0].points.feature_dim(), seed));
    echo("sweep", &serde_json::json!({ "config": cfg, "param": param, "values": a.values }))?;
    let (tr, va, te) = split(&data, seed);
    let records = sweep(param, &a.values, &cfg, &tr, &va, &te)?;
    let mut w = output(a.out.as_deref())?;
    write_sweep_csv(&records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run_report(a: ReportArgs) -> Result<()> {
    let report = if let Some(c) = &a.counts {
        let [ac, au, ic, iu] = c[..] else { bail!("--counts takes exactly four values, got {}", c.len()) };
        echo("report", &serde_json::json!({ "counts": c }))?;
        AvUReport::from_counts(ac, au, ic, iu)
    } else {
        let (Some(data), Some(ckpt)) = (&a.data, &a.checkpoint) else { bail!("--data and --checkpoint are required") };
        let data = load(data)?;
        let params: ModelParams<f64> = load_checkpoint(ckpt)?;
        let seed = a.seed.unwrap_or(params.config.seed);
        echo("report", &serde_json::json!({ "model": params.config, "uq": params.uq, "seed": seed }))?;
        let plan = QueryPlan::new(a.queries, seed);
        let (_, va, te) = split(&data, seed);
        if va.is_empty() || te.is_empty() {
            bail!("dataset too small for a validation and test split");
        }
        let val = evaluate(&params, &va, plan, a.batch_size)?;
        let test = evaluate(&params, &te, plan, a.batch_size)?;
        uq_report(&val, &test, &params.uq)?
    };
    print!("{}", report.to_text());
    if let Some(path) = a.kv {
        fs::write(&path, report.to_key_values()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().map_err(anyhow::Error::from).and_then(|_| match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Bench(a) => run_bench(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Report(a) => run_report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
