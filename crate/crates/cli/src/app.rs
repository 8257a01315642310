//! Argument parsing and command dispatch for the `qubo` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qubo_core::data::{
    build_random_dataset, build_tsp_dataset, load_dataset, Dataset, DatasetKind, DatasetManifest,
    Split, SplitCounts, MANIFEST_FILE,
};
use qubo_core::metrics::Head;
use qubo_core::solve::MAX_BRUTE_FORCE_CITIES;
use qubo_nn::io::{load_model, save_model};
use qubo_nn::loss::DEFAULT_LAMBDA;
use qubo_nn::zoo::{build_autoencoder, build_cnn_solver, build_combined, transfer_weights, Arch};
use qubo_nn::{Loss, Model, OptimizerKind};

use crate::error::{CliError, Result};
use crate::evaluate::evaluate;
use crate::solve::{read_problem, solve_anneal, solve_brute, solve_nn};
use crate::train::{train, EpochStats, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "qubo",
    version,
    about = "Generate QUBO datasets, train neural solvers, evaluate and solve"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Random TSP instances encoded as QUBOs, labeled exactly.
    GenTsp {
        #[arg(long, value_parser = parse_cities)]
        cities: usize,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Random upper-triangular QUBOs over [-10000, 10000].
    GenRandom {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        size: u32,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Train an autoencoder to reconstruct the normalized matrices.
    TrainAe {
        #[arg(long, default_value = "cae")]
        arch: AeArch,
        #[arg(long, default_value_t = 0.25)]
        ratio: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train a CNN solver that maps a matrix to its optimal configuration.
    TrainSolver {
        #[command(flatten)]
        solver: SolverArgs,
        /// Model whose convolution weights initialize the new solver.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train a solver on the frozen encoder of a trained autoencoder.
    TrainCombined {
        /// Trained autoencoder model.
        #[arg(long)]
        encoder: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a model on one split; writes report.json and report.csv.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one problem and print the configuration.
    Solve {
        /// JSON-lines split file or plain matrix file.
        #[arg(long)]
        input: PathBuf,
        /// Record to take from a JSON-lines file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "brute")]
        method: SolveMethod,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset manifest with normalization bounds; defaults to the one
        /// next to the input file.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 11_000)]
    train: usize,
    #[arg(long, default_value_t = 1_000)]
    test: usize,
    #[arg(long, default_value_t = 1_000)]
    val: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Record the creation time in the manifest (output is then no longer
    /// byte-reproducible).
    #[arg(long)]
    stamp: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 600)]
    epochs: usize,
    #[arg(long = "batch", default_value_t = 128, value_parser = clap::value_parser!(u32).range(1..))]
    batch: u32,
    #[arg(long, default_value = "adam")]
    optimizer: OptimizerArg,
    /// Initial learning rate for sgd (adam uses its fixed default).
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for best/final models and history.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 128)]
    units: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value = "sigmoid")]
    head: HeadArg,
    /// Defaults to constrained for TSP datasets, bce otherwise.
    #[arg(long)]
    loss: Option<LossArg>,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda1: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda2: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AeArch {
    Vanilla,
    Mlae,
    Cae,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeadArg {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Bce,
    Constrained,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveMethod {
    Brute,
    Anneal,
    Nn,
}

fn parse_cities(s: &str) -> std::result::Result<usize, String> {
    let m: usize = s.parse().map_err(|e| format!("{e}"))?;
    if !(2..=MAX_BRUTE_FORCE_CITIES).contains(&m) {
        return Err(format!(
            "exact labeling supports 2 to {MAX_BRUTE_FORCE_CITIES} cities, got {m}"
        ));
    }
    Ok(m)
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::Val => Split::Val,
        }
    }
}

impl From<HeadArg> for Head {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Sigmoid => Head::Sigmoid,
            HeadArg::Softmax => Head::RowwiseSoftmax,
        }
    }
}

/// Parses the process arguments, runs the command, and returns the exit
/// status.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenTsp { cities, gen } => {
            let ds = build_tsp_dataset(cities, gen.counts(), gen.seed)?;
            gen.write(ds)
        }
        Command::GenRandom { size, gen } => {
            let ds = build_random_dataset(size as usize, gen.counts(), gen.seed)?;
            gen.write(ds)
        }
        Command::TrainAe { arch, ratio, run } => {
            let ds = load_dataset(&run.data)?;
            let arch = match arch {
                AeArch::Vanilla => Arch::VanillaAe,
                AeArch::Mlae => Arch::Mlae,
                AeArch::Cae => Arch::Cae,
            };
            let n = ds.manifest.n;
            let model = build_autoencoder(arch, &[1, n, n], ratio, run.seed)?;
            run.train(model, &ds, Loss::Mse)
        }
        Command::TrainSolver {
            solver,
            pretrained,
            run,
        } => {
            let ds = load_dataset(&run.data)?;
            let n = ds.manifest.n;
            let mut model = solver.build(&[1, n, n], n, run.seed)?;
            if let Some(path) = pretrained {
                let src = load_model(&path)?;
                model = transfer_weights(&src, &model)?;
            }
            let loss = solver.loss(&ds.manifest)?;
            run.train(model, &ds, loss)
        }
        Command::TrainCombined {
            encoder,
            solver,
            run,
        } => {
            let ds = load_dataset(&run.data)?;
            let ae = load_model(&encoder)?;
            let latent = ae.net.layer_output_shape(ae.latent_layer()?).to_vec();
            let head = solver.build(&latent, ds.manifest.n, run.seed)?;
            let model = build_combined(&ae, &head)?;
            let loss = solver.loss(&ds.manifest)?;
            run.train(model, &ds, loss)
        }
        Command::Eval {
            model,
            data,
            split,
            seed,
            out,
        } => {
            let model = load_model(&model)?;
            let ds = load_dataset(&data)?;
            let a = evaluate(&model, &ds, split.into(), seed)?;
            fs::create_dir_all(&out)?;
            let mut json = serde_json::to_string_pretty(&a.report)?;
            json.push('\n');
            fs::write(out.join("report.json"), json)?;
            fs::write(out.join("report.csv"), a.report.csv())?;
            print!("{}", a.report.csv());
            Ok(())
        }
        Command::Solve {
            input,
            index,
            method,
            model,
            manifest,
            seed,
        } => {
            if method == SolveMethod::Nn && model.is_none() {
                return Err(CliError::Usage("--method nn needs --model".into()));
            }
            let problem = read_problem(&input, index)?;
            let solution = match method {
                SolveMethod::Brute => solve_brute(&problem)?,
                SolveMethod::Anneal => solve_anneal(&problem, seed)?,
                SolveMethod::Nn => {
                    let model = load_model(model.as_deref().expect("checked above"))?;
                    let path = manifest.unwrap_or_else(|| {
                        input.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE)
                    });
                    let text = fs::read_to_string(&path)
                        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
                    let manifest: DatasetManifest = serde_json::from_str(&text)?;
                    solve_nn(&problem, &model, &manifest)?
                }
            };
            print!("{solution}");
            Ok(())
        }
    }
}

impl GenArgs {
    fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train,
            test: self.test,
            val: self.val,
        }
    }

    fn write(&self, mut ds: Dataset) -> Result<()> {
        if self.stamp {
            let now = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            ds.manifest.created_unix = Some(now.as_secs());
        }
        ds.write(&self.out)?;
        Ok(())
    }
}

impl SolverArgs {
    fn build(&self, input_dims: &[usize], n: usize, seed: u64) -> Result<Model> {
        Ok(build_cnn_solver(
            input_dims,
            n,
            self.units,
            self.dropout,
            self.head.into(),
            seed,
        )?)
    }

    fn loss(&self, manifest: &DatasetManifest) -> Result<Loss> {
        let kind = self.loss.unwrap_or(match manifest.kind {
            DatasetKind::Tsp => LossArg::Constrained,
            DatasetKind::Random => LossArg::Bce,
        });
        match kind {
            LossArg::Bce => Ok(Loss::Bce),
            LossArg::Constrained => {
                let m = manifest.m.ok_or_else(|| {
                    CliError::Usage("constrained loss needs a TSP dataset".into())
                })?;
                Ok(Loss::ConstrainedBce {
                    m,
                    lambda1: self.lambda1,
                    lambda2: self.lambda2,
                })
            }
        }
    }
}

impl RunArgs {
    fn config(&self, loss: Loss) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch as usize,
            optimizer: match self.optimizer {
                OptimizerArg::Adam => OptimizerKind::Adam,
                OptimizerArg::Sgd => OptimizerKind::SgdDecay { lr0: self.lr },
            },
            loss,
            seed: self.seed,
        }
    }

    /// Trains and writes `history.csv` (one row per epoch, flushed as it
    /// goes) plus `best` and `final` models under the output directory.
    fn train(&self, model: Model, ds: &Dataset, loss: Loss) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        let mut csv = fs::File::create(self.out.join("history.csv"))?;
        writeln!(csv, "{}", EpochStats::CSV_HEADER)?;
        let cfg = self.config(loss);
        let outcome = train(model, ds, &cfg, &mut |stats, _, _| {
            writeln!(csv, "{}", stats.csv_row())?;
            csv.flush()?;
            eprintln!("{}", stats.csv_row());
            Ok(())
        })?;
        save_model(&outcome.best, &self.out.join("best"))?;
        save_model(&outcome.last, &self.out.join("final"))?;
        eprintln!("best epoch {} of {}", outcome.best_epoch, cfg.epochs);
        Ok(())
    }
}
