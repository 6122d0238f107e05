use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ltlab::criteria::{one_shot_mask, Criterion, WeightSnapshot};
use ltlab::mask::Mask;
use ltlab::nn::arch::{ArchKind, NetworkArch};
use ltlab::nn::params::ParameterSet;
use ltlab::pipeline::{train_to_completion, Seeds, TrainConfig};
use ltlab::runner::config::{DataSection, RunConfig};
use ltlab::runner::results::{render_table1, summarize_dir, table1, table_is_blank, write_summary};
use ltlab::runner::{load_data, run_lt, run_supermask_eval, run_supermask_train, RunOptions, RunReport};
use ltlab::supermask::{SupermaskPack, Treatment};
use ltlab::{Result, RngStream};

#[derive(Parser)]
#[command(name = "ltlab", version, about = "Lottery-ticket pruning and Supermask experiments")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Iterative pruning sweep from the [lt] section of a config.
    LtRun(RunArgs),
    /// One-shot heuristic Supermasks from the [supermask] section.
    SupermaskEval(RunArgs),
    /// Learned Supermasks from the [learned] section.
    SupermaskTrain(RunArgs),
    /// Build a one-shot Supermask and store it as seed + packed bits.
    Pack(PackArgs),
    /// Inspect a packed Supermask and optionally evaluate it.
    Unpack(UnpackArgs),
    /// Best-Supermask table from supermask_results.csv in --out.
    Table1(OutArgs),
    /// Recompute summary.json from the result files in --out.
    Summarize(OutArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PackArgs {
    #[arg(long)]
    arch: ArchKind,
    /// Init seed of the untrained network.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "signed_constant")]
    treatment: Treatment,
    #[arg(long, default_value = "large_final_same_sign")]
    criterion: Criterion,
    /// Fraction of each layer kept.
    #[arg(long, default_value_t = 0.3)]
    remaining: f64,
    /// Required unless the criterion is `random`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Training iterations for the dense network (default per architecture).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct UnpackArgs {
    #[arg(long)]
    input: PathBuf,
    /// Evaluate on this dataset's test split.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct OutArgs {
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn run_args(args: &RunArgs) -> Result<(RunConfig, RunOptions)> {
    let config = RunConfig::load(&args.config)?;
    let opts = RunOptions {
        trials: args.trials,
        jobs: args.jobs,
        out: args.out.clone(),
        data_dir: args.data_dir.clone(),
        seed: args.seed,
    };
    Ok((config, opts))
}

fn report(r: &RunReport, out: &Path) {
    println!(
        "{} trials run, {} skipped; {} summary cells written to {}",
        r.executed,
        r.skipped,
        r.summary.lt_cells.len() + r.summary.supermask_cells.len(),
        out.display()
    );
}

fn data_section(dir: &Path) -> DataSection {
    DataSection {
        dir: Some(dir.to_path_buf()),
        ..DataSection::default()
    }
}

fn pack(args: &PackArgs) -> Result<()> {
    let arch = NetworkArch::new(args.arch);
    let initial = ParameterSet::<f32>::from_seed(&arch, args.seed)?;
    let mut ties = RngStream::new("ties", args.seed);
    let data = args
        .data_dir
        .as_deref()
        .map(|d| load_data(args.arch, &data_section(d)))
        .transpose()?;
    let last = match (&data, args.criterion) {
        (_, Criterion::Random) => initial.clone(),
        (Some(data), _) => {
            let mut train = TrainConfig::for_arch(args.arch);
            if let Some(n) = args.iterations {
                train.iterations = n;
            }
            let seeds = Seeds::derive(args.seed, 0);
            let shuffle = RngStream::new("shuffle", seeds.shuffle);
            train_to_completion(&arch, initial.clone(), &Mask::ones(&arch), data, &train, shuffle)?.final_params
        }
        (None, c) => {
            return Err(ltlab::Error::InvalidArgument(format!(
                "criterion {c} needs trained weights; pass --data-dir"
            )))
        }
    };
    let snapshot = WeightSnapshot::from_params(&initial, &last)?;
    let mask = one_shot_mask(&arch, args.criterion, &snapshot, args.remaining, &mut ties)?;
    let pack = SupermaskPack {
        arch: args.arch.name().into(),
        seed: args.seed,
        treatment: args.treatment,
        mask,
    };
    pack.save(&args.output)?;
    println!(
        "wrote {} ({} bytes, {:.2}% weights kept)",
        args.output.display(),
        pack.to_bytes()?.len(),
        100.0 * pack.mask.remaining_fraction()
    );
    if let Some(data) = &data {
        println!("test accuracy {:.4}", pack.evaluate::<f32>(&data.test)?);
    }
    Ok(())
}

fn unpack(args: &UnpackArgs) -> Result<()> {
    let pack = SupermaskPack::load(&args.input)?;
    println!("arch {}  seed {}  treatment {}", pack.arch, pack.seed, pack.treatment);
    for (i, layer) in pack.mask.layers().iter().enumerate() {
        println!("  layer {i}: {:?} {}/{} kept", layer.shape(), layer.ones(), layer.len());
    }
    if let Some(dir) = &args.data_dir {
        let kind: ArchKind = pack.arch.parse()?;
        let data = load_data(kind, &data_section(dir))?;
        println!("test accuracy {:.4}", pack.evaluate::<f32>(&data.test)?);
    }
    Ok(())
}

fn table(args: &OutArgs) -> Result<bool> {
    let summary = summarize_dir(&args.out)?;
    let rows = table1(&summary.supermask_cells);
    let md = render_table1(&rows);
    print!("{md}");
    std::fs::create_dir_all(&args.out).map_err(|e| ltlab::Error::io(&args.out, e))?;
    let path = args.out.join("table1.md");
    std::fs::write(&path, &md).map_err(|e| ltlab::Error::io(&path, e))?;
    let path = args.out.join("table1.json");
    std::fs::write(&path, serde_json::to_string_pretty(&rows)?).map_err(|e| ltlab::Error::io(&path, e))?;
    for row in &rows {
        for cell in row.cells.iter().flatten().filter(|c| c.under_sampled) {
            log::warn!(
                "{}: cell at {:.1}% averaged over only {} runs",
                row.arch,
                100.0 * cell.accuracy,
                cell.runs
            );
        }
    }
    let blank = table_is_blank(&rows);
    if blank {
        log::warn!("no Supermask results in {}", args.out.display());
    }
    Ok(!blank)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::LtRun(a) => run_args(a)
            .and_then(|(c, o)| run_lt(&c, &o))
            .map(|r| report(&r, &a.out))
            .map(|_| true),
        Command::SupermaskEval(a) => run_args(a)
            .and_then(|(c, o)| run_supermask_eval(&c, &o))
            .map(|r| report(&r, &a.out))
            .map(|_| true),
        Command::SupermaskTrain(a) => run_args(a)
            .and_then(|(c, o)| run_supermask_train(&c, &o))
            .map(|r| report(&r, &a.out))
            .map(|_| true),
        Command::Pack(a) => pack(a).map(|_| true),
        Command::Unpack(a) => unpack(a).map(|_| true),
        Command::Table1(a) => table(a),
        Command::Summarize(a) => summarize_dir(&a.out).and_then(|s| {
            write_summary(&a.out, &s)?;
            println!(
                "{} cells, {} comparisons",
                s.lt_cells.len() + s.supermask_cells.len(),
                s.comparisons.len()
            );
            Ok(true)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
