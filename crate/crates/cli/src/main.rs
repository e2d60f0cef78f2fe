//! `shapeseg`: generate phantom datasets, train single arms, run the
//! four-arm ablation and evaluate checkpoints.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shapeseg::ablation::{evaluate_dice, run_ablation, DiceTable};
use shapeseg::checkpoint::{load_checkpoint, save_checkpoint};
use shapeseg::config::RunConfig;
use shapeseg::dataset::{generate_dataset, read_dataset, write_dataset, Dataset};
use shapeseg::format::{write_atomic, ArrayFile};
use shapeseg::report;
use shapeseg::train::{train, Arm};
use shapeseg::unet::{predict_labels, NetConfig, UNet};
use shapeseg::{Error, FormatError};

#[derive(Parser)]
#[command(name = "shapeseg", version, about = "Shape-aware multi-organ segmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset with its distance and contour targets.
    Gen(Common),
    /// Train one ablation arm.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        arm: Option<Arm>,
    },
    /// Train all four arms and write the comparison report and plots.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write predicted distance (.dst) and contour (.ctr) maps.
        #[arg(long)]
        dump_targets: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_MISSING: u8 = 3;
const EXIT_FORMAT: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn config(e: impl std::fmt::Display) -> Self {
        Self::new(EXIT_CONFIG, format!("config error: {e}"))
    }

    fn compat(e: impl std::fmt::Display) -> Self {
        Self::new(EXIT_FORMAT, format!("incompatible input: {e}"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Format(FormatError::MissingFile(_)) => EXIT_MISSING,
            Error::Format(_) => EXIT_FORMAT,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            Error::Io { .. } => EXIT_IO,
            Error::Numerical(_) | Error::Training { .. } => EXIT_NUMERICAL,
            Error::InvalidInput(_) | Error::InvalidArgument(_) | Error::InvalidShape(_) | Error::Arm { .. } => {
                EXIT_FORMAT
            }
        };
        Self::new(code, e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn resolve(common: &Common, dataset: Option<&PathBuf>, arm: Option<Arm>) -> CliResult<RunConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                let code = if e.kind() == std::io::ErrorKind::NotFound { EXIT_MISSING } else { EXIT_IO };
                Failure::new(code, format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::parse(&text).map_err(Failure::config)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(threads) = common.threads {
        config.threads = threads;
    }
    if let Some(out) = &common.out {
        config.paths.out = Some(out.clone());
    }
    if let Some(d) = dataset {
        config.paths.dataset = Some(d.clone());
    }
    if let Some(arm) = arm {
        config.train.arm = arm;
    }
    config.validate().map_err(Failure::config)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build_global()
        .map_err(|e| Failure::new(EXIT_IO, format!("cannot start worker threads: {e}")))?;
    Ok(config)
}

fn out_dir(config: &RunConfig) -> CliResult<PathBuf> {
    let out = config
        .paths
        .out
        .clone()
        .ok_or_else(|| Failure::config("no output directory (use --out or [paths] out)"))?;
    fs::create_dir_all(&out).map_err(|e| Failure::new(EXIT_IO, format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    Ok(write_atomic(path, contents.as_ref())?)
}

fn echo_config(config: &RunConfig, out: &Path) -> CliResult<()> {
    write(&out.join("config.toml"), config.render())
}

fn load_dataset(config: &RunConfig) -> CliResult<Dataset> {
    let path = config
        .paths
        .dataset
        .as_ref()
        .ok_or_else(|| Failure::config("no dataset directory (use --dataset or [paths] dataset)"))?;
    if !path.is_dir() {
        return Err(Failure::new(EXIT_MISSING, format!("dataset directory {} not found", path.display())));
    }
    Ok(read_dataset(path)?)
}

fn check_compatible(dataset: &Dataset, net: &NetConfig) -> CliResult<()> {
    if dataset.num_classes != net.num_classes {
        return Err(Failure::compat(format!(
            "dataset has {} classes, network {}",
            dataset.num_classes, net.num_classes
        )));
    }
    let m = net.spatial_multiple();
    if dataset.height % m != 0 || dataset.width % m != 0 {
        return Err(Failure::compat(format!(
            "dataset extents {}x{} are not multiples of {m} (depth {})",
            dataset.height, dataset.width, net.depth
        )));
    }
    Ok(())
}

fn cmd_gen(common: Common) -> CliResult<()> {
    let config = resolve(&common, None, None)?;
    let out = out_dir(&config)?;
    let dataset = generate_dataset(&config.dataset, config.seed)?;
    write_dataset(&dataset, &out)?;
    echo_config(&config, &out)?;
    let counts: Vec<String> = dataset
        .splits
        .iter()
        .map(|s| format!("{} {}", s.name, s.samples.len()))
        .collect();
    println!(
        "wrote {} samples ({}) with seed {} to {}",
        dataset.len(),
        counts.join(", "),
        config.seed,
        out.display()
    );
    Ok(())
}

fn cmd_train(common: Common, dataset: Option<PathBuf>, arm: Option<Arm>) -> CliResult<()> {
    let config = resolve(&common, dataset.as_ref(), arm)?;
    let data = load_dataset(&config)?;
    check_compatible(&data, &config.net)?;
    let out = out_dir(&config)?;
    echo_config(&config, &out)?;
    let outcome = train(
        &data.split("train")?.samples,
        &data.split("val")?.samples,
        config.net,
        &config.train_config(),
    )?;
    save_checkpoint(&outcome.model, &out.join("checkpoint.ckpt"))?;
    write(&out.join("epochs.csv"), report::epoch_log_csv(&outcome.log))?;
    println!(
        "arm {}: {} epochs, best validation loss {:.6} at epoch {}",
        config.train.arm, outcome.epochs_run, outcome.best_val_loss, outcome.best_epoch
    );
    Ok(())
}

fn cmd_ablate(common: Common, dataset: Option<PathBuf>) -> CliResult<()> {
    let config = resolve(&common, dataset.as_ref(), None)?;
    let data = load_dataset(&config)?;
    check_compatible(&data, &config.net)?;
    let out = out_dir(&config)?;
    echo_config(&config, &out)?;
    let outcome = run_ablation(&data, config.net, &config.train_config())?;
    for (arm, run) in &outcome.runs {
        let dir = out.join(arm.name());
        fs::create_dir_all(&dir).map_err(|e| Failure::new(EXIT_IO, format!("cannot create {}: {e}", dir.display())))?;
        save_checkpoint(&run.model, &dir.join("checkpoint.ckpt"))?;
        write(&dir.join("epochs.csv"), report::epoch_log_csv(&run.log))?;
    }
    let r = &outcome.report;
    write(&out.join("eval_report.csv"), report::report_dice_csv(r))?;
    write(&out.join("wilcoxon.csv"), report::wilcoxon_csv(r))?;
    write(&out.join("status.csv"), report::status_csv(r))?;
    let summary = report::summary_markdown(r);
    write(&out.join("summary.md"), &summary)?;
    for class in 1..r.num_classes {
        write(&out.join(format!("boxplot_organ{class}.svg")), report::box_plot_svg(r, class as u8))?;
    }
    print!("{summary}");
    match outcome.failures.into_iter().next() {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn dump_predictions(model: &UNet, data: &Dataset, split: &str, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_IO, format!("cannot create {}: {e}", dir.display())))?;
    for s in &data.split(split)?.samples {
        let pred = model.forward(&s.image)?;
        let (h, w) = (data.height, data.width);
        let dist = ArrayFile::f64(vec![h, w], pred.dist.data().to_vec());
        let contour = predict_labels(&pred.contour_logits)?;
        let ctr = ArrayFile::u8(vec![h, w], contour.labels().to_vec());
        write(&dir.join(format!("{}.dst", s.index)), dist.encode())?;
        write(&dir.join(format!("{}.ctr", s.index)), ctr.encode())?;
    }
    Ok(())
}

fn cmd_eval(common: Common, checkpoint: PathBuf, dataset: Option<PathBuf>, split: String, dump: bool) -> CliResult<()> {
    let config = resolve(&common, dataset.as_ref(), None)?;
    let model = load_checkpoint(&checkpoint)?;
    let data = load_dataset(&config)?;
    check_compatible(&data, model.config())?;
    let samples = &data.split(&split).map_err(Failure::config)?.samples;
    let out = out_dir(&config)?;
    let table = DiceTable::new(evaluate_dice(&model, samples)?)?;
    write(&out.join("dice.csv"), report::dice_csv(&table))?;
    write(&out.join("aggregate.csv"), report::aggregate_csv(&table))?;
    if dump {
        dump_predictions(&model, &data, &split, &out.join("predictions"))?;
    }
    match table.global {
        Some(g) => println!("{split}: mean dice {g} over {} scored organ cases", g.n),
        None => println!("{split}: no organ present in any case"),
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(common) => cmd_gen(common),
        Command::Train { common, dataset, arm } => cmd_train(common, dataset, arm),
        Command::Ablate { common, dataset } => cmd_ablate(common, dataset),
        Command::Eval {
            common,
            checkpoint,
            dataset,
            split,
            dump_targets,
        } => cmd_eval(common, checkpoint, dataset, split, dump_targets),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("shapeseg: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
