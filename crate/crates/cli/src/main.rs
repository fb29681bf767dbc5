//! `pbit-dbn`: device curves, array sweeps, calibration, DBN training and
//! evaluation from the command line. Every output is CSV.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pbit_dbn::checkpoint;
use pbit_dbn::crossbar::{array_sweep, calibrate_read_path, sweep_csv, CrossbarConfig, POWER_ANCHOR_W, TABLE3, TABLE4};
use pbit_dbn::dataio::{
    binarize, data_dir_from_env, load_image_set, resolve_file, subsample_indices, Binarize, ImageSet,
    DEFAULT_THRESHOLD, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};
use pbit_dbn::dbn::{eval_csv_row, greedy_train, parse_topology, DbnConfig, DbnModel, ReadoutConfig, EVAL_HEADER};
use pbit_dbn::dwm::DEFAULT_STATES;
use pbit_dbn::pbit::{current_sweep, curve_csv, DeviceCurve};
use pbit_dbn::rbm::{CdConfig, HardwareConfig};
use pbit_dbn::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_MISSING: u8 = 3;
const EXIT_CORRUPT: u8 = 4;

#[derive(Parser)]
#[command(name = "pbit-dbn", version, about = "Deep belief networks on simulated p-bit hardware")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Output probability of the calibrated p-bit over a current sweep.
    DeviceCurve(CurveArgs),
    /// Current range, probability range and read power per array size and R_P.
    ArraySweep(SweepArgs),
    /// Fitted device and read-path parameters.
    Calibrate(OutArgs),
    /// Train a DBN and write a checkpoint plus a per-epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test set.
    Eval(EvalArgs),
    /// Train and evaluate a grid of topologies and training-set sizes.
    Report(ReportArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    /// Lowest current (uA).
    #[arg(long, default_value_t = -60.0, allow_hyphen_values = true)]
    min_ua: f64,
    /// Highest current (uA).
    #[arg(long, default_value_t = 60.0, allow_hyphen_values = true)]
    max_ua: f64,
    #[arg(long, default_value_t = 241)]
    points: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Array sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    array_n: Vec<usize>,
    /// Parallel-state resistances in MOhm, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    rp_mohm: Vec<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ideal,
    Hardware,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BinarizeArg {
    Threshold,
    Stochastic,
}

#[derive(Args)]
struct DataArgs {
    /// Defaults to $MAGB_DATA_DIR (or ./data/mnist) plus the standard MNIST name.
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "threshold")]
    binarize: BinarizeArg,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: u8,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value = "784x10")]
    topology: String,
    #[arg(long, value_enum, default_value = "ideal")]
    mode: ModeArg,
    /// CD epochs per hidden layer.
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// CD learning rate.
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Gibbs steps in the negative phase.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    readout_epochs: usize,
    #[arg(long, default_value_t = 10)]
    readout_batch: usize,
    #[arg(long, default_value_t = 0.1)]
    readout_lr: f64,
    /// Hardware: fixed column height; by default each column holds one cell per input.
    #[arg(long)]
    array_n: Option<usize>,
    /// Hardware: parallel-state cell resistance (MOhm).
    #[arg(long, default_value_t = 1.0)]
    rp_mohm: f64,
    /// Hardware: states per weight cell.
    #[arg(long, default_value_t = DEFAULT_STATES)]
    n_states: u16,
    /// Hardware: weight represented by a fully parallel cell.
    #[arg(long, default_value_t = 1.0)]
    w_max: f64,
    /// Hardware: pulse after every sample instead of after each batch.
    #[arg(long)]
    per_sample_pulses: bool,
    /// Feed sampled bits rather than probabilities to the next layer.
    #[arg(long)]
    sampled_propagation: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 5000)]
    n_train: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training log; defaults to the checkpoint path plus `.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    /// Recorded in the CSV row only.
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Hardware: sampled passes per input; 1 uses mean-field probabilities.
    #[arg(long, default_value_t = 1)]
    passes: usize,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "784x10,784x500x10,784x800x800x10")]
    topologies: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "100,500,1000,3000,5000")]
    n_train_list: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Missing(String),
    Corrupt(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Missing(_) => EXIT_MISSING,
            CliError::Corrupt(_) => EXIT_CORRUPT,
            CliError::Failed(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Missing(m) | CliError::Corrupt(m) | CliError::Failed(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Dimension { .. } | Error::Empty(_) => CliError::Usage(e.to_string()),
            Error::Parse { .. } => CliError::Corrupt(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn write_output(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Failed(format!("stdout: {e}")))
        }
    }
}

fn device_curve(args: &CurveArgs) -> CliResult<()> {
    if args.points == 0 || !(args.max_ua >= args.min_ua) {
        return Err(CliError::Usage("need --points >= 1 and --max-ua >= --min-ua".into()));
    }
    let currents: Vec<f64> = current_sweep(args.min_ua, args.max_ua, args.points).iter().map(|i| i * 1e-6).collect();
    write_output(&args.out.out, &curve_csv(&DeviceCurve::calibrated(), &currents))
}

fn sweep(args: &SweepArgs) -> CliResult<()> {
    if args.array_n.is_empty() || args.rp_mohm.is_empty() {
        return Err(CliError::Usage("--array-n and --rp-mohm need at least one value".into()));
    }
    if args.array_n.contains(&0) || args.rp_mohm.iter().any(|r| !(*r > 0.0)) {
        return Err(CliError::Usage("array sizes and resistances must be positive".into()));
    }
    let r_ps: Vec<f64> = args.rp_mohm.iter().map(|r| r * 1e6).collect();
    let rows = array_sweep(&args.array_n, &r_ps, &CrossbarConfig::calibrated(), &DeviceCurve::calibrated());
    write_output(&args.out.out, &sweep_csv(&rows))
}

fn calibrate(args: &OutArgs) -> CliResult<()> {
    let curve = DeviceCurve::calibrated();
    let cfg = CrossbarConfig::calibrated();
    let fit = calibrate_read_path(&TABLE3, &TABLE4, cfg.v_drive)?;
    let anchors = &curve.sample_points;
    let rmse = (anchors.iter().map(|&(i, p)| (curve.p0(i) - p).powi(2)).sum::<f64>() / anchors.len() as f64).sqrt();
    let rows = [
        ("gain_beta", curve.gain_beta),
        ("eta_fit", curve.params.eta_fit),
        ("chi_fit", curve.params.chi_fit),
        ("curve_rmse", rmse),
        ("r_tx_dn_ohm", cfg.r_tx_dn),
        ("r_tx_up_a_ohm", cfg.r_tx_up_a),
        ("r_tx_up_b", cfg.r_tx_up_b),
        ("read_path_max_rel_residual", fit.max_abs_residual()),
        ("p_neuron_uW", cfg.p_neuron * 1e6),
        ("power_anchor_uW", POWER_ANCHOR_W * 1e6),
    ];
    let mut text = String::from("parameter,value\n");
    for (k, v) in rows {
        text.push_str(&format!("{k},{v:.6e}\n"));
    }
    write_output(&args.out, &text)
}

fn data_dir() -> PathBuf {
    data_dir_from_env().unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn load_set(
    images: &Option<PathBuf>,
    labels: &Option<PathBuf>,
    image_stem: &str,
    label_stem: &str,
) -> CliResult<ImageSet> {
    let dir = data_dir();
    let images = images.clone().unwrap_or_else(|| resolve_file(&dir, image_stem));
    let labels = labels.clone().unwrap_or_else(|| resolve_file(&dir, label_stem));
    for p in [&images, &labels] {
        if !p.is_file() {
            return Err(CliError::Missing(format!(
                "dataset file {} not found (set MAGB_DATA_DIR or pass the path flags)",
                p.display()
            )));
        }
    }
    load_image_set(&images, &labels).map_err(|e| match e {
        Error::Io(m) => CliError::Missing(m),
        Error::Dimension { .. } | Error::InvalidParameter(_) => CliError::Corrupt(format!("dataset: {e}")),
        other => other.into(),
    })
}

fn binarize_mode(data: &DataArgs) -> Binarize {
    match data.binarize {
        BinarizeArg::Threshold => Binarize::Threshold(data.threshold),
        BinarizeArg::Stochastic => Binarize::Stochastic,
    }
}

fn subset(set: &ImageSet, n: usize, seed: u64, index: u64) -> CliResult<ImageSet> {
    let idx = subsample_indices(set.len(), n, seed, index).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(set.select(&idx))
}

fn dbn_config(m: &ModelArgs, seed: u64) -> CliResult<DbnConfig> {
    let cd = CdConfig {
        learning_rate: m.lr,
        k: m.k,
        batch_size: m.batch,
        epochs: m.epochs,
        seed,
        per_sample_pulses: m.per_sample_pulses,
    };
    cd.validate()?;
    let readout = ReadoutConfig { learning_rate: m.readout_lr, epochs: m.readout_epochs, batch_size: m.readout_batch };
    if readout.batch_size == 0 || !(readout.learning_rate >= 0.0) {
        return Err(CliError::Usage("--readout-batch must be >= 1 and --readout-lr >= 0".into()));
    }
    let hardware = match m.mode {
        ModeArg::Ideal => None,
        ModeArg::Hardware => {
            if m.array_n == Some(0) || !(m.rp_mohm > 0.0) {
                return Err(CliError::Usage("--array-n and --rp-mohm must be positive".into()));
            }
            let xbar = CrossbarConfig::calibrated().with_r_p(m.rp_mohm * 1e6);
            Some(HardwareConfig::on_crossbar(&xbar, m.array_n, m.n_states, m.w_max)?)
        }
    };
    Ok(DbnConfig { cd, readout, sampled_propagation: m.sampled_propagation, hardware })
}

fn train_model(
    m: &ModelArgs,
    topology: &[usize],
    train: &ImageSet,
    data: &DataArgs,
    seed: u64,
) -> CliResult<(DbnModel, String)> {
    if topology[0] != train.dim() {
        return Err(CliError::Usage(format!(
            "topology input width {} does not match {}-pixel images",
            topology[0],
            train.dim()
        )));
    }
    let cfg = dbn_config(m, seed)?;
    let x = binarize(train, binarize_mode(data), seed);
    let (model, log) = greedy_train(topology, x.view(), &train.labels, &cfg)?;
    Ok((model, log.to_csv()))
}

fn train(args: &TrainArgs) -> CliResult<()> {
    let topology = parse_topology(&args.model.topology)?;
    dbn_config(&args.model, args.seed)?;
    let full = load_set(&args.data.train_images, &args.data.train_labels, TRAIN_IMAGES, TRAIN_LABELS)?;
    let train = subset(&full, args.n_train, args.seed, 0)?;
    let (model, log) = train_model(&args.model, &topology, &train, &args.data, args.seed)?;
    checkpoint::save(&model, &args.out).map_err(|e| CliError::Usage(format!("cannot write checkpoint: {e}")))?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    write_output(&Some(log_path), &log)
}

fn load_checkpoint(path: &Path) -> CliResult<DbnModel> {
    if !path.is_file() {
        return Err(CliError::Missing(format!("checkpoint {} not found", path.display())));
    }
    checkpoint::load(path).map_err(|e| match e {
        Error::Io(m) => CliError::Missing(m),
        other => CliError::Corrupt(format!("checkpoint {}: {other}", path.display())),
    })
}

fn eval(args: &EvalArgs) -> CliResult<()> {
    if args.passes == 0 {
        return Err(CliError::Usage("--passes must be >= 1".into()));
    }
    let model = load_checkpoint(&args.checkpoint)?;
    let full = load_set(&args.data.test_images, &args.data.test_labels, TEST_IMAGES, TEST_LABELS)?;
    if model.topology()[0] != full.dim() {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} inputs, images have {} pixels",
            model.topology()[0],
            full.dim()
        )));
    }
    let test = subset(&full, args.n_test, args.seed, 1)?;
    let x = binarize(&test, binarize_mode(&args.data), args.seed);
    let report = model.evaluate(x.view(), &test.labels, args.passes, args.seed)?;
    let rmse = model.rmse(x.view())?;
    let row = eval_csv_row(model.topology(), model.mode(), args.n_train, &report, rmse, args.seed);
    write_output(&args.out.out, &format!("{EVAL_HEADER}\n{row}\n"))
}

fn report(args: &ReportArgs) -> CliResult<()> {
    let topologies: Vec<Vec<usize>> = args.topologies.iter().map(|t| parse_topology(t)).collect::<Result<_, _>>()?;
    if topologies.is_empty() || args.n_train_list.is_empty() {
        return Err(CliError::Usage("--topologies and --n-train-list need at least one value".into()));
    }
    dbn_config(&args.model, args.seed)?;
    let train_full = load_set(&args.data.train_images, &args.data.train_labels, TRAIN_IMAGES, TRAIN_LABELS)?;
    let test_full = load_set(&args.data.test_images, &args.data.test_labels, TEST_IMAGES, TEST_LABELS)?;
    let test = subset(&test_full, args.n_test, args.seed, 1)?;
    let xt = binarize(&test, binarize_mode(&args.data), args.seed);
    let mut text = format!("{EVAL_HEADER}\n");
    for topology in &topologies {
        for &n in &args.n_train_list {
            let train = subset(&train_full, n, args.seed, 0)?;
            let (model, _) = train_model(&args.model, topology, &train, &args.data, args.seed)?;
            let report = model.evaluate(xt.view(), &test.labels, 1, args.seed)?;
            let row = eval_csv_row(topology, model.mode(), Some(n), &report, model.rmse(xt.view())?, args.seed);
            eprintln!("{row}");
            text.push_str(&row);
            text.push('\n');
        }
    }
    write_output(&args.out.out, &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::DeviceCurve(a) => device_curve(a),
        Command::ArraySweep(a) => sweep(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pbit-dbn: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
