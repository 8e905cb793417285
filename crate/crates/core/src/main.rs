#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use panpriv::attack::{run_attack, AttackKind, AttackSpec, SketchSetup, Target};
use panpriv::codec::RecordKind;
use panpriv::cropped::CroppedSumState;
use panpriv::distinct::{DistinctConfig, NoiseMode, NoisySketch};
use panpriv::dot::DotPairState;
use panpriv::dp::{neighbor_histogram_test, DpCheckConfig};
use panpriv::estimator::{Estimator, IntrusionSnapshot};
use panpriv::experiment::{human_summary, run_experiment, write_csv, EstimatorSpec, ExperimentSpec};
use panpriv::hh::{F1Source, HHConfig, HHEstimator};
use panpriv::rng::derive_seed;
use panpriv::stable::{calibrate, Calibration, StableParams};
use panpriv::stream::{read_updates, Generator, Mode, StreamSpec, Update};
use panpriv::{Error, Result};

#[derive(Parser)]
#[command(name = "panpriv", version, about = "Pan-private streaming sketches and attack lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Precompute the stable-matrix constants for a distinct-count sketch.
    Calibrate(CalibrateArgs),
    /// Run a stream through an estimator and save its state.
    Ingest {
        #[command(subcommand)]
        which: IngestCommand,
    },
    /// Print the estimate held in a saved state.
    Query(QueryArgs),
    /// Cropped dot product of two update files.
    Dot(DotArgs),
    /// Cropped second moment of an update file.
    T2(T2Args),
    /// Monte Carlo accuracy experiment; writes CSV.
    Experiment {
        #[command(subcommand)]
        which: ExperimentCommand,
    },
    /// Reconstruction attack from a single intrusion; writes CSV.
    Attack {
        #[command(subcommand)]
        which: AttackCommand,
    },
    /// Histogram check of the privacy guarantee on neighboring streams.
    NeighborTest(NeighborArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    p: f64,
    #[arg(long)]
    m: u64,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo draws for the median scale.
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistinctArgs {
    /// Calibration file from `panpriv calibrate`.
    #[arg(long, env = "PANPRIV_CALIBRATION")]
    calibration: PathBuf,
    /// Expected p; checked against the calibration when given.
    #[arg(long)]
    p: Option<f64>,
    /// Expected sketch width; checked against the calibration when given.
    #[arg(long)]
    r: Option<usize>,
    /// Promised bound on |a_i|.
    #[arg(long)]
    z: f64,
    /// Total privacy budget over all sketch entries.
    #[arg(long, default_value_t = 1.0)]
    alpha_total: f64,
    /// Target relative accuracy.
    #[arg(long, default_value_t = 0.25)]
    eps: f64,
    /// Build the sketch without noise. Offers no privacy.
    #[arg(long)]
    unsafe_no_noise: bool,
}

impl DistinctArgs {
    fn config(&self) -> Result<Arc<DistinctConfig>> {
        let cal = Calibration::load(&self.calibration)?;
        if let Some(p) = self.p {
            if p != cal.params.p {
                return Err(Error::Config(format!(
                    "--p {p} but calibration has p = {}",
                    cal.params.p
                )));
            }
        }
        if let Some(r) = self.r {
            if r != cal.params.r {
                return Err(Error::Config(format!(
                    "--r {r} but calibration has r = {}",
                    cal.params.r
                )));
            }
        }
        let mode = if self.unsafe_no_noise {
            NoiseMode::Disabled
        } else {
            NoiseMode::Standard
        };
        Ok(Arc::new(DistinctConfig::new(
            Arc::new(cal),
            self.z,
            self.alpha_total,
            self.eps,
            mode,
        )?))
    }
}

#[derive(Args)]
struct HhArgs {
    #[arg(long)]
    k: f64,
    #[arg(long, default_value_t = 2.0)]
    c: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    priv_eps: f64,
    /// Stream mass, when known in advance.
    #[arg(long, conflicts_with = "u0")]
    f1: Option<u64>,
    /// Upper bound on the stream mass, when it is not known.
    #[arg(long)]
    u0: Option<u64>,
    /// Hash key; derived from --seed when absent.
    #[arg(long)]
    hash_key: Option<u64>,
}

#[derive(Subcommand)]
enum IngestCommand {
    /// Pan-private distinct count.
    Distinct {
        #[command(flatten)]
        io: IngestIo,
        #[command(flatten)]
        args: DistinctArgs,
    },
    /// Cropped sum.
    Croppedsum {
        #[command(flatten)]
        io: IngestIo,
        /// Universe size.
        #[arg(long)]
        m: usize,
        #[arg(long)]
        tau: u64,
        #[arg(long, default_value_t = 1.0)]
        priv_eps: f64,
    },
    /// Heavy-hitter count.
    Hh {
        #[command(flatten)]
        io: IngestIo,
        #[command(flatten)]
        args: HhArgs,
    },
    /// Cropped second moment.
    T2 {
        #[command(flatten)]
        io: IngestIo,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        tau: u64,
        #[arg(long, default_value_t = 1.0)]
        priv_eps: f64,
    },
}

#[derive(Args)]
struct IngestIo {
    /// Update file, or `-` for stdin.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the state.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct QueryArgs {
    snapshot: PathBuf,
    /// Also print a readable line; negative counts are shown as 0 there.
    #[arg(long)]
    human: bool,
}

#[derive(Args)]
struct DotArgs {
    #[arg(long)]
    tau: u64,
    #[arg(long, default_value_t = 1.0)]
    priv_eps: f64,
    /// Universe size; defaults to one past the largest item seen.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    left: PathBuf,
    right: PathBuf,
}

#[derive(Args)]
struct T2Args {
    #[arg(long)]
    tau: u64,
    #[arg(long, default_value_t = 1.0)]
    priv_eps: f64,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    input: PathBuf,
}

#[derive(Args)]
struct ExperimentCommon {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall time per trial (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long, default_value_t = 100_000)]
    m: u64,
    /// Updates per stream for uniform and zipf generators.
    #[arg(long, default_value_t = 10_000)]
    length: usize,
    /// uniform | zipf:S | binary:D | insert-delete:D:CHURN
    #[arg(long, default_value = "binary:500")]
    generator: String,
    #[arg(long, value_enum, default_value_t = CliMode::CashRegister)]
    mode: CliMode,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    CashRegister,
    Turnstile,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::CashRegister => Mode::CashRegister,
            CliMode::Turnstile => Mode::Turnstile,
        }
    }
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Pan-private distinct count.
    Distinct {
        #[command(flatten)]
        common: ExperimentCommon,
        #[command(flatten)]
        args: DistinctArgs,
        /// Failure probability of the noise bound.
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Cropped sum.
    Croppedsum {
        #[command(flatten)]
        common: ExperimentCommon,
        #[arg(long)]
        tau: u64,
        #[arg(long, default_value_t = 1.0)]
        priv_eps: f64,
        /// Slack of the deviation bound.
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
    },
    /// Heavy-hitter count.
    Hh {
        #[command(flatten)]
        common: ExperimentCommon,
        #[arg(long)]
        k: f64,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        priv_eps: f64,
        /// Track the mass instead of reading it from the stream.
        #[arg(long)]
        u0: Option<u64>,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
    },
    /// Cropped dot product of two generated streams.
    Dot {
        #[command(flatten)]
        common: ExperimentCommon,
        #[arg(long)]
        tau: u64,
        #[arg(long, default_value_t = 1.0)]
        priv_eps: f64,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        /// Generator of the right-hand stream; same as --generator if absent.
        #[arg(long)]
        second_generator: Option<String>,
    },
    /// Cropped second moment.
    T2 {
        #[command(flatten)]
        common: ExperimentCommon,
        #[arg(long)]
        tau: u64,
        #[arg(long, default_value_t = 1.0)]
        priv_eps: f64,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
    },
}

#[derive(Args)]
struct AttackCommon {
    #[arg(long, value_enum, default_value_t = CliTarget::Exact)]
    target: CliTarget,
    /// Total budget of the private target; `inf` disables its noise.
    #[arg(long, default_value_t = 1.0)]
    alpha_total: f64,
    /// Half-width of extra uniform noise added to every answer.
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliTarget {
    Exact,
    Ppdistinct,
}

#[derive(Subcommand)]
enum AttackCommand {
    /// Recover a sparse secret from union-size answers.
    Union {
        #[command(flatten)]
        common: AttackCommon,
        #[arg(long, default_value_t = 24)]
        n: usize,
        /// Sparsity bound of the secret.
        #[arg(long, default_value_t = 3)]
        l: usize,
        /// Multiplicative answer slack the decoder allows.
        #[arg(long, default_value_t = 0.0)]
        alpha1: f64,
        /// Additive answer slack the decoder allows.
        #[arg(long, default_value_t = 0.5)]
        alpha2: f64,
    },
    /// Recover a bit vector from inner-product answers.
    Dotproduct {
        #[command(flatten)]
        common: AttackCommon,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        queries: usize,
    },
}

#[derive(Args)]
struct NeighborArgs {
    #[arg(long, default_value_t = 100_000)]
    runs: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn read_stream(path: &Path) -> Result<Vec<Update>> {
    if path == Path::new("-") {
        read_updates(io::stdin().lock())
    } else {
        read_updates(BufReader::new(File::open(path)?))
    }
}

fn universe(explicit: Option<usize>, streams: &[&[Update]]) -> usize {
    explicit.unwrap_or_else(|| {
        streams
            .iter()
            .flat_map(|s| s.iter())
            .map(|u| u.item as usize + 1)
            .max()
            .unwrap_or(1)
    })
}

fn parse_generator(text: &str) -> Result<Generator> {
    let bad = || Error::param("generator", format!("cannot parse `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
    Ok(match parts.as_slice() {
        ["uniform"] => Generator::Uniform,
        ["zipf", s] => Generator::Zipf {
            s: s.parse().map_err(|_| bad())?,
        },
        ["binary", d] => Generator::BinarySupport { d: num(d)? },
        ["insert-delete", d, c] => Generator::InsertDelete {
            d: num(d)?,
            churn: num(c)?,
        },
        _ => return Err(bad()),
    })
}

fn stream_spec(common: &ExperimentCommon, generator: &str) -> Result<StreamSpec> {
    Ok(StreamSpec {
        mode: common.mode.into(),
        m: common.m,
        generator: parse_generator(generator)?,
        length: common.length,
        seed: 0,
    })
}

/// Writes to the file, or to stdout when `path` is `None`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
        }
    }
    Ok(())
}

fn feed(est: &mut Estimator, stream: &[Update]) -> Result<()> {
    stream.iter().try_for_each(|u| est.update(*u))
}

fn ingest(which: IngestCommand) -> Result<()> {
    let (io_args, mut est) = match which {
        IngestCommand::Distinct { io, args } => {
            let cfg = args.config()?;
            let seed = derive_seed(io.seed, "noise", 0);
            (io, Estimator::Distinct(NoisySketch::new(cfg, seed)))
        }
        IngestCommand::Croppedsum { io, m, tau, priv_eps } => {
            let seed = derive_seed(io.seed, "noise", 0);
            (io, Estimator::CroppedSum(CroppedSumState::new(m, tau, priv_eps, seed)?))
        }
        IngestCommand::Hh { io, args } => {
            let f1 = match (args.f1, args.u0) {
                (Some(f1), _) => F1Source::Known(f1),
                (None, Some(u0)) => F1Source::Unknown { u0 },
                (None, None) => return Err(Error::Config("one of --f1 or --u0 is required".into())),
            };
            let key = args.hash_key.unwrap_or_else(|| derive_seed(io.seed, "hash", 0));
            let cfg = HHConfig::new(args.k, args.c, args.beta, args.delta, args.priv_eps, key, f1)?;
            let seed = derive_seed(io.seed, "noise", 0);
            (io, Estimator::HeavyHitters(HHEstimator::new(cfg, seed)?))
        }
        IngestCommand::T2 { io, m, tau, priv_eps } => {
            let seed = derive_seed(io.seed, "noise", 0);
            (io, Estimator::DotPair(DotPairState::new(m, tau, priv_eps, seed)?))
        }
    };
    let stream = read_stream(&io_args.input)?;
    feed(&mut est, &stream)?;
    std::fs::write(&io_args.out, est.snapshot().as_bytes())?;
    eprintln!(
        "ingested {} updates into {} state {}",
        stream.len(),
        est.kind().name(),
        io_args.out.display()
    );
    Ok(())
}

fn is_count(kind: RecordKind) -> bool {
    matches!(
        kind,
        RecordKind::Exact | RecordKind::Distinct | RecordKind::HeavyHitters
    )
}

fn query(args: QueryArgs) -> Result<()> {
    let snap = IntrusionSnapshot::from_bytes(std::fs::read(&args.snapshot)?)?;
    let est = snap.restore(0)?;
    let value = est.estimate()?;
    println!("{value}");
    if args.human {
        let shown = if is_count(snap.kind()) { value.max(0.0) } else { value };
        println!("{} estimate: {shown:.3}", snap.kind().name());
    }
    Ok(())
}

fn experiment(which: ExperimentCommand) -> Result<()> {
    let (common, estimator, generator) = match which {
        ExperimentCommand::Distinct { common, args, delta } => {
            let config = args.config()?;
            let g = common.generator.clone();
            (common, EstimatorSpec::Distinct { config, delta }, g)
        }
        ExperimentCommand::Croppedsum {
            common,
            tau,
            priv_eps,
            alpha,
        } => {
            let g = common.generator.clone();
            (common, EstimatorSpec::CroppedSum { tau, priv_eps, alpha }, g)
        }
        ExperimentCommand::Hh {
            common,
            k,
            c,
            beta,
            delta,
            priv_eps,
            u0,
            alpha,
        } => {
            let g = common.generator.clone();
            (
                common,
                EstimatorSpec::HeavyHitters {
                    k,
                    c,
                    beta,
                    delta,
                    priv_eps,
                    u0,
                    alpha,
                },
                g,
            )
        }
        ExperimentCommand::Dot {
            common,
            tau,
            priv_eps,
            alpha,
            second_generator,
        } => {
            let g = common.generator.clone();
            let second = stream_spec(&common, second_generator.as_deref().unwrap_or(&g))?;
            (
                common,
                EstimatorSpec::Dot {
                    tau,
                    priv_eps,
                    alpha,
                    second,
                },
                g,
            )
        }
        ExperimentCommand::T2 {
            common,
            tau,
            priv_eps,
            alpha,
        } => {
            let g = common.generator.clone();
            (common, EstimatorSpec::T2 { tau, priv_eps, alpha }, g)
        }
    };
    let spec = ExperimentSpec {
        estimator,
        stream: stream_spec(&common, &generator)?,
        trials: common.trials,
        seed: common.seed,
        timing: common.timing,
    };
    let report = run_experiment(&spec)?;
    with_output(common.out.as_deref(), |w| write_csv(&report, w))?;
    eprintln!("{}", human_summary(&report));
    Ok(())
}

fn attack(which: AttackCommand) -> Result<()> {
    let (common, kind, n) = match which {
        AttackCommand::Union {
            common,
            n,
            l,
            alpha1,
            alpha2,
        } => (common, AttackKind::Union { l, alpha1, alpha2 }, n),
        AttackCommand::Dotproduct { common, n, queries } => (common, AttackKind::DotProduct { queries }, n),
    };
    let target = match common.target {
        CliTarget::Exact => Target::Exact,
        CliTarget::Ppdistinct => {
            if !(common.alpha_total > 0.0) {
                return Err(Error::param("alpha_total", "must be positive"));
            }
            Target::PpDistinct {
                alpha_total: common.alpha_total,
            }
        }
    };
    let spec = AttackSpec {
        kind,
        n,
        target,
        setup: SketchSetup::default(),
        perturb: common.perturb,
        trials: common.trials,
        seed: common.seed,
    };
    let rows = run_attack(&spec)?;
    with_output(common.csv.as_deref(), |w| {
        let mut csv = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Io(io::Error::other(e));
        csv.write_record(["trial", "target", "noise_scale", "hamming_error", "queries_used"])
            .map_err(csv_err)?;
        for r in &rows {
            csv.write_record([
                r.trial.to_string(),
                r.target.to_string(),
                r.noise_scale.to_string(),
                r.hamming_error.to_string(),
                r.queries_used.to_string(),
            ])
            .map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    if !rows.is_empty() {
        let mean = rows.iter().map(|r| r.hamming_error as f64).sum::<f64>() / rows.len() as f64;
        let exact = rows.iter().filter(|r| r.hamming_error == 0).count();
        eprintln!(
            "{} trials against {}: mean hamming error {mean:.2}, exact recovery in {exact}",
            rows.len(),
            target.name()
        );
    }
    Ok(())
}

fn neighbor_test(args: NeighborArgs) -> Result<()> {
    let cfg = DpCheckConfig {
        runs: args.runs,
        alpha: args.alpha,
        seed: args.seed,
        ..DpCheckConfig::default()
    };
    let report = neighbor_histogram_test(&cfg)?;
    println!("bin_lo,bin_hi,count_s,count_neighbor,excess");
    for b in &report.bins {
        println!("{},{},{},{},{}", b.lo, b.hi, b.count_s, b.count_neighbor, b.excess);
    }
    let bad = report.violations();
    eprintln!(
        "{} bins checked at alpha = {}, {} violations",
        report.bins.len(),
        report.alpha,
        bad
    );
    if bad > 0 {
        return Err(Error::Config(format!("{bad} bins exceed the privacy ratio bound")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate(a) => {
            let cal = calibrate(StableParams::new(a.p, a.r, a.m, a.seed)?, a.samples)?;
            cal.save(&a.out)?;
            eprintln!(
                "sfp = {}, max column norm = {:e}, written to {}",
                cal.sfp,
                cal.max_row_norm(),
                a.out.display()
            );
            Ok(())
        }
        Command::Ingest { which } => ingest(which),
        Command::Query(a) => query(a),
        Command::Dot(a) => {
            let left = read_stream(&a.left)?;
            let right = read_stream(&a.right)?;
            let m = universe(a.m, &[&left, &right]);
            let mut pair = DotPairState::new(m, a.tau, a.priv_eps, derive_seed(a.seed, "noise", 0))?;
            left.iter().try_for_each(|u| pair.update_left(*u))?;
            right.iter().try_for_each(|u| pair.update_right(*u))?;
            println!("{}", pair.estimate_dot());
            Ok(())
        }
        Command::T2(a) => {
            let stream = read_stream(&a.input)?;
            let m = universe(a.m, &[&stream]);
            let mut pair = DotPairState::new(m, a.tau, a.priv_eps, derive_seed(a.seed, "noise", 0))?;
            stream.iter().try_for_each(|u| pair.update_both(*u))?;
            println!("{}", pair.estimate_t2());
            Ok(())
        }
        Command::Experiment { which } => experiment(which),
        Command::Attack { which } => attack(which),
        Command::NeighborTest(a) => neighbor_test(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
