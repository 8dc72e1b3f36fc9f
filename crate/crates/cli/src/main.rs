mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use butterfly_completion::generators::Generated;
use butterfly_completion::{
    adam_butterfly, als_butterfly, als_lowrank, als_qtt, entries, generate_initial_guess,
    load_model, load_vector, lr_to_butterfly, save_model, save_vector, ConvergenceReport,
    ConversionConfig, Error, EvalSplit, GeneratorKind, GeneratorSpec, LowRankPair, Model,
    ObservedEntries, QttNetwork,
};

use config::{Algo, Format, RunConfig};

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_INTERNAL: u8 = 70;

/// Completion of oscillatory matrices in butterfly form, with QTT and low-rank baselines.
#[derive(Parser, Debug)]
#[command(name = "bfcomplete", version)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write every entry of a test matrix as triplets.
    Generate(GenerateArgs),
    /// Draw train (and test) entries of a test matrix or triplet file.
    Sample(SampleArgs),
    /// Complete a matrix from observed entries.
    Complete(CompleteArgs),
    /// Convert a stored low-rank model into a butterfly network.
    Convert(ConvertArgs),
    /// Relative error of a stored model on a triplet file.
    Eval(EvalArgs),
    /// Multiply a stored model with a vector.
    Matvec(MatvecArgs),
}

#[derive(Args, Debug, Clone)]
struct SourceArgs {
    /// radon, green, butterfly or qtt.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    leaf: usize,
    /// Rank of synthetic data.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frequency of the Green's function (default √n·π/5).
    #[arg(long)]
    omega: Option<f64>,
}

impl SourceArgs {
    fn spec(&self) -> Result<GeneratorSpec, Failure> {
        Ok(GeneratorSpec {
            kind: self.kind.parse::<GeneratorKind>().map_err(Failure::usage)?,
            n: self.n,
            leaf: self.leaf,
            seed: self.seed,
            omega: self.omega,
            rank: self.rank,
        })
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Output triplet file (`.gz` compresses).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    source: SourceArgsOpt,
    /// Sample from this triplet file instead of a generator.
    #[arg(long, conflicts_with = "kind")]
    input: Option<PathBuf>,
    /// Number of training entries.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    test_count: usize,
    #[arg(long = "sample-seed", default_value_t = 0)]
    sample_seed: u64,
    /// Output directory for train.csv and test.csv.
    #[arg(long)]
    out: PathBuf,
}

/// Generator flags, all optional so `--input` can replace them.
#[derive(Args, Debug, Clone)]
struct SourceArgsOpt {
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    leaf: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    omega: Option<f64>,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    /// JSON file with any of the settings below; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    algo: Option<Algo>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    leaf: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    /// Rank of the low-rank initial fit (default: --rank).
    #[arg(long)]
    init_rank: Option<usize>,
    #[arg(long)]
    init_iters: Option<usize>,
    #[arg(long)]
    oversampling: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// ADAM learning rate.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write report.csv for plotting.
    #[arg(long)]
    csv: bool,
}

impl CompleteArgs {
    fn flags(&self) -> RunConfig {
        RunConfig {
            algo: self.algo,
            format: self.format,
            levels: self.levels,
            leaf: self.leaf,
            rank: self.rank,
            init_rank: self.init_rank,
            init_iters: self.init_iters,
            oversampling: self.oversampling,
            max_iters: self.max_iters,
            tol: self.tol,
            reg: self.reg,
            seed: self.seed,
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
            sigma: self.sigma,
        }
    }
}

#[derive(Args, Debug)]
struct ConvertArgs {
    /// Low-rank model manifest.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    levels: usize,
    #[arg(long)]
    leaf: usize,
    #[arg(long)]
    rank: usize,
    #[arg(long)]
    oversampling: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct MatvecArgs {
    #[arg(long)]
    model: PathBuf,
    /// complex128 little-endian vector.
    #[arg(long)]
    vector: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }

    fn data(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_DATA,
            message: e.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParameter(_)
            | Error::InvalidFactor { .. }
            | Error::TooManySamples { .. }
            | Error::SizeGuard { .. } => EXIT_USAGE,
            Error::IndexOutOfRange { .. }
            | Error::DigitOutOfRange { .. }
            | Error::ArityMismatch { .. }
            | Error::ShapeMismatch(_)
            | Error::ZeroDenominator
            | Error::DuplicatePair { .. }
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::Io { .. }
            | Error::Json(_) => EXIT_DATA,
            Error::NonFinite { .. } => EXIT_INTERNAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure {
        code: EXIT_INTERNAL,
        message: format!("{}: {e}", path.display()),
    })
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure {
        code: EXIT_INTERNAL,
        message: format!("{}: {e}", path.display()),
    })
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
}

fn cmd_generate(args: &GenerateArgs) -> Result<u8, Failure> {
    let generated = args.source.spec()?.build()?;
    let n = generated.n();
    let entries = ObservedEntries::from_fn(n, &all_pairs(n), |i, j| generated.entry(i, j))?;
    entries.save_triplets(&args.out)?;
    if let Generated::Green { perm, .. } = &generated {
        let perm_path = args.out.with_extension("perm.json");
        write_file(
            &perm_path,
            &(serde_json::to_string(perm).map_err(Failure::data)? + "\n"),
        )?;
    }
    eprintln!("wrote {} entries to {}", entries.len(), args.out.display());
    Ok(0)
}

fn cmd_sample(args: &SampleArgs) -> Result<u8, Failure> {
    let split = match (&args.input, &args.source) {
        (Some(path), _) => {
            let all = ObservedEntries::load_triplets(path, None)?;
            let n = all.n();
            let lookup: std::collections::HashMap<(usize, usize), _> =
                all.iter().map(|(i, j, v)| ((i, j), v)).collect();
            if lookup.len() != n * n {
                return Err(Failure::data(format!(
                    "{} holds {} of {} entries; sampling needs the full matrix",
                    path.display(),
                    lookup.len(),
                    n * n
                )));
            }
            EvalSplit::sample(n, args.count, args.test_count, args.sample_seed, |i, j| {
                lookup[&(i, j)]
            })?
        }
        (None, src) => {
            let spec = SourceArgs {
                kind: src
                    .kind
                    .clone()
                    .ok_or_else(|| Failure::usage("--kind or --input is required"))?,
                n: src.n.ok_or_else(|| Failure::usage("--n is required"))?,
                leaf: src.leaf.unwrap_or(4),
                rank: src.rank,
                seed: src.seed.unwrap_or(0),
                omega: src.omega,
            }
            .spec()?;
            let generated = spec.build()?;
            EvalSplit::sample(
                generated.n(),
                args.count,
                args.test_count,
                args.sample_seed,
                |i, j| generated.entry(i, j),
            )?
        }
    };
    create_dir(&args.out)?;
    split.train.save_triplets(args.out.join("train.csv"))?;
    if let Some(test) = &split.test {
        test.save_triplets(args.out.join("test.csv"))?;
    }
    eprintln!(
        "sampled {} train and {} test entries into {}",
        split.train.len(),
        split.test.as_ref().map_or(0, ObservedEntries::len),
        args.out.display()
    );
    Ok(0)
}

fn cmd_complete(args: &CompleteArgs) -> Result<u8, Failure> {
    let file_cfg = match &args.config {
        Some(path) => RunConfig::from_file(path).map_err(Failure::usage)?,
        None => RunConfig::default(),
    };
    let merged = file_cfg.merge(&args.flags());
    let cfg = merged.resolved().map_err(Failure::usage)?;
    let n = butterfly_completion::MultiIndexMap::new(cfg.levels, cfg.leaf)?.n();
    let train = ObservedEntries::load_triplets(&args.train, Some(n))?;
    let test = args
        .test
        .as_ref()
        .map(|p| ObservedEntries::load_triplets(p, Some(n)))
        .transpose()?;
    if train.n() != n {
        return Err(Failure::data(format!(
            "training data has size {}, but L={} and c={} give {n}",
            train.n(),
            cfg.levels,
            cfg.leaf
        )));
    }
    let split = EvalSplit::new(train, test)?;
    create_dir(&args.out)?;

    let mut init_info = serde_json::Value::Null;
    let (model, mut report): (Model, ConvergenceReport) = match (cfg.format, cfg.algo) {
        (Format::Butterfly, algo) => {
            let guess =
                generate_initial_guess(&split.train, cfg.levels, cfg.leaf, cfg.rank, &cfg.init)?;
            init_info = serde_json::json!({
                "lowrank_train_err": guess.lowrank_train_err,
                "lowrank_iterations": guess.lowrank_report.iterations.len(),
            });
            match algo {
                Algo::Als => {
                    let (net, r) = als_butterfly(guess.network, &split, &cfg.als)?;
                    (Model::Butterfly(net), r)
                }
                Algo::Adam => {
                    let (net, r) = adam_butterfly(guess.network, &split, &cfg.adam)?;
                    (Model::Butterfly(net), r)
                }
            }
        }
        (Format::Qtt, Algo::Als) => {
            // Entries of a random QTT scale like s^{L+1} r^{L/2}; match the
            // data's root-mean-square magnitude.
            let rms = (split.train.squared_norm() / split.train.len().max(1) as f64).sqrt();
            let paths = (cfg.rank as f64).powf(cfg.levels as f64 / 2.0);
            let per_core = (rms / paths).powf(1.0 / (cfg.levels + 1) as f64);
            let start = QttNetwork::random(cfg.levels, cfg.leaf, cfg.rank, cfg.seed, per_core)?;
            let (net, r) = als_qtt(start, &split, &cfg.als)?;
            (Model::Qtt(net), r)
        }
        (Format::Lowrank, Algo::Als) => {
            let big_r = cfg.init.init_rank.unwrap_or(cfg.rank);
            let scale =
                (split.train.squared_norm() / (split.train.len().max(1) * big_r) as f64).sqrt();
            let start = LowRankPair::random(n, big_r, cfg.seed, scale);
            let (pair, r) = als_lowrank(start, &split, &cfg.als)?;
            (Model::LowRank(pair), r)
        }
        (format, Algo::Adam) => {
            return Err(Failure::usage(format!(
                "ADAM is only available for the butterfly format, not {format:?}"
            )))
        }
    };
    if !init_info.is_null() {
        report.notes.push(format!("initial guess: {init_info}"));
    }

    save_model(args.out.join("model.json"), &model)?;
    write_file(&args.out.join("report.jsonl"), &report.to_jsonl())?;
    let mut summary = report.summary_json();
    summary["init"] = init_info;
    summary["run_config"] = serde_json::to_value(&merged).map_err(Failure::data)?;
    write_file(
        &args.out.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).map_err(Failure::data)? + "\n"),
    )?;
    if args.csv {
        write_file(&args.out.join("report.csv"), &report.to_csv())?;
    }
    println!(
        "{} after {} iterations: train {:e}{}",
        serde_json::to_value(report.termination)
            .map_err(Failure::data)?
            .as_str()
            .unwrap_or("?"),
        report.iterations.len(),
        report.final_train_err(),
        report
            .final_test_err()
            .map_or(String::new(), |t| format!(", test {t:e}"))
    );
    Ok(if report.converged() {
        0
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn cmd_convert(args: &ConvertArgs) -> Result<u8, Failure> {
    let pair = match load_model(&args.input)? {
        Model::LowRank(pair) => pair,
        other => {
            return Err(Failure::data(format!(
                "expected a lowrank model, found {}",
                other.format()
            )))
        }
    };
    let cfg = ConversionConfig {
        oversampling: args.oversampling,
        seed: args.seed,
    };
    let net = lr_to_butterfly(&pair, args.levels, args.leaf, args.rank, &cfg)?;
    save_model(&args.out, &Model::Butterfly(net))?;
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<u8, Failure> {
    let model = load_model(&args.model)?;
    let data = ObservedEntries::load_triplets(&args.data, Some(model.n()))?;
    if data.n() != model.n() {
        return Err(Failure::data(format!(
            "data of size {} against a model of size {}",
            data.n(),
            model.n()
        )));
    }
    let err = match &model {
        Model::Butterfly(net) => entries::relative_error(net, &data)?,
        Model::Qtt(net) => entries::relative_error_with(&data, |i, j| {
            net.reconstruct_entry(i, j).expect("in range")
        })?,
        Model::LowRank(pair) => entries::relative_error_with(&data, |i, j| pair.entry(i, j))?,
    };
    // Shortest representation that round-trips exactly.
    println!("{err:?}");
    Ok(0)
}

fn cmd_matvec(args: &MatvecArgs) -> Result<u8, Failure> {
    let model = load_model(&args.model)?;
    let v = load_vector(&args.vector)?;
    let out = match &model {
        Model::Butterfly(net) => net.matvec(&v)?,
        other => other.to_dense()?.matvec(&v)?,
    };
    save_vector(&args.out, &out)?;
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure {
                code: EXIT_INTERNAL,
                message: e.to_string(),
            })?;
    }
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Complete(a) => cmd_complete(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Matvec(a) => cmd_matvec(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("bfcomplete: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
