//! `drumspace` command-line front end.
//!
//! Results go to stdout, progress and diagnostics to stderr. Exit status is 0
//! on success, 1 on a usage error and 2 when the input data is unusable.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use drumspace::config::{PipelineConfig, DEFAULT_ENTROPY_THRESHOLD};
use drumspace::dataset::{read_dataset, write_dataset, PatternRecord};
use drumspace::eval::{
    baseline_pass_rate, filter_pass_rate, format_table, genre_centroids, make_synthetic_corpus, EvalReport,
};
use drumspace::latent::{bit_accuracy, train_with_report, AutoencoderModel, ModelKind, TrainConfig};
use drumspace::melody::{
    detect_key_onsets, extract_melody_pairs, filter_melody, generate_melody, read_melody_dataset,
    train_generator_with_report, write_melody_dataset, KeyId, MelodyContext, MelodyGenerator, MelodyTrainConfig,
};
use drumspace::midi::{self, parse_midi, write_midi, PERCUSSION_CHANNEL};
use drumspace::pattern::{channel9_nontrivial, decode_codes, extract_corpus, scan_drum_loops, Codes, STEPS};
use drumspace::projection::{tsne, TsneConfig};
use drumspace_service::ServeState;

#[derive(Parser)]
#[command(name = "drumspace", version, about = "Drum pattern extraction, latent models and melody generation")]
struct Cli {
    /// Pipeline overrides (merge table, k, pause length, genre keywords) as TOML.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run on a single worker thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract unique repeated drum patterns from a directory of MIDI files.
    Extract {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        k: Option<f64>,
    },
    /// Write the seeded synthetic genre corpus.
    SynthCorpus {
        output: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
    /// Train an autoencoder on a pattern dataset.
    Train(TrainArgs),
    /// Filter-pass rate of random latent samples, one row per checkpoint.
    Eval {
        #[arg(required = true)]
        models: Vec<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_ENTROPY_THRESHOLD)]
        k: f64,
        /// Also report the pass rate of the patterns in this dataset.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Fill the latent and map columns of a dataset in place.
    Project {
        dataset: PathBuf,
        model: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
    },
    /// Pair drum loops with the melodies playing over them.
    MelodyExtract {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        k: Option<f64>,
    },
    /// Train the melody generator.
    MelodyTrain {
        dataset: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
    },
    /// Generate a melody over a drum pattern and write both as MIDI.
    MelodyGen(MelodyGenArgs),
    /// Detect the key of the melodic notes in a MIDI file.
    DetectKey {
        input: PathBuf,
        /// Only use this channel.
        #[arg(long)]
        channel: Option<u8>,
    },
    /// Serve the HTTP API.
    Serve {
        dataset: PathBuf,
        /// Checkpoints as `kind=path`, e.g. `acai=acai.ckpt`.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long)]
        melody: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    kind: ModelKind,
    dataset: PathBuf,
    output: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct MelodyGenArgs {
    generator: PathBuf,
    output: PathBuf,
    /// 32 comma-separated step codes.
    #[arg(long, value_delimiter = ',', required = true)]
    codes: Vec<u16>,
    #[arg(long, default_value_t = 0)]
    instrument: usize,
    /// Key name (`C`, `Am`, `F# major`) or id 0..24.
    #[arg(long, default_value = "C")]
    key: KeyId,
    #[arg(long, default_value_t = 5)]
    octave: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 120.0)]
    tempo: f64,
    #[arg(long, default_value_t = 4)]
    repeats: u32,
}

/// Failures split by exit status.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_records(path: &Path) -> anyhow::Result<Vec<PatternRecord>> {
    read_dataset(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<AutoencoderModel> {
    AutoencoderModel::load(&read(path)?).with_context(|| format!("loading {}", path.display()))
}

fn pipeline_config(cli: &Cli, k: Option<f64>) -> anyhow::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = String::from_utf8(read(path)?).with_context(|| format!("{} is not UTF-8", path.display()))?;
            PipelineConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(k) = k {
        config = config.with_entropy_threshold(k);
    }
    Ok(config)
}

/// `.mid`/`.midi` files under `dir` in path order, keyed by path relative to `dir`.
fn midi_files(dir: &Path) -> anyhow::Result<Vec<(String, Vec<u8>)>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(walkdir::DirEntry::into_path)
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().into_owned();
            Ok((rel, read(&p)?))
        })
        .collect()
}

fn extract(cli: &Cli, input: &Path, output: &Path, k: Option<f64>) -> Outcome {
    let config = pipeline_config(cli, k)?;
    let files = midi_files(input)?;
    eprintln!("scanning {} MIDI files", files.len());
    let (records, stats) = extract_corpus(&files, &config);
    write(output, &write_dataset(&records))?;
    print!("{}", stats.to_key_values());
    Ok(())
}

fn synth_corpus(seed: u64, output: &Path, n: usize) -> Outcome {
    if n == 0 {
        return Err(usage("--n must be positive"));
    }
    write(output, &write_dataset(&make_synthetic_corpus(seed, n)))?;
    println!("records={n}");
    Ok(())
}

fn train_model(seed: u64, args: &TrainArgs) -> Outcome {
    let d = TrainConfig::default();
    let config = TrainConfig {
        epochs: args.epochs.unwrap_or(d.epochs),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        seed,
        kl_weight: args.beta.unwrap_or(d.kl_weight),
        acai_lambda: args.lambda.unwrap_or(d.acai_lambda),
        acai_gamma: args.gamma.unwrap_or(d.acai_gamma),
        learning_rate: args.lr.unwrap_or(d.learning_rate),
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let records = load_records(&args.dataset)?;
    eprintln!("training {} on {} patterns for {} epochs", args.kind, records.len(), config.epochs);
    let (model, report) = train_with_report(&records, args.kind, &config).context("training failed")?;
    write(&args.output, &model.save())?;
    let last = report.epoch_losses.last().expect("at least one epoch");
    println!("model={}", args.kind);
    println!("epochs={}", config.epochs);
    println!("final_loss={:.6}", last.total);
    println!("final_reconstruction={:.6}", last.recon);
    if args.kind == ModelKind::Vae {
        println!("final_kl={:.6}", last.kl);
    }
    println!("bit_accuracy={:.6}", bit_accuracy(&model, &records));
    Ok(())
}

fn eval(seed: u64, models: &[PathBuf], n: usize, k: f64, baseline: Option<&Path>) -> Outcome {
    if n == 0 {
        return Err(usage("--n must be positive"));
    }
    let mut reports = Vec::new();
    for path in models {
        let model = load_model(path)?;
        eprintln!("sampling {n} patterns from {}", path.display());
        reports.push(filter_pass_rate(&model, n, k, seed).context("sampling failed")?);
    }
    if let Some(path) = baseline {
        let records = load_records(path)?;
        let b = baseline_pass_rate(&records, k);
        let passes = (b.rate * b.n as f64).round() as usize;
        reports.push(EvalReport {
            model: "empirical".into(),
            n: b.n,
            passes,
            failed_empty: 0,
            failed_entropy: b.n - passes,
            entropy_threshold: k,
            seed,
        });
    }
    print!("{}", format_table(&reports));
    Ok(())
}

fn project(seed: u64, dataset: &Path, model: &Path, perplexity: f64, iterations: usize) -> Outcome {
    let mut records = load_records(dataset)?;
    let model = load_model(model)?;
    let points: Vec<[f64; 4]> = records
        .iter()
        .map(|r| Ok(model.encode(&decode_codes(&r.codes)?).0))
        .collect::<Result<_, drumspace::pattern::PatternError>>()
        .context("invalid codes in dataset")?;
    let config = TsneConfig { perplexity, iterations, seed, ..TsneConfig::default() };
    eprintln!("projecting {} latent points", points.len());
    let result = tsne(&points, &config).context("projection failed")?;
    for ((r, z), y) in records.iter_mut().zip(&points).zip(&result.embedding) {
        r.latent = Some(*z);
        r.projection = Some(*y);
    }
    write(dataset, &write_dataset(&records))?;
    println!("records={}", records.len());
    println!("perplexity={}", result.perplexity);
    println!("final_kl={:.6}", result.kl_history.last().copied().unwrap_or(0.0));
    for (genre, [x, y]) in genre_centroids(&records) {
        println!("centroid\t{genre}\t{x:.6}\t{y:.6}");
    }
    Ok(())
}

fn melody_extract(cli: &Cli, input: &Path, output: &Path, k: Option<f64>) -> Outcome {
    let config = pipeline_config(cli, k)?;
    let files = midi_files(input)?;
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for (path, bytes) in &files {
        let file = match parse_midi(bytes) {
            Ok(f) if midi::is_four_four(&f) && channel9_nontrivial(&f, &config.merge) => f,
            Ok(_) => {
                skipped += 1;
                continue;
            }
            Err(e) => {
                log::warn!("skipping {path}: {e}");
                skipped += 1;
                continue;
            }
        };
        let scan = scan_drum_loops(&file, &config);
        samples.extend(extract_melody_pairs(&file, &scan.windows));
    }
    write(output, &write_melody_dataset(&samples))?;
    println!("files={}", files.len());
    println!("skipped={skipped}");
    println!("samples={}", samples.len());
    Ok(())
}

fn melody_train(seed: u64, dataset: &Path, output: &Path, epochs: usize, batch_size: usize, lr: f64) -> Outcome {
    let samples = read_melody_dataset(&read(dataset)?).with_context(|| format!("parsing {}", dataset.display()))?;
    let config = MelodyTrainConfig { epochs, batch_size, seed, learning_rate: lr };
    if epochs == 0 || batch_size == 0 || !(lr > 0.0) {
        return Err(usage("--epochs, --batch-size and --lr must be positive"));
    }
    eprintln!("training melody generator on {} samples", samples.len());
    let (generator, history) = train_generator_with_report(&samples, &config).context("training failed")?;
    write(output, &generator.save())?;
    println!("epochs={epochs}");
    println!("final_loss={:.6}", history.last().copied().unwrap_or(0.0));
    Ok(())
}

fn melody_gen(args: &MelodyGenArgs) -> Outcome {
    let codes: Codes = args
        .codes
        .clone()
        .try_into()
        .map_err(|v: Vec<u16>| usage(format!("--codes needs {STEPS} values, got {}", v.len())))?;
    let drums = decode_codes(&codes).map_err(|e| usage(e.to_string()))?;
    let context =
        MelodyContext::new(args.instrument, args.key.id(), args.octave).map_err(|e| usage(e.to_string()))?;
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(usage("--threshold must be in [0, 1]"));
    }
    let generator = MelodyGenerator::load(&read(&args.generator)?)
        .with_context(|| format!("loading {}", args.generator.display()))?;
    let roll = generate_melody(&generator, &codes, &context, args.threshold).context("generation failed")?;
    let bytes = write_midi(&drums, Some(&roll), context.instrument, args.tempo, args.repeats)
        .map_err(|e| usage(e.to_string()))?;
    write(&args.output, &bytes)?;
    println!("onsets={}", roll.onset_count());
    match filter_melody(&roll, context.key) {
        Ok(()) => println!("filter=pass"),
        Err(reason) => println!("filter=reject\nreason={reason}"),
    }
    Ok(())
}

fn detect_key(input: &Path, channel: Option<u8>) -> Outcome {
    let file = parse_midi(&read(input)?).with_context(|| format!("parsing {}", input.display()))?;
    let mut notes: Vec<_> = midi::extract_notes(&file)
        .into_iter()
        .filter(|n| n.channel != PERCUSSION_CHANNEL && channel.is_none_or(|c| n.channel == c))
        .collect();
    notes.sort_by_key(|n| (n.start_tick, n.pitch));
    let onsets: Vec<(usize, u8)> = notes.iter().map(|n| (n.start_tick as usize, n.pitch)).collect();
    let key = detect_key_onsets(&onsets).map_err(|_| anyhow!("{} has no melodic notes", input.display()))?;
    println!("key={key}");
    println!("key_id={}", key.id());
    Ok(())
}

fn serve(dataset: &Path, models: &[String], melody: Option<&Path>, host: &str, port: u16) -> Outcome {
    let mut parsed = Vec::new();
    for spec in models {
        let (kind, path) = spec.split_once('=').ok_or_else(|| usage(format!("--models entry {spec:?} is not kind=path")))?;
        let kind: ModelKind = kind.parse().map_err(|e: String| usage(e))?;
        parsed.push((kind, PathBuf::from(path)));
    }
    let refs: Vec<(ModelKind, &Path)> = parsed.iter().map(|(k, p)| (*k, p.as_path())).collect();
    let addr: SocketAddr = format!("{host}:{port}").parse().map_err(|e| usage(format!("bad address: {e}")))?;
    let state = ServeState::load(dataset, &refs, melody).context("loading service state")?;
    let loaded: BTreeMap<_, _> = refs.iter().map(|(k, p)| (k.name(), p.display().to_string())).collect();
    eprintln!("serving {} records with models {loaded:?}", state.records().len());
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(drumspace_service::serve(Arc::new(state), addr)).context("server failed")?;
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();
    }
    let seed = cli.seed;
    match &cli.command {
        Command::Extract { input, output, k } => extract(cli, input, output, *k),
        Command::SynthCorpus { output, n } => synth_corpus(seed, output, *n),
        Command::Train(args) => train_model(seed, args),
        Command::Eval { models, n, k, baseline } => eval(seed, models, *n, *k, baseline.as_deref()),
        Command::Project { dataset, model, perplexity, iterations } => {
            project(seed, dataset, model, *perplexity, *iterations)
        }
        Command::MelodyExtract { input, output, k } => melody_extract(cli, input, output, *k),
        Command::MelodyTrain { dataset, output, epochs, batch_size, lr } => {
            melody_train(seed, dataset, output, *epochs, *batch_size, *lr)
        }
        Command::MelodyGen(args) => melody_gen(args),
        Command::DetectKey { input, channel } => detect_key(input, *channel),
        Command::Serve { dataset, models, melody, host, port } => serve(dataset, models, melody.as_deref(), host, *port),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
