use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use ice_core::cluster::sweep_eps;
use ice_core::config::{parse_assignment, Manifest, KEYS, MANIFEST_PATH_KEYS};
use ice_core::data::{generate_synthetic, load_dataset, save_dataset, EmbeddingDataset, SyntheticSpec};
use ice_core::experiment::{ablation_grid, median, RunSummary};
use ice_core::io::{load_checkpoint, metrics_row, save_checkpoint, METRICS_HEADER};
use ice_core::trainer::{evaluate_encoder, extract_bank, train, train_with, EvalSplits, TrainConfig, TrainState};
use ice_core::IceError;

#[derive(Parser)]
#[command(name = "ice", version, about = "Contrastive re-identification training on embedding datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// key = value config file (a run manifest also works)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set epochs=5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(clap::Args)]
struct DataArgs {
    /// Training dataset; a synthetic benchmark is generated when omitted
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long)]
    gallery: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/query/gallery datasets
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SyntheticSpec::default().identities)]
        identities: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().cameras)]
        cameras: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().samples_per_camera)]
        samples: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().dim)]
        dim: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().center_scale)]
        center_scale: f64,
        #[arg(long, default_value_t = SyntheticSpec::default().sigma_id)]
        sigma_id: f64,
        #[arg(long, default_value_t = SyntheticSpec::default().sigma_cam)]
        sigma_cam: f64,
        #[arg(long, default_value_t = SyntheticSpec::default().test_identities)]
        test_identities: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and write manifest, metrics CSV and checkpoints
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also checkpoint every N epochs (0: final checkpoint only)
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Evaluate a checkpoint's momentum encoder
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
    },
    /// Loss ablation grid in both memory modes
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Runs per cell; medians are reported
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Cluster counts over a grid of DBSCAN radii on one bank
    SweepEps {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Bank from this checkpoint's momentum encoder instead of a fresh one
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.45,0.5,0.55,0.6")]
        grid: Vec<f64>,
    },
}

/// Missing inputs and bad flags.
struct Usage(String);

enum Failure {
    Usage(Usage),
    Run(IceError),
}

impl From<IceError> for Failure {
    fn from(e: IceError) -> Self {
        Failure::Run(e)
    }
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn key_help() -> String {
    let mut s = String::from("Config keys (defaults):\n");
    let entries = TrainConfig::default().entries();
    for ((key, desc), (_, value)) in KEYS.iter().zip(entries) {
        s.push_str(&format!("  {key:<18} {value:<8} {desc}\n"));
    }
    s.push_str("\nThe ICE_SEED environment variable replaces the default seed.");
    s
}

fn require(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Usage(format!("no such file: {}", path.display())).into())
    }
}

/// Defaults, then ICE_SEED, then the config file, then --set overrides.
fn resolve_config(args: &ConfigArgs) -> CliResult<(TrainConfig, Vec<(String, String)>)> {
    let mut config = TrainConfig::from_env()?;
    let mut extras = Vec::new();
    if let Some(path) = &args.config {
        require(path)?;
        let text = fs::read_to_string(path).map_err(IceError::from)?;
        extras = config.apply_text(&text, path, MANIFEST_PATH_KEYS)?;
    }
    for s in &args.set {
        let (k, v) = parse_assignment(s).ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        config.set(k, v).map_err(|e| Usage(e.to_string()))?;
    }
    config.validate()?;
    Ok((config, extras))
}

struct Inputs {
    train: EmbeddingDataset,
    query: Option<EmbeddingDataset>,
    gallery: Option<EmbeddingDataset>,
    paths: Option<(PathBuf, Option<PathBuf>, Option<PathBuf>)>,
}

impl Inputs {
    fn eval(&self) -> Option<EvalSplits<'_>> {
        match (&self.query, &self.gallery) {
            (Some(query), Some(gallery)) => Some(EvalSplits { query, gallery }),
            _ => None,
        }
    }
}

fn load_inputs(args: &DataArgs, extras: &[(String, String)], seed: u64) -> CliResult<Inputs> {
    let from_manifest = |key: &str| extras.iter().find(|(k, _)| k == key).map(|(_, v)| PathBuf::from(v));
    let data = args.data.clone().or_else(|| from_manifest("data"));
    let query = args.query.clone().or_else(|| from_manifest("query"));
    let gallery = args.gallery.clone().or_else(|| from_manifest("gallery"));
    let Some(data) = data else {
        if query.is_some() || gallery.is_some() {
            return Err(Usage("--query/--gallery need --data".into()).into());
        }
        let s = generate_synthetic(&SyntheticSpec { seed, ..SyntheticSpec::default() })?;
        return Ok(Inputs { train: s.train, query: Some(s.query), gallery: Some(s.gallery), paths: None });
    };
    let load = |p: &Option<PathBuf>| -> CliResult<Option<EmbeddingDataset>> {
        match p {
            Some(p) => {
                require(p)?;
                Ok(Some(load_dataset(p)?))
            }
            None => Ok(None),
        }
    };
    require(&data)?;
    let train = load_dataset(&data)?;
    let q = load(&query)?;
    let g = load(&gallery)?;
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let paths = Some((abs(&data), query.as_deref().map(abs), gallery.as_deref().map(abs)));
    Ok(Inputs { train, query: q, gallery: g, paths })
}

fn cmd_generate(spec: SyntheticSpec, out: &Path) -> CliResult<()> {
    let s = generate_synthetic(&spec)?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(out).map_err(IceError::from)?;
    for (name, ds) in [("train.txt", &s.train), ("query.txt", &s.query), ("gallery.txt", &s.gallery)] {
        if !ds.is_empty() {
            save_dataset(ds, &out.join(name))?;
        }
    }
    println!(
        "wrote {} train, {} query, {} gallery records to {}",
        s.train.len(),
        s.query.len(),
        s.gallery.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(data: &DataArgs, cfg: &ConfigArgs, out: &Path, checkpoint_every: usize) -> CliResult<()> {
    let (config, extras) = resolve_config(cfg)?;
    let inputs = load_inputs(data, &extras, config.seed)?;
    fs::create_dir_all(out).map_err(IceError::from)?;

    // A synthetic run is replayed from saved copies of its datasets.
    let paths = match &inputs.paths {
        Some(p) => p.clone(),
        None => {
            let dir = fs::canonicalize(out).map_err(IceError::from)?;
            let p = (dir.join("train.txt"), dir.join("query.txt"), dir.join("gallery.txt"));
            save_dataset(&inputs.train, &p.0)?;
            save_dataset(inputs.query.as_ref().expect("synthetic"), &p.1)?;
            save_dataset(inputs.gallery.as_ref().expect("synthetic"), &p.2)?;
            (p.0, Some(p.1), Some(p.2))
        }
    };
    let manifest = Manifest { config, data: paths.0, query: paths.1, gallery: paths.2 };
    fs::write(out.join("manifest.txt"), manifest.to_text()).map_err(IceError::from)?;

    let mut csv = BufWriter::new(File::create(out.join("metrics.csv")).map_err(IceError::from)?);
    writeln!(csv, "{METRICS_HEADER}").map_err(IceError::from)?;
    let outcome = train_with(config, &inputs.train, inputs.eval(), |report, state| {
        writeln!(csv, "{}", metrics_row(report))?;
        csv.flush()?;
        if checkpoint_every > 0 && state.epoch % checkpoint_every == 0 && !state.is_finished() {
            save_checkpoint(state, &out.join(format!("checkpoint-epoch{:03}.json", state.epoch)))?;
        }
        eprintln!(
            "epoch {}: {} clusters, {} outliers, {} iterations ({} skipped)",
            report.epoch, report.cluster_count, report.outlier_count, report.iterations_run, report.iterations_skipped
        );
        Ok(())
    })?;
    save_checkpoint(&outcome.state, &out.join("final.json"))?;
    let last = outcome.reports.last().expect("at least one epoch");
    match last.eval {
        Some(e) => println!("final: {} clusters, mAP {:.4}, rank1 {:.4}", last.cluster_count, e.map, e.rank1),
        None => println!("final: {} clusters", last.cluster_count),
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, query: &Path, gallery: &Path) -> CliResult<()> {
    for p in [checkpoint, query, gallery] {
        require(p)?;
    }
    let state = load_checkpoint(checkpoint)?;
    let (q, g) = (load_dataset(query)?, load_dataset(gallery)?);
    let r = evaluate_encoder(&state.pair.momentum, EvalSplits { query: &q, gallery: &g })?;
    println!("mAP = {}", r.map);
    println!("rank1 = {}", r.rank1);
    println!("rank5 = {}", r.rank5);
    println!("rank10 = {}", r.rank10);
    println!("valid_queries = {}", r.valid_queries);
    println!("excluded_queries = {}", r.excluded_queries);
    Ok(())
}

fn cmd_ablate(data: &DataArgs, cfg: &ConfigArgs, seeds: u64) -> CliResult<()> {
    let (base, extras) = resolve_config(cfg)?;
    if seeds == 0 {
        return Err(Usage("--seeds must be at least 1".into()).into());
    }
    let runs: Vec<(Inputs, u64)> = (0..seeds)
        .map(|s| {
            let seed = base.seed.wrapping_add(s);
            load_inputs(data, &extras, seed).map(|i| (i, seed))
        })
        .collect::<CliResult<_>>()?;
    println!("memory,losses,mAP,rank1,n_clusters,mean_KL");
    for variant in ablation_grid() {
        let mut summaries = Vec::new();
        for (inputs, seed) in &runs {
            let config = TrainConfig { seed: *seed, ..variant.apply(&base) };
            summaries.push(RunSummary::of(&train(config, &inputs.train, inputs.eval())?));
        }
        let med = |f: fn(&RunSummary) -> f64| median(&summaries.iter().map(f).collect::<Vec<_>>());
        println!(
            "{},{},{:.4},{:.4},{},{:.4}",
            variant.memory_name(),
            variant.name(),
            med(|s| s.map),
            med(|s| s.rank1),
            med(|s| s.cluster_count as f64),
            med(|s| s.mean_kl)
        );
    }
    Ok(())
}

fn cmd_sweep(data: &DataArgs, cfg: &ConfigArgs, checkpoint: Option<&Path>, grid: &[f64]) -> CliResult<()> {
    let (config, extras) = resolve_config(cfg)?;
    let inputs = load_inputs(data, &extras, config.seed)?;
    let state = match checkpoint {
        Some(p) => {
            require(p)?;
            load_checkpoint(p)?
        }
        None => TrainState::new(config, inputs.train.dim)?,
    };
    let bank = extract_bank(&state.pair, &inputs.train.features())?;
    println!("eps,n_clusters,n_outliers");
    for (eps, clusters, outliers) in sweep_eps(&bank, &config.cluster, grid)? {
        println!("{eps},{clusters},{outliers}");
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate {
            out,
            identities,
            cameras,
            samples,
            dim,
            center_scale,
            sigma_id,
            sigma_cam,
            test_identities,
            seed,
        } => cmd_generate(
            SyntheticSpec {
                identities,
                cameras,
                samples_per_camera: samples,
                dim,
                center_scale,
                sigma_id,
                sigma_cam,
                test_identities,
                seed,
            },
            &out,
        ),
        Command::Train { data, config, out, checkpoint_every } => cmd_train(&data, &config, &out, checkpoint_every),
        Command::Eval { checkpoint, query, gallery } => cmd_eval(&checkpoint, &query, &gallery),
        Command::Ablate { data, config, seeds } => cmd_ablate(&data, &config, seeds),
        Command::SweepEps { data, config, checkpoint, grid } => cmd_sweep(&data, &config, checkpoint.as_deref(), &grid),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let help = key_help();
    let mut command = Cli::command();
    for name in ["train", "ablate", "sweep-eps"] {
        command = command.mut_subcommand(name, |c| c.after_help(help.clone()));
    }
    let matches = command.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(Usage(msg))) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
