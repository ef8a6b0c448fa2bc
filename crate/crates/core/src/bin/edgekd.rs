use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edgekd::dataio::{dataset_stats, generate_synthetic_scenario, is_canonical_dir, write_scenario, GenConfig};
use edgekd::experiment::{self, parse_methods, Profile, RunConfig, ScenarioSource};
use edgekd::{Error, Result};

#[derive(Parser)]
#[command(name = "edgekd", version, about = "Per-device link-quality classifiers: local, federated and distilled training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the selected methods, writing reports to --out.
    Run(RunArgs),
    /// Generate a synthetic scenario and write it in canonical form.
    GenScenario(GenArgs),
    /// Print dataset statistics for a scenario as JSON.
    Stats(StatsArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Run configuration (JSON). Missing keys fall back to profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// scr4, scr5 or synthetic.
    #[arg(long = "scenario-profile")]
    profile: Option<String>,
    /// Scenario directory: canonical (has scenario.json) or per-node CSVs with --schema.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Schema file for a directory of per-node CSVs.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of local,fedavg,dpfed,kd_scr,kd_smote,tf_kd,ensemble.
    #[arg(long)]
    methods: Option<String>,
    /// Upper bound on worker threads. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    /// Generator configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "scenario-profile")]
    profile: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write the statistics here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(args: &ScenarioArgs) -> Result<RunConfig> {
    let profile = args.profile.as_deref().map(str::parse::<Profile>).transpose()?;
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path, profile)?,
        None => RunConfig::from_json(&serde_json::json!({}), profile)?,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match (&args.scenario, &args.schema) {
        (Some(dir), Some(schema)) => {
            cfg.scenario = ScenarioSource::Csv { path: dir.clone(), schema: schema.clone() };
        }
        (Some(dir), None) => {
            if !is_canonical_dir(dir) {
                return Err(Error::config(format!(
                    "{} is not a canonical scenario directory; pass --schema for per-node CSVs",
                    dir.display()
                )));
            }
            cfg.scenario = ScenarioSource::Canonical { path: dir.clone() };
        }
        (None, Some(_)) => return Err(Error::config("--schema needs --scenario")),
        (None, None) => {}
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = resolve(&args.scenario)?;
    if let Some(out) = args.out {
        cfg.out = out;
    }
    if let Some(list) = &args.methods {
        cfg.methods = parse_methods(list)?;
    }
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Error::config("--threads must be at least 1"));
        }
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    let out = experiment::run(&cfg)?;
    println!("config_hash={} seed={} out={}", cfg.hash(), cfg.seed, cfg.out.display());
    for s in &out.summary {
        println!(
            "method={} edge_accuracy={:.4} frame_accuracy={:.4} devices={} fallbacks={}",
            s.method, s.edge_accuracy, s.frame_accuracy, s.devices, s.fallbacks
        );
    }
    Ok(())
}

fn gen_scenario(args: GenArgs) -> Result<()> {
    if let Some(p) = args.profile.as_deref() {
        if p.parse::<Profile>()? != Profile::Synthetic {
            return Err(Error::config(format!("gen-scenario only supports the synthetic profile, got `{p}`")));
        }
    }
    let gen = match &args.config {
        Some(path) => read_json::<GenConfig>(path)?,
        None => GenConfig::default(),
    };
    gen.validate()?;
    let scenario = generate_synthetic_scenario(&gen, args.seed)?;
    write_scenario(&scenario, &args.out)?;
    let stats = dataset_stats(&scenario);
    println!(
        "wrote {} devices, {} frames, aggregate error rate {:.4} to {}",
        stats.devices,
        stats.total_frames,
        stats.aggregate_frame_error_rate,
        args.out.display()
    );
    Ok(())
}

fn stats(args: StatsArgs) -> Result<()> {
    let cfg = resolve(&args.scenario)?;
    let scenario = experiment::load_source(&cfg.scenario, cfg.seed)?;
    let mut text = serde_json::to_string_pretty(&dataset_stats(&scenario)).expect("stats serialize");
    text.push('\n');
    match args.out {
        Some(path) => fs::write(&path, text).map_err(|e| Error::io(&path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::config(format!("config file {} not found", path.display())),
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("bad config {}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::GenScenario(a) => gen_scenario(a),
        Command::Stats(a) => stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = serde_json::to_string(&e.to_string()).expect("string serializes");
            eprintln!("error kind={} message={message}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
