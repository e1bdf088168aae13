//! Command-line front end: `generate`, `simulate`, `fit`, `reproduce`.
//!
//! Exit codes: 0 success, 2 user or configuration error, 3 missing inputs,
//! 4 numeric failure.

pub mod artifacts;
pub mod reproduce;
pub mod simulate;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::crystal::BathConfiguration;
use crate::error::Error;
use crate::fitter::{self, Dataset, FitOptions};

use artifacts::Artifacts;
use simulate::Mode;

#[derive(Debug, Parser)]
#[command(name = "spinsim", version, about = "Spin-bath decoherence simulation and echo-decay fitting")]
pub struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "SPINSIM_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample bath configurations and write one JSON file each.
    Generate(RunArgs),
    /// Coherence curves and fitted T2 for every configured temperature.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "sweep-temperature")]
        mode: Mode,
    },
    /// Fit a registered model to a CSV dataset.
    Fit(FitArgs),
    /// Run the canned pipeline behind one figure.
    Reproduce {
        #[arg(long)]
        figure: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Hold a parameter at a value: `name=value`.
    #[arg(long, value_parser = parse_pair)]
    pub fix: Vec<(String, f64)>,
    /// Free a parameter the model fixes by default.
    #[arg(long)]
    pub free: Vec<String>,
    /// Starting value: `name=value`.
    #[arg(long, value_parser = parse_pair)]
    pub init: Vec<(String, f64)>,
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    /// Optimizer iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Three-pulse data: one amplitude for every τ instead of one per τ.
    #[arg(long)]
    pub shared_amplitude: bool,
}

fn parse_pair(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// A failed command: message plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn missing(message: String) -> Self {
        Self { code: 3, message }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
            Error::Degenerate(_) | Error::NonConvergence(_) | Error::Io(_) => 4,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cli: Cli) -> CmdResult {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure {
                code: 2,
                message: "--workers must be at least 1".into(),
            });
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure {
        code: 4,
        message: e.to_string(),
    })?;
    pool.install(|| match cli.command {
        Command::Generate(args) => generate(&args),
        Command::Simulate { run, mode } => simulate_cmd(&run, mode),
        Command::Fit(args) => fit_cmd(&args),
        Command::Reproduce { figure, out, seed } => reproduce_cmd(&figure, &out, seed),
    })
}

/// Loads the config and applies command-line overrides.
fn load(args: &RunArgs) -> std::result::Result<(RunConfig, Vec<u8>), Failure> {
    let bytes = fs::read(&args.config).map_err(|e| Failure::missing(format!("{}: {e}", args.config.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Failure {
        code: 2,
        message: format!("{}: not UTF-8", args.config.display()),
    })?;
    let mut cfg = RunConfig::from_toml_str(&text).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", args.config.display()),
    })?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.cce.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok((cfg, bytes))
}

fn staged(command: &str, cfg: &RunConfig, config_path: &Path, config_bytes: &[u8]) -> std::result::Result<Artifacts, Failure> {
    let mut a = Artifacts::new(command, cfg.seed);
    a.input(config_path, config_bytes);
    a.set_config(cfg.digest(), serde_json::to_value(cfg).map_err(Error::from)?);
    Ok(a)
}

pub fn bath_file_name(k: usize) -> String {
    format!("bath_{k:04}.json")
}

fn generate(args: &RunArgs) -> CmdResult {
    let (cfg, bytes) = load(args)?;
    let mut out = staged("generate", &cfg, &args.config, &bytes)?;
    for (k, c) in cfg.sample_configurations()?.iter().enumerate() {
        out.add(bath_file_name(k), c.to_json()? + "\n");
    }
    let m = out.commit(&cfg.output_dir)?;
    println!("wrote {} bath files to {}", m.outputs.len(), cfg.output_dir.display());
    Ok(())
}

/// Reads `bath_*.json` from `dir` in name order; at least `n` are required.
fn load_baths(dir: &Path, n: usize, out: &mut Artifacts) -> std::result::Result<Vec<BathConfiguration>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::missing(format!("bath directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("bath_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.len() < n {
        return Err(Failure::missing(format!(
            "{} holds {} bath files, {n} needed",
            dir.display(),
            paths.len()
        )));
    }
    paths
        .iter()
        .take(n)
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Failure::missing(format!("{}: {e}", p.display())))?;
            out.input(p, text.as_bytes());
            BathConfiguration::from_json(&text).map_err(|e| Failure {
                code: 2,
                message: format!("{}: {e}", p.display()),
            })
        })
        .collect()
}

fn simulate_cmd(args: &RunArgs, mode: Mode) -> CmdResult {
    let (cfg, bytes) = load(args)?;
    let mut out = staged(&format!("simulate --mode {}", mode_name(mode)), &cfg, &args.config, &bytes)?;
    let configs = match &cfg.bath_dir {
        Some(dir) => {
            let baths = load_baths(dir, cfg.cce.n_configurations, &mut out)?;
            if let Some(b) = baths.iter().find(|b| b.species != cfg.species) {
                return Err(Failure {
                    code: 2,
                    message: format!("bath file with seed {} was generated for different species", b.rng_seed),
                });
            }
            baths
        }
        None => cfg.sample_configurations()?,
    };
    let sim = simulate::run(&cfg, mode, &configs)?;
    for (name, curve) in &sim.curves {
        out.add(name.clone(), curve.to_csv());
    }
    out.add("t2.csv", sim.t2_csv());
    out.add("t2.json", sim.t2_json());
    out.commit(&cfg.output_dir)?;
    for r in &sim.rows {
        println!(
            "T = {:>8} mK  {:<36} T2 = {:.4e} us  x = {:.2}",
            r.temperature_mK, r.sequence, r.t2_us, r.stretch
        );
    }
    Ok(())
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Hahn => "hahn",
        Mode::Xy8 => "xy8",
        Mode::Id => "id",
        Mode::SweepTemperature => "sweep-temperature",
    }
}

fn fit_cmd(args: &FitArgs) -> CmdResult {
    let bytes = fs::read(&args.data).map_err(|e| Failure::missing(format!("{}: {e}", args.data.display())))?;
    let data = Dataset::from_csv(bytes.as_slice()).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", args.data.display()),
    })?;
    let def = fitter::model_by_name(&args.model).ok_or_else(|| Failure::from(Error::UnknownModel(args.model.clone())))?;
    data.require_axes(def.axes)?;
    let opts = FitOptions {
        fix: args.fix.iter().cloned().collect::<BTreeMap<_, _>>(),
        free: args.free.clone(),
        initial: args.init.iter().cloned().collect(),
        n_bootstrap: args.bootstrap,
        seed: args.seed,
        max_iter: args.max_iter,
        ..FitOptions::default()
    };
    let result = if def.name == "eq1_three_pulse" {
        fitter::global_fit_three_pulse(&data, args.shared_amplitude, &opts)?
    } else {
        fitter::fit(def.name, &data, &opts)?
    };
    let mut out = Artifacts::new(&format!("fit --model {}", def.name), args.seed);
    out.input(&args.data, &bytes);
    out.add("fit.json", result.to_json()? + "\n");
    out.commit(&args.out)?;
    print!("{}", result.summary());
    Ok(())
}

fn reproduce_cmd(figure: &str, dir: &Path, seed: u64) -> CmdResult {
    if !reproduce::FIGURES.contains(&figure) {
        return Err(Failure {
            code: 2,
            message: format!(
                "unknown figure `{figure}`; expected one of {}",
                reproduce::FIGURES.join(", ")
            ),
        });
    }
    let r = reproduce::reproduce(figure, seed)?;
    let mut out = Artifacts::new(&format!("reproduce --figure {figure}"), seed);
    for (name, bytes) in &r.files {
        out.add(name.clone(), bytes.clone());
    }
    for (name, cfg) in &r.configs {
        out.add(format!("config_{name}.toml"), cfg.to_toml());
    }
    out.commit(dir)?;
    print!("{}", r.comparison_csv());
    Ok(())
}
