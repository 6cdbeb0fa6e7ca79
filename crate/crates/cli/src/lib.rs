//! Command-line front end for the dynamical percolation engine.
//!
//! Each subcommand reads an optional JSON configuration, overlays the flags
//! given on the command line, validates the result, runs the experiment and
//! writes CSV files, optional SVG charts and a `manifest.json` into the
//! output directory.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 configuration error,
//! 3 a `--check` criterion failed.

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use commands::{Ctx, Report};
use config::*;
use output::{config_hash, version_string, Output, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Run(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "dynperc", version, about = "Random walk on dynamical percolation: simulation and checks")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "DYNPERC_OUT")]
    out: Option<PathBuf>,
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Exit with code 3 if an acceptance criterion fails.
    #[arg(long, global = true)]
    check: bool,
    /// Also write SVG charts.
    #[arg(long, global = true)]
    svg: bool,
    /// Write the sampled environment trajectory as `env.csv` (torus subcommands).
    #[arg(long, global = true)]
    dump_env: bool,
    /// Allow mu above 1/e (walker subcommands).
    #[arg(long, global = true)]
    allow_large_mu: bool,
    /// Do not print check results and the output summary.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean squared displacement of the walker.
    Msd(MsdArgs),
    /// Diffusion constant over a grid of densities and refresh rates.
    SigmaSweep(SigmaSweepArgs),
    /// One-arm probabilities over a radius grid.
    Onearm(OneArmArgs),
    /// Ever-open cluster against static percolation at the ever-open density.
    Hcluster(HClusterArgs),
    /// Probability that the origin lies in the largest torus cluster.
    Theta(ThetaArgs),
    /// Drift and conductance inequalities on random evolving-set instances.
    EvolvingCheck(EvolvingCheckArgs),
    /// Diaconis–Fill coupling against its set-averaged estimator.
    DfCheck(DfCheckArgs),
    /// Growth of the Doob-transformed evolving set.
    Growth(GrowthArgs),
    /// Good and excellent times along Diaconis–Fill paths.
    GoodTimes(GoodTimesArgs),
    /// Tail of the walker's displacement.
    Tail(TailArgs),
    /// Markov type ratios MSD(ks) / (k MSD(s)).
    MarkovType(MarkovTypeArgs),
    /// Print the JSON schema of every configuration.
    Schema,
}

macro_rules! flag_struct {
    ($name:ident { $($field:ident : $ty:ty),* $(,)? }) => {
        #[derive(Args, Debug, Serialize)]
        struct $name {
            $(
                #[arg(long, value_delimiter = ',')]
                #[serde(skip_serializing_if = "Option::is_none")]
                $field: Option<$ty>,
            )*
        }
    };
}

flag_struct!(MsdArgs { lattice: LatticeName, d: usize, p: PSpec, mu: f64, t_max: f64, checkpoints: Vec<f64>, replicas: usize });
flag_struct!(SigmaSweepArgs { lattice: LatticeName, d: usize, ps: Vec<PSpec>, mus: Vec<f64>, t: f64, replicas: usize });
flag_struct!(OneArmArgs {
    lattice: LatticeName, d: usize, radii: Vec<u64>, r_min: u64, r_max: u64, p: PSpec, p_rule: PRuleName,
    nu: f64, trials: u64, fit_cutoff: f64, window_nu: f64, window_max_r: u64, expected_slope: f64, slope_tolerance: f64,
});
flag_struct!(HClusterArgs { lattice: LatticeName, d: usize, p: PSpec, mus: Vec<f64>, ts: Vec<f64>, r: u64, trials: u64, alpha: f64 });
flag_struct!(ThetaArgs { lattice: LatticeName, d: usize, ps: Vec<PSpec>, sides: Vec<usize>, reps: u64 });
flag_struct!(EvolvingCheckArgs { d: usize, sides: Vec<usize>, mus: Vec<f64>, ps: Vec<f64>, instances: usize });
flag_struct!(DfCheckArgs { d: usize, side: usize, p: f64, mu: f64, steps: u64, runs: usize, z_max: f64 });
flag_struct!(GrowthArgs { d: usize, side: usize, p: f64, mu: f64, steps: u64, runs: usize, fit_from: u64 });
flag_struct!(GoodTimesArgs { d: usize, side: usize, p: f64, mu: f64, horizon: u64, runs: usize, theta: f64, theta_reps: u64 });
flag_struct!(TailArgs { lattice: LatticeName, d: usize, p: PSpec, mu: f64, t: f64, replicas: usize, l_max: u64, fit_lo: u64, fit_hi: u64, min_r2: f64 });
flag_struct!(MarkovTypeArgs { lattice: LatticeName, d: usize, p: PSpec, mu: f64, s: f64, ks: Vec<u64>, replicas: usize, bound: f64 });

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Msd(a) => execute::<MsdConfig, _>("msd", g, a, MsdConfig::validate, commands::msd),
        Command::SigmaSweep(a) => {
            execute::<SigmaSweepConfig, _>("sigma-sweep", g, a, SigmaSweepConfig::validate, commands::sigma_sweep)
        }
        Command::Onearm(a) => execute::<OneArmConfig, _>("onearm", g, a, OneArmConfig::validate, commands::onearm),
        Command::Hcluster(a) => execute::<HClusterConfig, _>("hcluster", g, a, HClusterConfig::validate, commands::hcluster),
        Command::Theta(a) => execute::<ThetaConfig, _>("theta", g, a, ThetaConfig::validate, commands::theta),
        Command::EvolvingCheck(a) => execute::<EvolvingCheckConfig, _>(
            "evolving-check",
            g,
            a,
            EvolvingCheckConfig::validate,
            commands::evolving_check,
        ),
        Command::DfCheck(a) => execute::<DfCheckConfig, _>("df-check", g, a, DfCheckConfig::validate, commands::df_check),
        Command::Growth(a) => execute::<GrowthConfig, _>("growth", g, a, GrowthConfig::validate, commands::growth),
        Command::GoodTimes(a) => {
            execute::<GoodTimesConfig, _>("good-times", g, a, GoodTimesConfig::validate, commands::good_times)
        }
        Command::Tail(a) => execute::<TailConfig, _>("tail", g, a, TailConfig::validate, commands::tail),
        Command::MarkovType(a) => {
            execute::<MarkovTypeConfig, _>("markov-type", g, a, MarkovTypeConfig::validate, commands::markov_type)
        }
        Command::Schema => {
            let doc = serde_json::to_string_pretty(&schema_document()).map_err(|e| CliError::Run(e.to_string()))?;
            println!("{doc}");
            Ok(0)
        }
    }
}

fn read_config_file(path: &Path) -> Result<serde_json::Map<String, serde_json::Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(serde_json::Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Config(format!("{}: top level must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Config(format!("{}: {e}", path.display()))),
    }
}

/// Overlay command-line values on the file contents and deserialize.
fn resolve<C: DeserializeOwned, A: Serialize>(g: &GlobalArgs, args: &A) -> Result<C, CliError> {
    let mut merged = match &g.config {
        Some(path) => read_config_file(path)?,
        None => serde_json::Map::new(),
    };
    let flags = serde_json::to_value(args).map_err(|e| CliError::Run(e.to_string()))?;
    if let serde_json::Value::Object(map) = flags {
        merged.extend(map);
    }
    if let Some(seed) = g.seed {
        merged.insert("seed".into(), seed.into());
    }
    if let Some(threads) = g.threads {
        merged.insert("threads".into(), threads.into());
    }
    if g.allow_large_mu {
        merged.insert("allow_large_mu".into(), true.into());
    }
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(|e| CliError::Config(format!("schema violation: {e}")))
}

/// Fields every configuration shares, read back from its JSON form.
fn common(value: &serde_json::Value) -> (u64, usize, Option<PathBuf>) {
    let seed = value.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
    let threads = value.get("threads").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let out = value.get("out").and_then(|v| v.as_str()).map(PathBuf::from);
    (seed, threads, out)
}

fn execute<C, A>(
    name: &str,
    g: &GlobalArgs,
    args: &A,
    validate: fn(&C) -> Result<(), ConfigError>,
    body: fn(&C, &mut Ctx) -> Result<Report, CliError>,
) -> Result<i32, CliError>
where
    C: DeserializeOwned + Serialize,
    A: Serialize,
{
    let cfg: C = resolve(g, args)?;
    validate(&cfg)?;
    let value = serde_json::to_value(&cfg).map_err(|e| CliError::Run(e.to_string()))?;
    let (seed, threads, cfg_out) = common(&value);
    let dir = g.out.clone().or(cfg_out).unwrap_or_else(|| PathBuf::from("out").join(name));
    let mut out = Output::new(&dir, g.svg)?;
    let started = Instant::now();
    let report = body(
        &cfg,
        &mut Ctx {
            out: &mut out,
            dump_env: g.dump_env,
        },
    )?;
    let manifest = RunManifest {
        subcommand: name.to_string(),
        version: version_string(),
        seed,
        threads,
        config_hash: config_hash(name, &value),
        config: value,
        wall_time_secs: started.elapsed().as_secs_f64(),
        files: out.files().to_vec(),
        checks: report.checks.clone(),
        summary: report.summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Run(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    if !g.quiet {
        for c in &report.checks {
            println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        println!("wrote {} files to {}", out.files().len() + 1, dir.display());
    }
    let failed = report.checks.iter().any(|c| !c.pass);
    Ok(if g.check && failed { 3 } else { 0 })
}
