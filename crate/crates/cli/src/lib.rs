//! `stclust`: generate synthetic mixtures, fit the Gibbs posterior, score the
//! estimate and report the theoretical bounds.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O failure, 3 sampler
//! divergence, 4 missing inputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

pub mod commands;
pub mod files;
pub mod settings;

pub use settings::Settings;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "STCLUST_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Format(String),
    #[error("sampler diverged at iteration {iteration}; partial trace written to {trace}")]
    Diverged { iteration: usize, trace: PathBuf },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error(transparent)]
    Model(#[from] stiefel_cluster::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Model(_) => 1,
            CliError::Io { .. } | CliError::Format(_) => 2,
            CliError::Diverged { .. } => 3,
            CliError::MissingInput(_) => 4,
        }
    }
}

/// A configurable key: its flag doubles as the config-file key.
pub(crate) struct Key {
    pub name: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, help: &'static str) -> Key {
    Key { name, help }
}

const GENERATE_KEYS: &[Key] = &[
    key("n", "number of points [60]"),
    key("d", "ambient dimension [5]"),
    key("k", "number of clusters [3]"),
    key("sizes", "comma-separated cluster sizes [balanced]"),
    key("coherence", "common inner product of distinct means [0]"),
    key("sigma", "noise standard deviation [0.05]"),
    key("seed", "random seed [0]"),
];

const FIT_KEYS: &[Key] = &[
    key("data", "point-per-row CSV [<out-dir>/data.csv]"),
    key("k", "number of clusters to extract [3]"),
    key("rank", "factor rank R [k]"),
    key("lambda", "inverse temperature [n / ||X||_F^2]"),
    key("mu_prior", "prior width [0.1]"),
    key("h", "step size [1e-4]"),
    key("n_iters", "iterations [20000]"),
    key("burn_in", "discarded iterations [10000]"),
    key("thinning", "keep every t-th post-burn-in state [10]"),
    key("reproject_every", "QR re-projection period [1]"),
    key("init", "uniform or spectral [uniform]"),
    key("seed", "random seed [0]"),
    key("chains", "independent chains run concurrently [1]"),
];

const EVALUATE_KEYS: &[Key] = &[
    key("estimate", "fit output [<out-dir>/estimate.json]"),
    key("truth", "generating means [<out-dir>/truth.json]"),
    key("labels", "true labels [<out-dir>/labels.csv]"),
];

const BOUNDS_KEYS: &[Key] = &[
    key("n", "number of points [60]"),
    key("d", "ambient dimension [5]"),
    key("k", "number of clusters [3]"),
    key("rank", "factor rank R [k]"),
    key("epsilon", "slack epsilon [0.1]"),
    key("c_u", "radius c_U [30]"),
    key("c_o", "radius c_O [1]"),
    key("rho", "covering constant rho [0.5]"),
    key("c_cov", "covering constant c [0.5]"),
    key("nu_min", "lower residual-noise level [1]"),
    key("nu_max", "upper residual-noise level [2]"),
    key("sigma_min", "smallest noise deviation [0.05]"),
    key("sigma_max", "largest noise deviation [sigma_min]"),
    key("u", "Frobenius tail parameter [1]"),
    key("coherence", "mean coherence [0]"),
    key("n_k_max", "largest cluster size [ceil(n/k)]"),
    key("mu_prior", "prior width [0.1]"),
    key("epsilon_net", "net radius of the covering argument [0.25]"),
    key("oracle_term", "plug-in oracle error [0]"),
    key("x_resid", "residual ||X - X U0 U0^t||_F [nu_max]"),
    key("m_norm", "||M|| [Gershgorin bound]"),
    key("e_norm", "||E|| [operator-norm threshold]"),
    key("monte_carlo", "run tail-bound Monte Carlo checks [false]"),
    key("mc_draws", "Monte Carlo draws per check [10000]"),
    key("mc_seed", "Monte Carlo seed [0]"),
];

fn subcommand(name: &'static str, about: &'static str, keys: &[Key]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("INI-style key = value file; flags override it"),
    );
    for k in keys {
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(k.name.replace('_', "-"))
                .value_name("VALUE")
                .help(k.help),
        );
    }
    cmd.arg(
        Arg::new("out_dir")
            .long("out-dir")
            .env(OUT_DIR_ENV)
            .value_name("DIR")
            .help("output directory [.]"),
    )
}

pub fn command() -> Command {
    Command::new("stclust")
        .about("Clustering by Gibbs-posterior sampling on the nonnegative Stiefel manifold")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(subcommand(
            "generate",
            "Draw a Gaussian mixture with equiangular unit means",
            GENERATE_KEYS,
        ))
        .subcommand(subcommand(
            "fit",
            "Run the Langevin sampler and write the posterior-mean estimate",
            FIT_KEYS,
        ))
        .subcommand(subcommand(
            "evaluate",
            "Score an estimate against the generating truth",
            EVALUATE_KEYS,
        ))
        .subcommand(subcommand(
            "bounds",
            "Evaluate the risk and failure-probability bounds",
            BOUNDS_KEYS,
        ))
        .arg(Arg::new("quiet").long("quiet").short('q').global(true).action(ArgAction::SetTrue))
}

/// Config file values overlaid with explicit flags.
fn collect_settings(matches: &ArgMatches, keys: &[Key]) -> Result<(Settings, PathBuf), CliError> {
    let mut settings = match matches.get_one::<String>("config") {
        Some(path) => Settings::load(Path::new(path))?,
        None => Settings::default(),
    };
    let known: Vec<&str> = keys.iter().map(|k| k.name).chain(["out_dir"]).collect();
    if let Some(unknown) = settings.keys().find(|k| !known.contains(k)) {
        return Err(CliError::Usage(format!("unknown config key {unknown:?}")));
    }
    for k in keys {
        if let Some(v) = matches.get_one::<String>(k.name) {
            settings.set(k.name, v.clone());
        }
    }
    // Precedence: flag, then config file, then environment, then ".".
    let given = matches.get_one::<String>("out_dir").map(PathBuf::from);
    let out_dir = match matches.value_source("out_dir") {
        Some(clap::parser::ValueSource::CommandLine) => given,
        _ => settings.path("out_dir").or(given),
    }
    .unwrap_or_else(|| PathBuf::from("."));
    Ok((settings, out_dir))
}

fn dispatch(matches: &ArgMatches) -> Result<Vec<PathBuf>, CliError> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let keys = match name {
        "generate" => GENERATE_KEYS,
        "fit" => FIT_KEYS,
        "evaluate" => EVALUATE_KEYS,
        "bounds" => BOUNDS_KEYS,
        other => return Err(CliError::Usage(format!("unknown subcommand {other}"))),
    };
    let (settings, out_dir) = collect_settings(sub, keys)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    match name {
        "generate" => commands::generate::run(&settings, &out_dir),
        "fit" => commands::fit::run(&settings, &out_dir),
        "evaluate" => commands::evaluate::run(&settings, &out_dir),
        _ => commands::bounds::run(&settings, &out_dir),
    }
}

/// Parses `args` and runs the chosen subcommand.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let quiet = matches.get_flag("quiet");
    match dispatch(&matches) {
        Ok(written) => {
            if !quiet {
                for p in written {
                    println!("wrote {}", p.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("stclust: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn every_key_has_a_hyphenated_flag() {
        let m = command()
            .try_get_matches_from(["stclust", "fit", "--n-iters", "5", "--mu-prior", "0.2"])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let (s, _) = collect_settings(sub, FIT_KEYS).unwrap();
        assert_eq!(s.get::<usize>("n_iters").unwrap(), Some(5));
        assert_eq!(s.get::<f64>("mu_prior").unwrap(), Some(0.2));
    }

    #[test]
    fn flags_override_config_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.ini");
        std::fs::write(&cfg, "n = 10\nsigma = 0.5\nout_dir = somewhere\n").unwrap();
        let m = command()
            .try_get_matches_from([
                "stclust",
                "generate",
                "--config",
                cfg.to_str().unwrap(),
                "--n",
                "12",
            ])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let (s, out) = collect_settings(sub, GENERATE_KEYS).unwrap();
        assert_eq!(s.get::<usize>("n").unwrap(), Some(12));
        assert_eq!(s.get::<f64>("sigma").unwrap(), Some(0.5));
        assert_eq!(out, PathBuf::from("somewhere"));
    }

    #[test]
    fn unknown_config_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.ini");
        std::fs::write(&cfg, "n_iter = 10\n").unwrap();
        let m = command()
            .try_get_matches_from(["stclust", "fit", "--config", cfg.to_str().unwrap()])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let err = collect_settings(sub, FIT_KEYS).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
