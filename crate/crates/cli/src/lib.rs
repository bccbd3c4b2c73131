//! Experiment driver behind the `sdvi` binary.
//!
//! Options come from flags, optionally preceded by a flat `key=value` file
//! given with `--config`; flags given on the command line win.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdvi::output::{render_ensemble_csv, write_trajectory_csv};
use sdvi::vi::ViSolverConfig;
use sdvi::{
    bridge_constants, build_bridge, build_circuit, circuit_constants, estimate_strong_order,
    euler_path, make_grid, models, picard_path, run_ensemble, sample_brownian,
    verify_assumptions, BridgeParams, CircuitParams, Diagnostic, EulerConfig, PathSolution, PicardConfig,
    ProblemConstants, SdviError, SdviProblem,
};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Numerical(#[from] SdviError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Strict(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Numerical(SdviError::InvalidParameter(_)) => EXIT_USAGE,
            CliError::Numerical(_) | CliError::Strict(_) => EXIT_NUMERICAL,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemName {
    Circuit,
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Mode {
    /// Integrate individual paths and write one CSV per path.
    Simulate,
    /// Node-wise mean and variance over an ensemble of paths.
    Ensemble,
    /// Strong-order study by coupled grid refinement.
    Converge,
    /// Empirical check of the claimed problem constants.
    Verify,
}

#[derive(Debug, Parser)]
#[command(name = "sdvi", version, about = "Euler simulation of stochastic differential variational inequalities")]
pub struct Cli {
    #[command(subcommand)]
    pub mode: Mode,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    /// Flat `key=value` file; keys are long flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "bridge")]
    pub problem: ProblemName,

    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<f64>,
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub a: Option<f64>,
    #[arg(long, global = true)]
    pub b: Option<f64>,
    #[arg(long, global = true)]
    pub c: Option<f64>,
    #[arg(long, global = true)]
    pub horizon: Option<f64>,

    #[arg(long, global = true, default_value_t = 50)]
    pub steps: usize,
    /// Defaults: 1 (simulate), 100 (ensemble), 200 (converge).
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = 512)]
    pub fine_steps: usize,
    #[arg(long, global = true, default_value_t = 5)]
    pub levels: usize,
    /// Random samples drawn by `verify`.
    #[arg(long, global = true, default_value_t = 1000)]
    pub samples: usize,

    #[arg(long, global = true, env = "SDVI_OUTPUT_DIR", default_value = ".")]
    pub output_dir: PathBuf,
    #[arg(long, global = true)]
    pub vi_tol: Option<f64>,
    #[arg(long, global = true)]
    pub vi_max_iter: Option<usize>,
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Treat VI non-convergence as a hard error.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Also write per-path CSVs in ensemble mode.
    #[arg(long, global = true)]
    pub per_path: bool,
    /// Integrate by whole-path Picard iteration instead of forward stepping.
    #[arg(long, global = true)]
    pub picard: bool,
}

/// Turns a `key=value` file into flag arguments. Blank lines and lines
/// starting with `#` are skipped; `key=true` becomes a bare switch.
pub fn config_file_args(text: &str) -> Result<Vec<String>, CliError> {
    let mut args = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected key=value, got `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(CliError::Usage("config files cannot include other config files".into()));
        }
        match value {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => {
                args.push(format!("--{key}"));
                args.push(value.to_string());
            }
        }
    }
    Ok(args)
}

fn find_config_path(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

#[derive(Debug)]
pub enum ParseFailure {
    Clap(clap::Error),
    Config(CliError),
}

/// Parses `argv`, splicing config-file options in ahead of the command line
/// so that explicit flags override them.
pub fn parse_args(argv: Vec<String>) -> Result<Cli, ParseFailure> {
    let mut full = argv;
    let at = 1.min(full.len());
    if let Some(path) = find_config_path(&full[at..]) {
        let text = fs::read_to_string(&path)
            .map_err(io_err(format!("reading config {}", path.display())))
            .map_err(ParseFailure::Config)?;
        let extra = config_file_args(&text).map_err(ParseFailure::Config)?;
        full.splice(at..at, extra);
    }
    Cli::try_parse_from(full).map_err(ParseFailure::Clap)
}

struct Setup {
    problem: SdviProblem,
    vi: ViSolverConfig,
}

fn reject_foreign(names: &[(&str, Option<f64>)], problem: &str) -> Result<(), CliError> {
    for (name, value) in names {
        if value.is_some() {
            return Err(CliError::Usage(format!("--{name} does not apply to the {problem} problem")));
        }
    }
    Ok(())
}

fn setup(opts: &Options) -> Result<Setup, CliError> {
    let (problem, constants) = match opts.problem {
        ProblemName::Bridge => {
            reject_foreign(
                &[("epsilon", opts.epsilon), ("a", opts.a), ("b", opts.b), ("c", opts.c)],
                "bridge",
            )?;
            let d = BridgeParams::default();
            let params = BridgeParams {
                tau: opts.tau.unwrap_or(d.tau),
                k: opts.k.unwrap_or(d.k),
                theta: opts.theta.unwrap_or(d.theta),
                horizon: opts.horizon.unwrap_or(d.horizon),
            };
            (build_bridge(&params)?, Some(bridge_constants(&params)?))
        }
        ProblemName::Circuit => {
            reject_foreign(
                &[("tau", opts.tau), ("k", opts.k), ("theta", opts.theta)],
                "circuit",
            )?;
            let d = CircuitParams::default();
            let params = CircuitParams {
                epsilon: opts.epsilon.unwrap_or(d.epsilon),
                a: opts.a.unwrap_or(d.a),
                b: opts.b.unwrap_or(d.b),
                c: opts.c.unwrap_or(d.c),
                horizon: opts.horizon.unwrap_or(d.horizon),
            };
            let problem = build_circuit(&params)?;
            let constants = params.is_strongly_monotone().then(|| circuit_constants(&params)).transpose()?;
            (problem, constants)
        }
    };
    let mut vi = match constants {
        Some(c) => ViSolverConfig::from_constants(c),
        None => {
            let l = models::spectral_norm(&models::circuit::vi_matrix(0.0));
            ViSolverConfig::with_rho(1.0 / (l * l))
        }
    };
    if let Some(rho) = opts.rho {
        vi.rho = rho;
    }
    if let Some(tol) = opts.vi_tol {
        vi.tol = tol;
    }
    if let Some(max_iter) = opts.vi_max_iter {
        vi.max_iter = max_iter;
    }
    vi.validate()?;
    Ok(Setup { problem, vi })
}

fn constants_of(setup: &Setup) -> Result<ProblemConstants, CliError> {
    setup.vi.constants.ok_or_else(|| {
        CliError::Usage("no problem constants are available for this parameter set (epsilon = 0)".into())
    })
}

/// What a run produced, for the binary's summary line.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub warnings: usize,
}

fn write_file(path: PathBuf, contents: &str, summary: &mut RunSummary) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(io_err(path.display().to_string()))?;
    summary.files.push(path);
    Ok(())
}

fn path_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("path_{index:04}.csv"))
}

#[derive(Default)]
struct Warnings {
    text: String,
    count: usize,
    failed: bool,
}

impl Warnings {
    fn line(&mut self, line: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{line}");
        self.count += 1;
    }

    fn from_paths(solutions: &[PathSolution]) -> Self {
        let mut w = Warnings::default();
        for sol in solutions {
            for d in &sol.diagnostics {
                w.failed |= !matches!(d, Diagnostic::UncheckedStep { .. });
                w.line(format_args!("path {}: {d}", sol.path_index));
            }
        }
        w
    }
}

fn finish(dir: &Path, warnings: Warnings, strict: bool, summary: &mut RunSummary) -> Result<(), CliError> {
    write_file(dir.join("diagnostics.txt"), &warnings.text, summary)?;
    summary.warnings = warnings.count;
    if strict && warnings.failed {
        return Err(CliError::Strict(
            "VI iteration failed to converge (see diagnostics.txt)".into(),
        ));
    }
    Ok(())
}

fn default_paths(mode: Mode) -> usize {
    match mode {
        Mode::Simulate => 1,
        Mode::Ensemble => 100,
        Mode::Converge => 200,
        Mode::Verify => 0,
    }
}

pub fn run(mode: Mode, opts: &Options) -> Result<RunSummary, CliError> {
    let setup = setup(opts)?;
    let paths = opts.paths.unwrap_or_else(|| default_paths(mode));
    if opts.steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    if paths == 0 && mode != Mode::Verify {
        return Err(CliError::Usage("--paths must be at least 1".into()));
    }
    let dir = &opts.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir.display().to_string()))?;
    let mut summary = RunSummary::default();
    let euler = EulerConfig::new(setup.vi.clone());
    let grid = make_grid(setup.problem.horizon(), opts.steps)?;

    match mode {
        Mode::Simulate => {
            let mut solutions = Vec::with_capacity(paths);
            for index in 0..paths {
                let path = sample_brownian(&grid, setup.problem.noise_dim(), opts.seed, index as u64)?;
                let sol = if opts.picard {
                    picard_path(&setup.problem, &path, &PicardConfig::new(setup.vi.clone()))?
                } else {
                    euler_path(&setup.problem, &path, &euler)?
                };
                let file = path_file(dir, index);
                write_trajectory_csv(&sol, &file).map_err(io_err("writing trajectory"))?;
                summary.files.push(file);
                solutions.push(sol);
            }
            finish(dir, Warnings::from_paths(&solutions), opts.strict, &mut summary)?;
        }
        Mode::Ensemble => {
            let ens = run_ensemble(&setup.problem, &grid, paths, opts.seed, &euler, true)?;
            write_file(dir.join("ensemble_stats.csv"), &render_ensemble_csv(&ens), &mut summary)?;
            let solutions = ens.per_path.as_deref().unwrap_or_default();
            if opts.per_path {
                for sol in solutions {
                    let file = path_file(dir, sol.path_index as usize);
                    write_trajectory_csv(sol, &file).map_err(io_err("writing trajectory"))?;
                    summary.files.push(file);
                }
            }
            finish(dir, Warnings::from_paths(solutions), opts.strict, &mut summary)?;
        }
        Mode::Converge => {
            let report = estimate_strong_order(
                &setup.problem,
                opts.fine_steps,
                opts.levels,
                paths,
                opts.seed,
                &euler,
            )?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            write_file(dir.join("convergence_report.json"), &json, &mut summary)?;
            let mut warnings = Warnings::default();
            if setup.vi.constants.is_none() {
                warnings.line(Diagnostic::UncheckedStep { rho: setup.vi.rho });
            }
            if report.vi_nonconverged_solves > 0 {
                warnings.failed = true;
                warnings.line(format_args!(
                    "warning: VI iteration did not converge in {} path solves",
                    report.vi_nonconverged_solves
                ));
            }
            finish(dir, warnings, opts.strict, &mut summary)?;
        }
        Mode::Verify => {
            let claimed = constants_of(&setup)?;
            let report = verify_assumptions(&setup.problem, &claimed, opts.samples, opts.seed)?;
            write_file(dir.join("verification_report.txt"), &format!("{report}\n"), &mut summary)?;
            summary.warnings = report.violations.len();
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(args: &[&str]) -> Vec<String> {
        std::iter::once("sdvi").chain(args.iter().copied()).map(String::from).collect()
    }

    #[test]
    fn config_lines_become_flags() {
        let args = config_file_args("# c\n\nvi_tol = 1e-9\nstrict=true\nper-path=false\n").unwrap();
        assert_eq!(args, ["--vi-tol", "1e-9", "--strict"]);
        assert!(config_file_args("steps 5").is_err());
        assert!(config_file_args("config=x").is_err());
    }

    #[test]
    fn options_accepted_after_the_subcommand() {
        let cli = parse_args(argv(&["ensemble", "--problem", "circuit", "--epsilon", "0.1", "--paths", "3"])).unwrap();
        assert_eq!(cli.mode, Mode::Ensemble);
        assert_eq!(cli.options.problem, ProblemName::Circuit);
        assert_eq!(cli.options.paths, Some(3));
        assert_eq!(cli.options.epsilon, Some(0.1));
    }

    #[test]
    fn degenerate_circuit_runs_without_constants() {
        let cli = parse_args(argv(&["simulate", "--problem", "circuit", "--epsilon", "0"])).unwrap();
        let s = setup(&cli.options).unwrap();
        assert!(s.vi.constants.is_none());
        assert!(matches!(constants_of(&s), Err(CliError::Usage(_))));
    }

    #[test]
    fn rho_override_is_checked_against_constants() {
        let cli = parse_args(argv(&["simulate", "--rho", "0.15"])).unwrap();
        assert!(setup(&cli.options).is_ok());
        let cli = parse_args(argv(&["simulate", "--rho", "0.5"])).unwrap();
        assert_eq!(setup(&cli.options).err().unwrap().exit_code(), EXIT_USAGE);
    }
}
