//! Command-line front end for `ate-core`.
//!
//! [`run`] parses arguments, executes one command and returns the process exit
//! code. Output files are written only after the command has succeeded, and
//! any file written before a later failure is removed again.

pub mod report;
pub mod svg;

mod commands;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use thiserror::Error;

use ate_core::resampling::{InfluenceMode, Method};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }
}

impl From<ate_core::Error> for CliError {
    fn from(e: ate_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Fit,
    Ate,
    Ci,
    Band,
    Simulate,
    Coverage,
    TrueAte,
}

impl Command {
    fn is_stochastic(self) -> bool {
        !matches!(self, Command::Fit | Command::Ate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InfluenceArg {
    Gateaux,
    ClosedForm,
}

impl From<InfluenceArg> for InfluenceMode {
    fn from(a: InfluenceArg) -> Self {
        match a {
            InfluenceArg::Gateaux => InfluenceMode::GateauxNumeric,
            InfluenceArg::ClosedForm => InfluenceMode::ClosedForm,
        }
    }
}

/// Parsed command line.
#[derive(Debug, Clone, Parser)]
#[command(name = "ate", version, about = "Average treatment effects on cumulative incidence with competing risks")]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,
    /// Input dataset (CSV).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file, or output directory for `coverage`. Defaults to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Comma-separated methods: ebs, if, wbs-normal, wbs-poisson, wbs-weird or all.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    /// Miscoverage level (default 0.05, or the config's for `coverage`).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated report times.
    #[arg(long, value_delimiter = ',')]
    pub times: Vec<f64>,
    /// Band interval `t1,t2`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub band: Vec<f64>,
    /// Resample counts: one number for every method, or `ebs=500,if=2000,wbs=2000`.
    #[arg(long = "B", value_delimiter = ',')]
    pub b: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for resampling and simulation (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Break tied event times with seeded jitter instead of refusing the data.
    #[arg(long)]
    pub jitter: bool,
    /// Also render SVG charts (`coverage`).
    #[arg(long)]
    pub svg: bool,
    /// JSON config: study settings and/or a column `schema`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sample size (`simulate`) or comma-separated sample sizes (`coverage`).
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Scenario preset for `simulate`, `true-ate` and `coverage`.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Treatment effect on the cause-1 hazard.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub influence: Option<InfluenceArg>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Directory caching true-ATE curves.
    #[arg(long)]
    pub truth_cache: Option<PathBuf>,
    /// Large-sample size of the true-ATE computation.
    #[arg(long)]
    pub truth_n: Option<usize>,
    /// Repetitions of the true-ATE computation.
    #[arg(long)]
    pub truth_reps: Option<usize>,
    /// Report zero timings so coverage reports are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(a) = self.alpha.filter(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(CliError::Usage(format!("--alpha {a} outside (0, 1)")));
        }
        if (self.command.is_stochastic() || self.jitter) && self.seed.is_none() {
            return Err(CliError::Usage(format!(
                "`{}` needs --seed",
                if self.jitter { "--jitter" } else { self.command_name() }
            )));
        }
        if matches!(self.command, Command::Fit | Command::Ate | Command::Ci | Command::Band) && self.input.is_none() {
            return Err(CliError::Usage(format!("`{}` needs --input", self.command_name())));
        }
        if self.command == Command::Coverage && self.output.is_none() {
            return Err(CliError::Usage("`coverage` needs --output <dir>".into()));
        }
        if !self.band.is_empty() && self.band.len() != 2 {
            return Err(CliError::Usage("--band takes exactly two times, t1,t2".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        Ok(())
    }

    fn command_name(&self) -> &'static str {
        match self.command {
            Command::Fit => "fit",
            Command::Ate => "ate",
            Command::Ci => "ci",
            Command::Band => "band",
            Command::Simulate => "simulate",
            Command::Coverage => "coverage",
            Command::TrueAte => "true-ate",
        }
    }

    /// Requested methods; all of them when none are given.
    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        if self.method.is_empty() || self.method.iter().any(|m| m.eq_ignore_ascii_case("all")) {
            return Ok(Method::ALL.to_vec());
        }
        let mut out: Vec<Method> = Vec::new();
        for m in &self.method {
            let parsed: Method = m.parse().map_err(|e: ate_core::Error| CliError::Usage(e.to_string()))?;
            if !out.contains(&parsed) {
                out.push(parsed);
            }
        }
        Ok(out)
    }

    /// Resample count for `method`, or `default` when not given.
    pub fn resamples(&self, method: Method, default: usize) -> Result<usize, CliError> {
        let key = match method {
            Method::Efron => "ebs",
            Method::Influence => "if",
            Method::Wild(_) => "wbs",
        };
        let mut found = None;
        for item in &self.b {
            let (k, v) = match item.split_once('=') {
                Some((k, v)) => (Some(k.trim()), v.trim()),
                None => (None, item.trim()),
            };
            let value: usize = v
                .parse()
                .map_err(|_| CliError::Usage(format!("--B: `{item}` is not a count")))?;
            match k {
                None => found = Some(value),
                Some(k) if ["ebs", "if", "wbs"].contains(&k) => {
                    if k == key {
                        found = Some(value);
                    }
                }
                Some(k) => return Err(CliError::Usage(format!("--B: unknown method key `{k}`"))),
            }
        }
        Ok(found.unwrap_or(default))
    }
}

/// Seed for one method's resampling, derived from the master seed.
pub fn method_seed(seed: u64, method: Method) -> u64 {
    let tag = match method {
        Method::Efron => "ebs",
        Method::Influence => "if",
        Method::Wild(s) => s.tag(),
    };
    ate_core::rng::child_seed(seed, tag, &[])
}

/// Files produced by a command, written together once it has succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    stdout: Vec<u8>,
}

impl Outputs {
    fn file(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    /// To `path` when given, otherwise to stdout.
    fn primary(&mut self, path: Option<&Path>, bytes: Vec<u8>) {
        match path {
            Some(p) => self.file(p.to_path_buf(), bytes),
            None => self.stdout.extend(bytes),
        }
    }

    fn commit(self, stdout: &mut dyn Write) -> Result<(), CliError> {
        let mut written: Vec<PathBuf> = Vec::new();
        let mut made_dirs: Vec<PathBuf> = Vec::new();
        let result = (|| {
            for (path, bytes) in &self.files {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    if !dir.exists() {
                        let mut missing = Vec::new();
                        let mut cur = Some(dir);
                        while let Some(d) = cur.filter(|d| !d.as_os_str().is_empty() && !d.exists()) {
                            missing.push(d.to_path_buf());
                            cur = d.parent();
                        }
                        std::fs::create_dir_all(dir)?;
                        made_dirs.extend(missing);
                    }
                }
                written.push(path.clone());
                std::fs::write(path, bytes)?;
            }
            stdout.write_all(&self.stdout)?;
            stdout.flush()
        })();
        result.map_err(|e| {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            for d in &made_dirs {
                let _ = std::fs::remove_dir(d);
            }
            CliError::Data(format!("writing outputs: {e}"))
        })
    }
}

/// Machine-readable error record, one JSON object on one line.
pub fn error_record(e: &CliError) -> String {
    serde_json::json!({
        "error": {
            "kind": e.kind(),
            "code": e.exit_code(),
            "message": e.to_string(),
        }
    })
    .to_string()
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            let _ = writeln!(stderr, "{}", error_record(&err));
            return err.exit_code();
        }
    };
    match execute(&cfg).and_then(|out| out.commit(stdout)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_record(&e));
            e.exit_code()
        }
    }
}

/// Executes `cfg`, returning the outputs without writing them.
pub fn execute(cfg: &RunConfig) -> Result<Outputs, CliError> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cfg.workers.unwrap_or(0))))?;
    pool.install(|| commands::dispatch(cfg))
}
