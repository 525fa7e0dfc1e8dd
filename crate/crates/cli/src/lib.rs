//! Command-line driver: `run`, `sweep`, `history` and `list-models`.
//!
//! Settings come from flags and an optional flat `key = value` file; flags win.
//! Every error is reported as a single `error: ...` line with exit code 2 for
//! configuration problems and 3 when too many realizations fail.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sdae_lyap::ensemble::{
    method_label, parse_method_label, run_ensemble_flagged, run_realizations, sorted_sample, sweep, EnsembleReport,
    Workers,
};
use sdae_lyap::models::{build_model, model_descriptions, parameter_names};
use sdae_lyap::{Error as CoreError, LeRunConfig, Method, SchemeKind};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FAILURES: i32 = 3;

pub const RUN_HEADER: [&str; 13] = [
    "T",
    "h",
    "method",
    "n",
    "seed",
    "exponent_index",
    "mean",
    "std",
    "var",
    "ci_low",
    "ci_high",
    "rel_error_pct",
    "wall_seconds",
];

pub const HISTORY_HEADER: [&str; 4] = ["t", "realization", "exponent_index", "lambda"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Failures(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Failures(_) => EXIT_FAILURES,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::PartialFailure { .. } => CliError::Failures(e.to_string()),
            CoreError::NonFinite { .. } | CoreError::RankDeficient { .. } | CoreError::NoConvergence { .. } => {
                CliError::Failures(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sdae-le", version, about = "Lyapunov exponents of stochastic DAEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ensemble statistics of the finite-time exponents at the horizon.
    Run(RunArgs),
    /// One ensemble per value of a parameter.
    Sweep(SweepArgs),
    /// Per-realization exponent series in long format.
    History(RunArgs),
    /// Registered models and their parameters.
    ListModels,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub model: Option<String>,
    /// d-em, d-mil, c-em or c-mil
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model parameter override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record the exponents every this many steps.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Steps between re-orthonormalizations (discrete method).
    #[arg(long)]
    pub reorth: Option<usize>,
    /// Flat `key = value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fill the wall_seconds column (makes output machine-dependent).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// rho, h, T or any model parameter.
    #[arg(long)]
    pub param: String,
    #[arg(long, allow_hyphen_values = true)]
    pub from: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub to: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Explicit comma-separated values instead of from/to/step.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub values: Vec<f64>,
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub model: String,
    pub method: Method,
    pub scheme: SchemeKind,
    pub h: f64,
    pub horizon: f64,
    pub n: usize,
    pub seed: u64,
    pub overrides: Vec<(String, String)>,
    pub out: Option<PathBuf>,
    pub stride: Option<usize>,
    pub reorth_every: usize,
    pub workers: Option<usize>,
    pub timing: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            model: "example".into(),
            method: Method::ContinuousQr,
            scheme: SchemeKind::EulerMaruyama,
            h: 1e-3,
            horizon: 1000.0,
            n: 10,
            seed: 0,
            overrides: Vec::new(),
            out: None,
            stride: None,
            reorth_every: 1,
            workers: None,
            timing: false,
        }
    }
}

impl RunSpec {
    pub fn method_label(&self) -> &'static str {
        method_label(self.method, self.scheme)
    }

    /// Builds a spec from flags layered over an optional settings file.
    pub fn from_args(args: &RunArgs) -> CliResult<Self> {
        let mut spec = RunSpec::default();
        if let Some(path) = &args.config {
            spec.apply_file(path)?;
        }
        if let Some(m) = &args.model {
            spec.model = m.clone();
        }
        if let Some(m) = &args.method {
            spec.set_method(m)?;
        }
        if let Some(h) = args.h {
            spec.h = h;
        }
        if let Some(t) = args.horizon {
            spec.horizon = t;
        }
        if let Some(n) = args.n {
            spec.n = n;
        }
        if let Some(s) = args.seed {
            spec.seed = s;
        }
        for kv in &args.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set: expected KEY=VALUE, got `{kv}`")))?;
            spec.push_override(k.trim(), v.trim());
        }
        if args.workers.is_some() {
            spec.workers = args.workers;
        }
        if args.out.is_some() {
            spec.out = args.out.clone();
        }
        if args.stride.is_some() {
            spec.stride = args.stride;
        }
        if let Some(r) = args.reorth {
            spec.reorth_every = r;
        }
        spec.timing |= args.timing;
        spec.validate()?;
        Ok(spec)
    }

    fn set_method(&mut self, label: &str) -> CliResult<()> {
        let (m, k) = parse_method_label(label)
            .ok_or_else(|| CliError::Config(format!("method: `{label}` is not one of d-em, d-mil, c-em, c-mil")))?;
        self.method = m;
        self.scheme = k;
        Ok(())
    }

    fn push_override(&mut self, key: &str, value: &str) {
        self.overrides.retain(|(k, _)| !k.eq_ignore_ascii_case(key));
        self.overrides.push((key.to_string(), value.to_string()));
    }

    /// Settings-file keys: `model`, `method`, `h`, `T`, `n`, `seed`, `workers`,
    /// `out`, `stride`, `reorth`; any other key is a model parameter.
    fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "config {}:{}: expected `key = value`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |field: &str| CliError::Config(format!("{field}: `{v}` in {} is not valid", path.display()));
            match k {
                "model" => self.model = v.to_string(),
                "method" => self.set_method(v)?,
                "h" => self.h = v.parse().map_err(|_| bad("h"))?,
                "T" => self.horizon = v.parse().map_err(|_| bad("T"))?,
                "n" => self.n = v.parse().map_err(|_| bad("n"))?,
                "seed" => self.seed = v.parse().map_err(|_| bad("seed"))?,
                "workers" => self.workers = Some(v.parse().map_err(|_| bad("workers"))?),
                "out" => self.out = Some(PathBuf::from(v)),
                "stride" => self.stride = Some(v.parse().map_err(|_| bad("stride"))?),
                "reorth" => self.reorth_every = v.parse().map_err(|_| bad("reorth"))?,
                _ => self.push_override(k, v),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let names = parameter_names(&self.model)?;
        for (k, _) in &self.overrides {
            if !names.iter().any(|n| n.eq_ignore_ascii_case(k)) {
                return Err(CoreError::UnknownParameter {
                    model: self.model.clone(),
                    param: k.clone(),
                }
                .into());
            }
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(CliError::Config(format!(
                "h: step size must be positive, got {}",
                self.h
            )));
        }
        if !(self.horizon >= self.h && self.horizon.is_finite()) {
            return Err(CliError::Config(format!(
                "T: horizon must be at least one step, got {}",
                self.horizon
            )));
        }
        if self.n == 0 {
            return Err(CliError::Config("n: need at least one realization".into()));
        }
        if self.stride == Some(0) {
            return Err(CliError::Config("stride: must be at least 1".into()));
        }
        if self.reorth_every == 0 {
            return Err(CliError::Config("reorth: must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers: must be at least 1".into()));
        }
        Ok(())
    }

    fn config(&self, x0: Vec<f64>) -> LeRunConfig {
        let mut c = LeRunConfig::new(self.method, self.scheme, self.h, self.horizon, x0)
            .with_seed(self.seed)
            .with_reorth_every(self.reorth_every);
        c.history_stride = self.stride;
        c
    }
}

/// Number formatting used in every CSV: 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_real(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

fn report_rows(spec: &RunSpec, r: &EnsembleReport) -> Vec<Vec<String>> {
    (0..r.mean.len())
        .map(|i| {
            let ci = r.ci95.as_ref().map(|c| c[i]);
            vec![
                r.horizon.to_string(),
                r.h.to_string(),
                r.method.to_string(),
                r.n.to_string(),
                r.base_seed.to_string(),
                i.to_string(),
                fmt_real(r.mean[i]),
                opt_real(r.std.as_ref().map(|s| s[i])),
                opt_real(r.var.as_ref().map(|s| s[i])),
                opt_real(ci.map(|c| c.0)),
                opt_real(ci.map(|c| c.1)),
                opt_real(r.rel_error_pct.as_ref().map(|e| e[i])),
                if spec.timing {
                    fmt_real(r.wall_seconds)
                } else {
                    String::new()
                },
            ]
        })
        .collect()
}

fn write_csv(spec: &RunSpec, stdout: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    match &spec.out {
        Some(p) => fs::write(p, &buf).map_err(|e| CliError::Io(format!("out {}: {e}", p.display()))),
        None => stdout.write_all(&buf).map_err(CliError::from),
    }
}

fn failures_error(reports: &[&EnsembleReport]) -> Option<CliError> {
    let bad: Vec<_> = reports.iter().filter(|r| r.excessive_failures()).collect();
    let first = bad.first()?;
    Some(CliError::Failures(format!(
        "{} of {} realizations failed (indices {:?}){}",
        first.failed.len(),
        first.requested(),
        first.failed,
        if bad.len() > 1 {
            format!(" and {} more ensembles over threshold", bad.len() - 1)
        } else {
            String::new()
        }
    )))
}

pub fn cmd_run(spec: &RunSpec, stdout: &mut dyn Write) -> CliResult<()> {
    let model = build_model(&spec.model, &spec.overrides)?;
    let cfg = spec.config(model.x0.clone());
    let oracle = model.oracle()?;
    let report = run_ensemble_flagged(
        &*model.system,
        &cfg,
        spec.n,
        spec.seed,
        oracle.as_deref(),
        Workers(spec.workers),
    )?;
    write_csv(spec, stdout, &RUN_HEADER, &report_rows(spec, &report))?;
    failures_error(&[&report]).map_or(Ok(()), Err)
}

/// Inclusive grid `from, from + step, …, to`.
pub fn sweep_values(from: f64, to: f64, step: f64) -> CliResult<Vec<f64>> {
    if !(step > 0.0) || !from.is_finite() || !to.is_finite() || to < from {
        return Err(CliError::Config(format!(
            "step: need step > 0 and from <= to, got from={from} to={to} step={step}"
        )));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| from + k as f64 * step).collect())
}

pub fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let spec = RunSpec::from_args(&args.run)?;
    let values = if !args.values.is_empty() {
        args.values.clone()
    } else {
        match (args.from, args.to, args.step) {
            (Some(f), Some(t), Some(s)) => sweep_values(f, t, s)?,
            _ => {
                return Err(CliError::Config(
                    "param: give --values or all of --from, --to, --step".into(),
                ))
            }
        }
    };
    if !matches!(args.param.as_str(), "h" | "T") {
        let names = parameter_names(&spec.model)?;
        if !names.iter().any(|n| n.eq_ignore_ascii_case(&args.param)) {
            return Err(CoreError::UnknownParameter {
                model: spec.model.clone(),
                param: args.param.clone(),
            }
            .into());
        }
    }
    let model = build_model(&spec.model, &spec.overrides)?;
    let cfg = spec.config(model.x0.clone());
    let reports = sweep(
        &spec.model,
        &spec.overrides,
        &cfg,
        &args.param,
        &values,
        spec.n,
        spec.seed,
        Workers(spec.workers),
    )?;
    let mut header = vec!["param", "value"];
    header.extend(RUN_HEADER);
    let mut rows = Vec::new();
    for (v, r) in &reports {
        for row in report_rows(&spec, r) {
            let mut full = vec![args.param.clone(), v.to_string()];
            full.extend(row);
            rows.push(full);
        }
    }
    write_csv(&spec, stdout, &header, &rows)?;
    let refs: Vec<&EnsembleReport> = reports.iter().map(|(_, r)| r).collect();
    failures_error(&refs).map_or(Ok(()), Err)
}

pub fn cmd_history(spec: &RunSpec, stdout: &mut dyn Write) -> CliResult<()> {
    if spec.stride.is_none() {
        return Err(CliError::Config("stride: history needs --stride".into()));
    }
    let model = build_model(&spec.model, &spec.overrides)?;
    let cfg = spec.config(model.x0.clone());
    let runs = run_realizations(&*model.system, &cfg, spec.n, spec.seed, Workers(spec.workers))?;
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for r in &runs {
        match &r.outcome {
            Ok(acc) => {
                for s in &acc.history {
                    for (i, l) in sorted_sample(s).into_iter().enumerate() {
                        rows.push(vec![s.t.to_string(), r.index.to_string(), i.to_string(), fmt_real(l)]);
                    }
                }
            }
            Err(_) => failed.push(r.index),
        }
    }
    write_csv(spec, stdout, &HISTORY_HEADER, &rows)?;
    if failed.len() as f64 > sdae_lyap::ensemble::FAILURE_THRESHOLD * spec.n as f64 {
        return Err(CoreError::PartialFailure {
            failed: failed.len(),
            total: spec.n,
            indices: failed,
        }
        .into());
    }
    Ok(())
}

pub fn cmd_list_models(stdout: &mut dyn Write) -> CliResult<()> {
    let mut by_name: BTreeMap<&str, &str> = BTreeMap::new();
    for (n, d) in model_descriptions() {
        by_name.insert(n, d);
    }
    for (name, desc) in by_name {
        let params = parameter_names(name)?.join(",");
        writeln!(stdout, "{name}\t{desc}\tparams: {params}")?;
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command; returns
/// the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            let _ = writeln!(stderr, "error: {first}");
            return EXIT_CONFIG;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => RunSpec::from_args(a).and_then(|s| cmd_run(&s, stdout)),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::History(a) => RunSpec::from_args(a).and_then(|s| cmd_history(&s, stdout)),
        Command::ListModels => cmd_list_models(stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr, "error: {line}");
            e.exit_code()
        }
    }
}
