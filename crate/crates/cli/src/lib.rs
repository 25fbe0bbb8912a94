//! Command-line driver: parses a run configuration, evaluates it with the
//! `flcspec` library and writes a versioned JSON result file plus, for the
//! plane-classifying commands, a binary graymap.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use flcspec::lower_norm::{bounds_at_scale, rho_tilde, RhoTilde, ScaleBounds};
use flcspec::models::{builtin, build_model, ModelDef, BUILTIN_NAMES};
use flcspec::operator::OperatorSpec;
use flcspec::pseudospectrum::{
    approx_pseudospectrum, classify_fixed_scale, pseudospectrum_short_range, Class, PseudoOptions, PseudospectrumApprox,
    SruClassification,
};
use flcspec::spectrum::{spectrum_with_error, SpectrumApprox};
use flcspec::{exec, Execution};

pub const FORMAT: &str = "flcspec-result";
pub const FORMAT_VERSION: u32 = 1;

/// Default grid spacing parameter for `classify` when `--tau` is absent.
const CLASSIFY_TAU: f64 = 0.05;
/// Default bisection width for `gap` when `--tau` is absent.
const GAP_WIDTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Spectrum of a normal operator within 2^-k (or delta).
    Spectrum,
    /// Epsilon-pseudospectrum within delta.
    Pseudospectrum,
    /// rho~(lambda, tau) with |rho - rho~| <= tau.
    Rho,
    /// Two-sided bounds on rho at a fixed scale L.
    Gap,
    /// S/U/R classification of the plane at a fixed scale L.
    Classify,
}

impl Command {
    fn needs_epsilon(self) -> bool {
        matches!(self, Command::Pseudospectrum | Command::Classify)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Spectrum => "spectrum",
            Command::Pseudospectrum => "pseudospectrum",
            Command::Rho => "rho",
            Command::Gap => "gap",
            Command::Classify => "classify",
        };
        f.write_str(s)
    }
}

/// `re,im` or `re`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambda(pub Complex64);

impl FromStr for Lambda {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| format!("cannot read {t:?} as a number"));
        let z = match parts.as_slice() {
            [re] => Complex64::new(num(re)?, 0.0),
            [re, im] => Complex64::new(num(re)?, num(im)?),
            _ => return Err(format!("expected re,im, got {s:?}")),
        };
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(format!("lambda must be finite, got {s:?}"));
        }
        Ok(Lambda(z))
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "flcspec", version, about = "Certified spectra and pseudospectra of flc operators")]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,
    /// Model file (TOML or JSON) or a builtin name.
    #[arg(long)]
    pub model: String,
    /// Target accuracy 2^-k.
    #[arg(long)]
    pub k: Option<u32>,
    /// Target Hausdorff accuracy.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Pseudospectral level
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Spectral parameter `re,im`.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<Lambda>,
    /// Accuracy for rho, bisection width for gap, grid scale for classify
    #[arg(long)]
    pub tau: Option<f64>,
    /// Section scale.
    #[arg(long = "L")]
    pub l: Option<f64>,
    /// Result file; defaults to `<command>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Graymap for pseudospectrum and classify.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Worker threads for grid sweeps
    #[arg(long)]
    pub workers: Option<usize>,
    /// Iteration cap for pseudospectrum
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Sequential evaluation.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{field}: {message}")]
    Input { field: &'static str, message: String },
    #[error(transparent)]
    Library(#[from] flcspec::Error),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    fn input(field: &'static str, message: impl Into<String>) -> Self {
        CliError::Input { field, message: message.into() }
    }

    /// 0 success, 1 input error, 2 certification abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Library(e) if e.is_certification_abort() => 2,
            _ => 1,
        }
    }
}

/// Parameters as they were used, recorded in the result header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub k: Option<u32>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub lambda: Option<Complex64>,
    pub tau: Option<f64>,
    pub l: Option<f64>,
    pub max_iter: Option<usize>,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum Outcome {
    Spectrum(SpectrumApprox),
    Pseudospectrum(PseudospectrumApprox),
    Rho(RhoTilde),
    Gap(ScaleBounds),
    Classify(SruClassification),
}

/// The result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub format: String,
    pub version: u32,
    pub command: Command,
    pub model: ModelDef,
    pub parameters: Parameters,
    pub result: Outcome,
}

impl ResultFile {
    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Library(e.into()))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let r: ResultFile = serde_json::from_str(text).map_err(|e| CliError::input("result", e.to_string()))?;
        if r.format != FORMAT || r.version != FORMAT_VERSION {
            return Err(CliError::input("result", format!("unsupported format {} v{}", r.format, r.version)));
        }
        Ok(r)
    }

    /// The classification to render, if the command produced one.
    pub fn classification(&self) -> Option<&SruClassification> {
        match &self.result {
            Outcome::Pseudospectrum(p) => Some(&p.classification),
            Outcome::Classify(c) => Some(c),
            _ => None,
        }
    }
}

/// Reads a model from a TOML/JSON file, or falls back to a builtin name.
pub fn load_model(spec: &str) -> Result<ModelDef, CliError> {
    let path = Path::new(spec);
    let def: ModelDef = if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| CliError::input("model", format!("{spec}: {e}")))?;
        let is_json = path.extension().is_some_and(|x| x == "json");
        if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::input("model", format!("{spec}: {e}")))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::input("model", format!("{spec}: {e}")))?
        }
    } else if let Some(d) = builtin(spec) {
        d
    } else {
        return Err(CliError::input(
            "model",
            format!("{spec:?} is neither a file nor a builtin ({})", BUILTIN_NAMES.join(", ")),
        ));
    };
    def.validate().map_err(|e| CliError::input("model", e.to_string()))?;
    Ok(def)
}

fn positive(field: &'static str, v: Option<f64>) -> Result<Option<f64>, CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::input(field, format!("must be positive, got {x}"))),
        _ => Ok(v),
    }
}

fn required<T>(field: &'static str, cmd: Command, v: Option<T>) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::input(field, format!("required by {cmd}")))
}

impl RunConfig {
    /// Field-level checks that do not need the model.
    pub fn validate(&self) -> Result<(), CliError> {
        positive("delta", self.delta)?;
        positive("epsilon", self.epsilon)?;
        positive("tau", self.tau)?;
        positive("L", self.l)?;
        if self.workers == Some(0) {
            return Err(CliError::input("workers", "must be at least 1"));
        }
        if self.max_iter == Some(0) {
            return Err(CliError::input("max-iter", "must be at least 1"));
        }
        let cmd = self.command;
        match (cmd.needs_epsilon(), self.epsilon.is_some()) {
            (true, false) => return Err(CliError::input("epsilon", format!("required by {cmd}"))),
            (false, true) => return Err(CliError::input("epsilon", format!("only pseudospectrum and classify take it, not {cmd}"))),
            _ => {}
        }
        match cmd {
            Command::Spectrum | Command::Pseudospectrum => {
                if self.k.is_some() && self.delta.is_some() {
                    return Err(CliError::input("delta", "give either --k or --delta, not both"));
                }
                if self.k.is_none() && self.delta.is_none() {
                    return Err(CliError::input("k", format!("{cmd} needs --k or --delta")));
                }
            }
            Command::Rho => {
                required("lambda", cmd, self.lambda)?;
                required("tau", cmd, self.tau)?;
            }
            Command::Gap => {
                required("lambda", cmd, self.lambda)?;
                required("L", cmd, self.l)?;
            }
            Command::Classify => {
                required("L", cmd, self.l)?;
            }
        }
        Ok(())
    }

    fn execution(&self) -> Execution {
        if self.deterministic {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }

    fn parameters(&self) -> Parameters {
        Parameters {
            k: self.k,
            delta: self.delta,
            epsilon: self.epsilon,
            lambda: self.lambda.map(|l| l.0),
            tau: self.tau,
            l: self.l,
            max_iter: self.max_iter,
            execution: self.execution(),
        }
    }
}

/// Smallest `k` with `2^-k <= delta`.
fn k_for_delta(delta: f64) -> u32 {
    (-delta.log2()).ceil().max(0.0) as u32
}

fn evaluate(cfg: &RunConfig, op: &OperatorSpec) -> Result<Outcome, CliError> {
    let exec = cfg.execution();
    let cmd = cfg.command;
    Ok(match cmd {
        Command::Spectrum => {
            let k = cfg.k.unwrap_or_else(|| k_for_delta(cfg.delta.unwrap()));
            Outcome::Spectrum(spectrum_with_error(op, k, exec)?)
        }
        Command::Pseudospectrum => {
            let eps = cfg.epsilon.unwrap();
            let delta = cfg.delta.unwrap_or_else(|| 0.5f64.powi(cfg.k.unwrap() as i32));
            let mut opts = PseudoOptions { exec, ..PseudoOptions::default() };
            if let Some(m) = cfg.max_iter {
                opts.max_iter = m;
            }
            let r = if op.finite_range().is_ok() {
                approx_pseudospectrum(op, eps, delta, opts)?
            } else {
                pseudospectrum_short_range(op, eps, delta, opts)?
            };
            Outcome::Pseudospectrum(r)
        }
        Command::Rho => Outcome::Rho(rho_tilde(op, cfg.lambda.unwrap().0, cfg.tau.unwrap())?),
        Command::Gap => {
            let width = cfg.tau.unwrap_or(GAP_WIDTH);
            Outcome::Gap(bounds_at_scale(op, cfg.lambda.unwrap().0, cfg.l.unwrap(), width)?)
        }
        Command::Classify => {
            let tau = cfg.tau.unwrap_or(CLASSIFY_TAU);
            let spacing = tau * 2f64.sqrt();
            let width = (tau / 10.0).min(1e-3);
            Outcome::Classify(classify_fixed_scale(op, cfg.epsilon.unwrap(), cfg.l.unwrap(), spacing, width, exec)?)
        }
    })
}

/// Binary graymap with one pixel per grid point: S black, U gray, R white.
/// Rows run from the largest imaginary part down; absent cells are gray.
pub fn render_classification(cls: &SruClassification) -> Result<Vec<u8>, CliError> {
    let (imin, imax, jmin, jmax) =
        cls.grid.index_bounds().ok_or_else(|| CliError::input("image", "classification grid is empty"))?;
    let w = (imax - imin + 1) as usize;
    let h = (jmax - jmin + 1) as usize;
    let mut px = vec![128u8; w * h];
    for (k, &(i, j)) in cls.grid.indices.iter().enumerate() {
        let shade = match cls.classes[k] {
            Class::S => 0,
            Class::U => 128,
            Class::R => 255,
        };
        px[(jmax - j) as usize * w + (i - imin) as usize] = shade;
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io { path: path.to_path_buf(), message: e.to_string() })
}

/// Runs one command and writes its outputs. Returns the result file.
pub fn run(cfg: &RunConfig) -> Result<ResultFile, CliError> {
    cfg.validate()?;
    let def = load_model(&cfg.model)?;
    let op = build_model(&def).map_err(|e| CliError::input("model", e.to_string()))?;
    let workers = if cfg.deterministic { Some(1) } else { cfg.workers };
    let result = exec::with_workers(workers, || evaluate(cfg, &op))??;
    let file = ResultFile {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        command: cfg.command,
        model: def,
        parameters: cfg.parameters(),
        result,
    };
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.json", cfg.command)));
    write(&out, file.to_json()?.as_bytes())?;
    if let Some(img) = &cfg.image {
        match file.classification() {
            Some(c) => write(img, &render_classification(c)?)?,
            None => return Err(CliError::input("image", format!("{} produces no classification", cfg.command))),
        }
    }
    Ok(file)
}

/// Parses arguments, runs, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cfg) {
        Ok(f) => {
            eprintln!("{}", summary(&f));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn summary(f: &ResultFile) -> String {
    match &f.result {
        Outcome::Spectrum(s) => format!("{} points within {} of the spectrum", s.points.len(), s.hausdorff_radius),
        Outcome::Pseudospectrum(p) => format!("{} points within {} of the pseudospectrum", p.points.len(), p.hausdorff_radius),
        Outcome::Rho(r) => format!("rho~ = {} (tau {}, L {})", r.value, r.tau, r.l_used),
        Outcome::Gap(b) => format!("{} <= rho <= {} at L = {}", b.gap, b.eps.value.hi, b.eps.l),
        Outcome::Classify(c) => {
            format!("S {} / U {} / R {}", c.count(Class::S), c.count(Class::U), c.count(Class::R))
        }
    }
}
