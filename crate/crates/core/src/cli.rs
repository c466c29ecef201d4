//! Batch driver: catalog listing, manifest runs with JSON reports and CSV plot data, and
//! verification suites.
//!
//! Exit codes: 0 when everything passes, 1 when a numerical check fails, 2 on usage or
//! configuration errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::{all_models, build_model, ApproximationModel, ModelSpec, MODEL_IDS};
use crate::engine::{estimate_grid_batch, extrapolate, FunctionalSpec};
use crate::grammar::parse_observable;
use crate::types::{BiasEstimate, BiasKind, Error, FitModel, Result};
use crate::verify::{
    check_asymptotic_symmetry, check_deterministic, check_first_order_singular, check_h_consistency,
    check_locality, check_square_field, CheckSettings, VerificationReport,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable read when no seed is given.
pub const SEED_ENV: &str = "BIASLAB_SEED";
const DEFAULT_SEED: u64 = 1;
const DEFAULT_VERIFY_SAMPLES: u64 = 20_000;

#[derive(Debug, Parser)]
#[command(name = "biaslab", version, about = "Monte Carlo estimation of limit bias operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List catalog models with parameters, flags and closed forms.
    Catalog {
        /// Keep only models whose expected locality matches.
        #[arg(long)]
        local: Option<bool>,
        /// Keep only asymptotically symmetric (or non-symmetric) models.
        #[arg(long)]
        symmetric: Option<bool>,
        /// Keep only models whose approximation is (or is not) deterministic given the limit.
        #[arg(long)]
        deterministic: Option<bool>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run the experiments of a manifest file.
    Run {
        #[arg(short, long)]
        manifest: PathBuf,
        /// Output directory, overriding the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run verification suites on one model or on all of them.
    Verify {
        #[arg(long)]
        model: String,
        #[arg(long)]
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_VERIFY_SAMPLES)]
        samples: u64,
        /// Directory for the JSON summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Catalog { local, symmetric, deterministic, json } => {
            let filter = CatalogFilter { local, symmetric, deterministic };
            let out = if json {
                serde_json::to_string_pretty(&catalog_entries(&filter)).map_err(Error::from)
            } else {
                Ok(catalog_table(&filter))
            };
            out.map(|s| {
                emit(&format!("{s}\n"));
                true
            })
        }
        Command::Run { manifest, out } => cmd_run(&manifest, out.as_deref()).map(|outcome| {
            let mut text = String::new();
            for r in &outcome.reports {
                let _ = writeln!(text, "{}", r.summary_line());
            }
            for path in &outcome.files {
                let _ = writeln!(text, "wrote {}", path.display());
            }
            emit(&text);
            outcome.pass
        }),
        Command::Verify { model, suite, seed, samples, out } => {
            resolve_seed(seed).and_then(|seed| cmd_verify(&model, &suite, seed, samples, out.as_deref())).map(|s| {
                emit(&s.table());
                s.pass
            })
        }
    };
    match outcome {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            eprintln!("biaslab: {e}");
            exit_code(&e)
        }
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

/// Exit code for an error: numerical failures are check failures, everything else is usage.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => EXIT_FAIL,
        _ => EXIT_USAGE,
    }
}

/// Explicit seed, else `BIASLAB_SEED`, else a fixed default.
pub fn resolve_seed(explicit: Option<u64>) -> Result<u64> {
    if let Some(s) = explicit {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

// ---------------------------------------------------------------- catalog

#[derive(Debug, Clone, Copy, Default)]
pub struct CatalogFilter {
    pub local: Option<bool>,
    pub symmetric: Option<bool>,
    pub deterministic: Option<bool>,
}

impl CatalogFilter {
    fn keeps(&self, m: &dyn ApproximationModel) -> bool {
        let f = m.flags();
        self.local.is_none_or(|v| v == f.expected_local)
            && self.symmetric.is_none_or(|v| v == f.asymptotically_symmetric)
            && self.deterministic.is_none_or(|v| v == f.deterministic_u)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub id: String,
    pub label: String,
    pub state_space: String,
    pub rate: Value,
    pub local: bool,
    pub asymptotically_symmetric: bool,
    pub deterministic: bool,
    pub parameters: BTreeMap<String, Value>,
    pub closed_forms: Vec<String>,
    pub default_grid: Vec<u64>,
    pub default_functions: Vec<String>,
}

pub fn catalog_entries(filter: &CatalogFilter) -> Vec<CatalogEntry> {
    all_models()
        .iter()
        .filter(|m| filter.keeps(&***m))
        .map(|m| {
            let f = m.flags();
            CatalogEntry {
                id: m.id().into(),
                label: m.label().into(),
                state_space: m.state_space().describe(),
                rate: serde_json::to_value(m.rate()).unwrap_or(Value::Null),
                local: f.expected_local,
                asymptotically_symmetric: f.asymptotically_symmetric,
                deterministic: f.deterministic_u,
                parameters: m.parameters(),
                closed_forms: m.closed_form_kinds().iter().map(|k| k.name().to_string()).collect(),
                default_grid: m.default_grid(),
                default_functions: m.default_functions().iter().map(|o| o.to_string()).collect(),
            }
        })
        .collect()
}

pub fn catalog_table(filter: &CatalogFilter) -> String {
    let mut s = String::new();
    let flag = |b: bool, c: char| if b { c } else { '-' };
    for e in catalog_entries(filter) {
        let params: Vec<String> = e.parameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            s,
            "{:<22} [{}{}{}] {}\n    params: {}\n    closed forms: {}",
            e.id,
            flag(e.local, 'L'),
            flag(e.asymptotically_symmetric, 'S'),
            flag(e.deterministic, 'D'),
            e.label,
            if params.is_empty() { "(none)".into() } else { params.join(", ") },
            if e.closed_forms.is_empty() { "(none)".into() } else { e.closed_forms.join(", ") },
        );
    }
    s
}

// ---------------------------------------------------------------- manifests

/// One functional of a manifest, with functions in the textual grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalEntry {
    pub kind: String,
    pub phi: String,
    pub chi: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    /// Stem of the output files; defaults to the model id and position in the batch.
    #[serde(default)]
    pub name: Option<String>,
    pub model: String,
    #[serde(default)]
    pub params: serde_json::Map<String, Value>,
    pub functionals: Vec<FunctionalEntry>,
    /// Defaults to the model's grid.
    #[serde(default)]
    pub grid: Option<Vec<u64>>,
    pub samples: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// `constant`, `sqrt_linear` or `sqrt_quadratic`; defaults by grid size.
    #[serde(default)]
    pub fit: Option<String>,
    /// Verification checks run on the model's default functions.
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Reads one manifest object or an array of them.
pub fn parse_manifests(text: &str) -> Result<Vec<ExperimentManifest>> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("manifest is not valid JSON (line {}, column {}): {e}", e.line(), e.column())))?;
    let items = match value {
        Value::Array(items) => items.into_iter().enumerate().map(|(i, v)| (format!("[{i}]"), v)).collect(),
        v @ Value::Object(_) => vec![(String::new(), v)],
        _ => return Err(Error::Config("manifest must be an object or an array of objects".into())),
    };
    items
        .into_iter()
        .map(|(at, v)| {
            serde_json::from_value::<ExperimentManifest>(v)
                .map_err(|e| Error::Config(format!("manifest{at}: {e}")))
                .and_then(|m| m.validated(&at))
        })
        .collect()
}

impl ExperimentManifest {
    fn validated(self, at: &str) -> Result<Self> {
        let field = |f: &str, why: String| Error::Config(format!("manifest{at}.{f}: {why}"));
        if !MODEL_IDS.contains(&self.model.as_str()) {
            return Err(field("model", format!("unknown model `{}`; known: {}", self.model, MODEL_IDS.join(", "))));
        }
        if self.functionals.is_empty() {
            return Err(field("functionals", "at least one functional is required".into()));
        }
        for (i, f) in self.functionals.iter().enumerate() {
            f.kind.parse::<BiasKind>().map_err(|e| field(&format!("functionals[{i}].kind"), e.to_string()))?;
            for (name, text) in [("phi", Some(&f.phi)), ("chi", Some(&f.chi)), ("psi", f.psi.as_ref())] {
                if let Some(t) = text {
                    parse_observable(t).map_err(|e| field(&format!("functionals[{i}].{name}"), e.to_string()))?;
                }
            }
        }
        if let Some(g) = &self.grid {
            if g.is_empty() || g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(field("grid", format!("must be nonempty and strictly increasing, got {g:?}")));
            }
        }
        if let Some(fit) = &self.fit {
            fit.parse::<FitModel>().map_err(|e| field("fit", e.to_string()))?;
        }
        for c in &self.checks {
            if !CHECKS.contains(&c.as_str()) {
                return Err(field("checks", format!("unknown check `{c}`; known: {}", CHECKS.join(", "))));
            }
        }
        Ok(self)
    }
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: u64,
    pub re: f64,
    pub im: f64,
    pub stderr: f64,
}

impl From<&BiasEstimate> for GridPoint {
    fn from(e: &BiasEstimate) -> Self {
        GridPoint { n: e.n, re: e.mean.re, im: e.mean.im, stderr: e.stderr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitEntry {
    pub re: f64,
    pub im: f64,
    pub unc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub present: bool,
    pub re: f64,
    pub im: f64,
}

/// A named candidate reference, reported when the model offers several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub name: String,
    pub re: f64,
    pub im: f64,
    pub z: f64,
    pub agrees: bool,
}

/// Result of one functional. The key set is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub model: String,
    pub kind: String,
    pub phi: String,
    pub chi: String,
    pub grid: Vec<GridPoint>,
    pub limit: LimitEntry,
    pub reference: ReferenceEntry,
    /// Distance to the reference in limit uncertainties; null without a reference.
    pub z: Option<f64>,
    /// True without a reference.
    pub pass: bool,
    pub seed: u64,
    pub candidates: Vec<CandidateEntry>,
}

impl FunctionalReport {
    pub fn summary_line(&self) -> String {
        let z = self.z.map_or("-".to_string(), |z| format!("{z:.2}"));
        format!(
            "{} {} phi={} chi={}: limit {:.6}{:+.6}i ± {:.2e}, z={z}, {}",
            self.model,
            self.kind,
            self.phi,
            self.chi,
            self.limit.re,
            self.limit.im,
            self.limit.unc,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub results: Vec<FunctionalReport>,
    pub checks: Vec<VerificationReport>,
}

/// CSV plot data with header `n,re,im,stderr`; values keep 17 significant digits.
pub fn grid_csv(points: &[GridPoint]) -> String {
    let mut s = String::from("n,re,im,stderr\n");
    for p in points {
        let _ = writeln!(s, "{},{:.16e},{:.16e},{:.16e}", p.n, p.re, p.im, p.stderr);
    }
    s
}

pub fn parse_grid_csv(text: &str) -> Result<Vec<GridPoint>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("n,re,im,stderr") {
        return Err(Error::Config("plot CSV must start with the header n,re,im,stderr".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = |why: &str| Error::Config(format!("plot CSV line {}: {why}: {l:?}", i + 2));
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
            Ok(GridPoint {
                n: cols[0].trim().parse().map_err(|_| bad("index is not an unsigned integer"))?,
                re: num(cols[1])?,
                im: num(cols[2])?,
                stderr: num(cols[3])?,
            })
        })
        .collect()
}

/// Runs one experiment in memory.
pub fn run_experiment(m: &ExperimentManifest, default_name: &str) -> Result<ExperimentReport> {
    let model = build_model(&ModelSpec { id: m.model.clone(), params: m.params.clone() })?;
    let seed = resolve_seed(m.seed)?;
    let grid = m.grid.clone().unwrap_or_else(|| model.default_grid());
    let specs: Vec<FunctionalSpec> = m
        .functionals
        .iter()
        .map(|f| {
            let mut s = FunctionalSpec::new(f.kind.parse()?, parse_observable(&f.phi)?, parse_observable(&f.chi)?);
            if let Some(p) = &f.psi {
                s = s.with_psi(parse_observable(p)?);
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let fit = match &m.fit {
        Some(f) => f.parse()?,
        None => FitModel::default_for(grid.len()),
    };
    let grids = estimate_grid_batch(&*model, &specs, &grid, m.samples, seed)?;
    let mut results = Vec::new();
    for (spec, points) in specs.iter().zip(&grids) {
        let limit = extrapolate(points, fit)?;
        let closed = spec.closed_form(&*model);
        let (reference, z, pass) = match closed {
            Some(r) => {
                let z = limit.z_score(r);
                (ReferenceEntry { present: true, re: r.re, im: r.im }, Some(z), limit.agrees_with(r))
            }
            None => (ReferenceEntry { present: false, re: 0.0, im: 0.0 }, None, true),
        };
        let candidates = model
            .reference_candidates(spec.kind, &spec.phi, &spec.chi)
            .into_iter()
            .map(|(name, c)| CandidateEntry { name, re: c.re, im: c.im, z: limit.z_score(c), agrees: limit.agrees_with(c) })
            .collect();
        results.push(FunctionalReport {
            model: model.id().into(),
            kind: spec.kind.name().into(),
            phi: spec.phi.to_string(),
            chi: spec.chi.to_string(),
            grid: points.iter().map(GridPoint::from).collect(),
            limit: LimitEntry { re: limit.value.re, im: limit.value.im, unc: limit.uncertainty },
            reference,
            z,
            pass,
            seed,
            candidates,
        });
    }
    let settings = CheckSettings::new(&grid, m.samples, seed);
    let checks = m
        .checks
        .iter()
        .map(|c| run_check(c, &*model, &settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport { name: m.name.clone().unwrap_or_else(|| default_name.to_string()), results, checks })
}

pub struct RunOutcome {
    pub reports: Vec<FunctionalReport>,
    pub files: Vec<PathBuf>,
    pub pass: bool,
}

/// Runs every experiment of a manifest file and writes `<name>.report.json` plus one
/// `<name>_<k>.csv` per functional.
pub fn cmd_run(manifest: &Path, out: Option<&Path>) -> Result<RunOutcome> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let experiments = parse_manifests(&text)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut outcome = RunOutcome { reports: Vec::new(), files: Vec::new(), pass: true };
    for (i, m) in experiments.iter().enumerate() {
        let default_name =
            if experiments.len() == 1 { m.model.clone() } else { format!("{}_{i}", m.model) };
        let report = run_experiment(m, &default_name)?;
        let dir = match (out, &m.out_dir) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(d)) if d.is_absolute() => d.clone(),
            (None, Some(d)) => base.join(d),
            (None, None) => base.to_path_buf(),
        };
        std::fs::create_dir_all(&dir)?;
        let json_path = dir.join(format!("{}.report.json", report.name));
        std::fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
        outcome.files.push(json_path);
        for (k, r) in report.results.iter().enumerate() {
            let csv_path = dir.join(format!("{}_{k}.csv", report.name));
            std::fs::write(&csv_path, grid_csv(&r.grid))?;
            outcome.files.push(csv_path);
        }
        outcome.pass &= report.results.iter().all(|r| r.pass) && report.checks.iter().all(|c| c.pass);
        outcome.reports.extend(report.results);
    }
    Ok(outcome)
}

// ---------------------------------------------------------------- verification

/// Individual checks, in run order.
pub const CHECKS: [&str; 6] = ["consistency", "square_field", "locality", "first_order", "symmetry", "deterministic"];

/// Named groups of checks accepted by `--suite`, besides the individual check names.
pub const SUITES: [(&str, &[&str]); 2] = [
    ("structure", &["consistency", "square_field", "locality", "first_order"]),
    ("all", &CHECKS),
];

/// Expands a comma-separated suite selection into check names.
pub fn expand_suite(selection: &str) -> Result<Vec<&'static str>> {
    let mut out: Vec<&'static str> = Vec::new();
    for part in selection.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let names: Vec<&'static str> = if let Some(c) = CHECKS.iter().find(|c| **c == part) {
            vec![*c]
        } else if let Some((_, group)) = SUITES.iter().find(|(n, _)| *n == part) {
            group.to_vec()
        } else {
            let known: Vec<&str> = CHECKS.iter().chain(SUITES.iter().map(|(n, _)| n)).copied().collect();
            return Err(Error::Usage(format!("unknown suite `{part}`; known: {}", known.join(", "))));
        };
        for n in names {
            if !out.contains(&n) {
                out.push(n);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("empty suite selection".into()));
    }
    out.sort_by_key(|n| CHECKS.iter().position(|c| c == n));
    Ok(out)
}

/// Runs one named check on the model's default functions.
pub fn run_check(check: &str, model: &dyn ApproximationModel, settings: &CheckSettings) -> Result<VerificationReport> {
    let fs = model.default_functions();
    let f = |i: usize| &fs[i.min(fs.len() - 1)];
    match check {
        "consistency" => {
            let mut pairs = Vec::new();
            for a in &fs {
                for b in &fs {
                    pairs.push((a.clone(), b.clone()));
                }
            }
            // (f0, f0), (f0, f1), (f0, f2), (f1, f0): a diagonal pair and both orders of a mixed one
            pairs.truncate(4);
            check_h_consistency(model, &pairs, settings)
        }
        "square_field" => check_square_field(model, f(0), f(1), settings),
        "locality" => check_locality(model, &fs, settings),
        "first_order" => check_first_order_singular(model, f(0), f(1), f(2), settings),
        "symmetry" => check_asymptotic_symmetry(model, f(0), f(1), settings),
        "deterministic" => check_deterministic(model, &fs[..fs.len().min(2)], settings),
        other => Err(Error::Usage(format!("unknown check `{other}`"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    pub seed: u64,
    pub samples: u64,
    pub reports: Vec<VerificationReport>,
    pub pass: bool,
}

impl VerifySummary {
    /// One row per (check, model): pass, fail or skip with the largest z-score.
    pub fn table(&self) -> String {
        let mut s = format!("{:<16} {:<22} {:<6} {:>8}\n", "check", "model", "result", "max z");
        for r in &self.reports {
            let result = if r.skipped {
                "skip"
            } else if r.pass {
                "pass"
            } else {
                "FAIL"
            };
            let _ = writeln!(s, "{:<16} {:<22} {:<6} {:>8.2}", r.check, r.model, result, r.max_z());
        }
        s
    }
}

pub fn cmd_verify(model: &str, suite: &str, seed: u64, samples: u64, out: Option<&Path>) -> Result<VerifySummary> {
    let checks = expand_suite(suite)?;
    let models = if model == "all" {
        all_models()
    } else {
        if !MODEL_IDS.contains(&model) {
            return Err(Error::Usage(format!("--model: unknown model `{model}`; known: all, {}", MODEL_IDS.join(", "))));
        }
        vec![build_model(&ModelSpec::new(model))?]
    };
    let mut reports = Vec::new();
    for m in &models {
        let settings = CheckSettings::new(&m.default_grid(), samples, seed);
        for c in &checks {
            reports.push(run_check(c, &**m, &settings)?);
        }
    }
    let pass = reports.iter().all(|r| r.pass);
    let summary = VerifySummary { seed, samples, reports, pass };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(summary)
}
