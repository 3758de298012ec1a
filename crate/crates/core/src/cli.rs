//! Command-line front end. Exit codes: 0 success, 1 configuration error,
//! 2 a check failed, 3 runtime failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{
    estimate_threshold_with, run_scan, spanning_clusters, spans_by, write_span_csv, AnalysisError, SpanCriterion,
    SpanEstimate, ThresholdOptions, ThresholdReport, SPAN_CSV_HEADER,
};
use crate::config::{ConfigError, QcChoice, RegimeChoice, RunConfig};
use crate::lattice::{build_lattice, Boundary, LatticeKind, LatticeSpec};
use crate::oracle::{standard_suite, CheckReport};
use crate::phases::{classify, reference_matrices, Classification, PhaseError, PHASE_THRESHOLDS};
use crate::reduction::run_census;
use crate::sampler::{derive_seed, run_with, SamplerParams, Start};
use crate::svg;
use crate::weights::{ExponentConvention, Regime};

#[derive(Debug, Parser)]
#[command(name = "mbqc-loops", version, about = "Loop-model sampler and threshold finder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate P_span over a (g, L) grid.
    Scan(RunArgs),
    /// Scan, then locate the crossing of the P_span curves.
    Threshold(RunArgs),
    /// Exact checks on tiny lattices.
    Oracle(OracleArgs),
    /// Render one sampled configuration.
    Snapshot(RunArgs),
    /// Loop-size statistics of sampled configurations.
    Census(RunArgs),
    /// Phase label of each g on the grid.
    Classify(RunArgs),
}

/// Flags that override the config file.
#[derive(Debug, Default, Clone, Args)]
pub struct RunArgs {
    /// TOML config with [lattice], [model], [sampler], [scan], [output].
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lattice: Option<LatticeKind>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub boundary: Option<Boundary>,
    /// Graph file for `--lattice custom`.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Generate a random mixed-degree planar lattice instead of reading one.
    #[arg(long)]
    pub generator_seed: Option<u64>,
    /// Comma-separated list of g values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub g: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub g_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub g_max: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub regime: Option<RegimeChoice>,
    /// lower, upper or exact.
    #[arg(long)]
    pub qc_mode: Option<QcChoice>,
    #[arg(long)]
    pub exact_cap: Option<usize>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long)]
    pub thinning: Option<u64>,
    #[arg(long)]
    pub start: Option<Start>,
    /// Comma-separated lattice sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub criterion: Option<SpanCriterion>,
    /// Comma-separated subset of csv, json, svg.
    #[arg(long, value_delimiter = ',')]
    pub formats: Option<Vec<String>>,
}

#[derive(Debug, Default, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Use the super-regime exponent as originally printed (expected to fail).
    #[arg(long)]
    pub printed_exponent: bool,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    CheckFailed(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::CheckFailed(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn analysis_err(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::InvalidInput(_) | AnalysisError::Lattice(_) | AnalysisError::MissingBoundaryMarks => {
            CliError::Config(e.to_string())
        }
        e => runtime(e),
    }
}

/// Parses `args` and runs, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    match &cli.command {
        Command::Scan(a) => cmd_scan(&resolve(a)?, "scan"),
        // Classification is defined at every g, including g = 0.
        Command::Classify(a) => cmd_classify(&resolve_with(a, false)?),
        Command::Threshold(a) => cmd_threshold(&resolve(a)?),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Snapshot(a) => cmd_snapshot(&resolve(a)?),
        Command::Census(a) => cmd_census(&resolve(a)?),
    }
}

/// Config file (if any) with flags applied on top.
pub fn resolve(a: &RunArgs) -> Result<RunConfig, CliError> {
    resolve_with(a, true)
}

fn resolve_with(a: &RunArgs, check_models: bool) -> Result<RunConfig, CliError> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &a.out {
        c.output.dir = v.clone();
    }
    if let Some(v) = a.seed {
        c.sampler.seed = v;
    }
    if let Some(v) = a.lattice {
        c.lattice.kind = v;
    }
    if let Some(v) = a.size {
        c.lattice.size = v;
    }
    if let Some(v) = a.boundary {
        c.lattice.boundary = v;
    }
    if let Some(v) = &a.source {
        c.lattice.source_path = Some(v.clone());
    }
    if let Some(v) = a.generator_seed {
        c.lattice.generator_seed = Some(v);
    }
    if let Some(v) = &a.g {
        // An explicit list replaces any range from the file.
        c.model.grid = Some(v.clone());
        c.model.g = None;
        c.scan.g_min = None;
        c.scan.g_max = None;
        c.scan.steps = None;
    }
    if a.g_min.is_some() || a.g_max.is_some() || a.steps.is_some() {
        c.model.grid = None;
        c.scan.g_min = a.g_min.or(c.scan.g_min);
        c.scan.g_max = a.g_max.or(c.scan.g_max);
        c.scan.steps = a.steps.or(c.scan.steps);
    }
    if let Some(v) = a.regime {
        c.model.regime = v;
    }
    if let Some(v) = a.qc_mode {
        c.model.qc_mode = v;
    }
    if let Some(v) = a.exact_cap {
        c.model.exact_cap = v;
    }
    if let Some(v) = a.samples {
        c.sampler.n_samples = v;
    }
    if let Some(v) = a.burn_in {
        c.sampler.burn_in_sweeps = v;
    }
    if let Some(v) = a.thinning {
        c.sampler.thinning_sweeps = v;
    }
    if let Some(v) = a.start {
        c.sampler.start = v;
    }
    if let Some(v) = &a.sizes {
        c.scan.sizes = v.clone();
    }
    if let Some(v) = a.workers {
        c.scan.workers = v;
    }
    if let Some(v) = a.criterion {
        c.scan.criterion = v;
    }
    if let Some(v) = &a.formats {
        c.output.formats = v.clone();
    }
    if check_models {
        c.validate()?;
    } else {
        c.validate_settings()?;
    }
    Ok(c)
}

#[derive(Serialize)]
struct Header<'a> {
    program: &'static str,
    version: &'static str,
    command: &'a str,
    master_seed: u64,
    config: &'a RunConfig,
}

fn header<'a>(cmd: &'a str, c: &'a RunConfig) -> Header<'a> {
    Header {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cmd,
        master_seed: c.sampler.seed,
        config: c,
    }
}

fn header_text(cmd: &str, c: &RunConfig) -> String {
    format!(
        "{} {} {cmd}\nmaster_seed = {}\n{}",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        c.sampler.seed,
        c.to_toml().trim_end()
    )
}

fn csv_header(cmd: &str, c: &RunConfig) -> String {
    header_text(cmd, c).lines().map(|l| format!("# {l}\n")).collect()
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    header: Header<'a>,
    #[serde(flatten)]
    body: T,
}

fn out_dir(c: &RunConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&c.output.dir).map_err(|e| runtime(format!("{}: {e}", c.output.dir.display())))?;
    Ok(&c.output.dir)
}

fn write_file(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    written.push(path);
    Ok(())
}

fn write_json<T: Serialize>(
    path: PathBuf,
    cmd: &str,
    c: &RunConfig,
    body: T,
    written: &mut Vec<PathBuf>,
) -> Result<(), CliError> {
    let doc = Wrapped { header: header(cmd, c), body };
    let text = serde_json::to_string_pretty(&doc).map_err(runtime)? + "\n";
    write_file(path, &text, written)
}

fn describe(c: &RunConfig) -> String {
    let spec = c.lattice.spec();
    format!("{} {:?} regime={:?} q_c={}", spec.kind.name(), spec.boundary, c.model.regime, c.model.qc_mode().label())
}

/// Runs the scan, flushing each finished cell to `<stem>.partial.csv`, and
/// writes the requested formats on completion.
fn scan_and_write(c: &RunConfig, cmd: &str, written: &mut Vec<PathBuf>) -> Result<Vec<SpanEstimate>, CliError> {
    let plan = c.scan_plan()?;
    let dir = out_dir(c)?.to_path_buf();
    let partial_path = dir.join(format!("{cmd}.partial.csv"));
    let mut partial = fs::File::create(&partial_path).map_err(runtime)?;
    writeln!(partial, "{}{SPAN_CSV_HEADER}", csv_header(cmd, c)).map_err(runtime)?;
    let partial = Mutex::new(partial);
    let estimates = run_scan(&plan, c.scan.workers, |e| {
        let mut f = partial.lock().unwrap();
        let _ = write_span_csv(&mut *f, std::slice::from_ref(e)).map(|_| ());
        let _ = f.flush();
        eprintln!("  L={:<4} g={:<8.4} P_span={:.4} ± {:.4} (tau={:.1})", e.l, e.g, e.p_span, e.stderr, e.autocorr_time);
    })
    .map_err(analysis_err)?;
    drop(partial);
    let _ = fs::remove_file(&partial_path);

    if c.output.wants("csv") {
        let mut buf = csv_header(cmd, c).into_bytes();
        write_span_csv(&mut buf, &estimates).map_err(runtime)?;
        write_file(dir.join(format!("{cmd}.csv")), &String::from_utf8(buf).unwrap(), written)?;
    }
    if c.output.wants("json") {
        #[derive(Serialize)]
        struct Body<'a> {
            estimates: &'a [SpanEstimate],
        }
        write_json(dir.join(format!("{cmd}.json")), cmd, c, Body { estimates: &estimates }, written)?;
    }
    if c.output.wants("svg") {
        let plot = svg::span_plot(&estimates, &describe(c), &header_text(cmd, c));
        write_file(dir.join(format!("{cmd}.svg")), &plot, written)?;
    }
    Ok(estimates)
}

fn cmd_scan(c: &RunConfig, cmd: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    scan_and_write(c, cmd, &mut written)?;
    Ok(written)
}

fn bound_role(c: &RunConfig, grid: &[f64]) -> Option<String> {
    let regime = c.model.regime.fixed().unwrap_or(Regime::for_g(grid[0]));
    if regime == Regime::Sub {
        return None;
    }
    Some(
        match c.model.qc_mode {
            QcChoice::Lower => "q_c lower bound: under-rewards large clusters, so the crossing bounds g_c from above",
            QcChoice::Upper => "q_c upper bound: over-rewards large clusters, so the crossing bounds g_c from below",
            QcChoice::Exact => "exact q_c (bound fallback above the cap)",
        }
        .into(),
    )
}

fn cmd_threshold(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut sizes = c.scan.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 {
        return Err(CliError::Config("threshold needs at least two lattice sizes".into()));
    }
    let grid = c.g_grid()?;
    if grid.len() < 4 {
        return Err(CliError::Config("threshold needs at least four g values".into()));
    }
    let mut written = Vec::new();
    let estimates = scan_and_write(c, "threshold", &mut written)?;
    let opts = ThresholdOptions {
        seed: derive_seed(c.sampler.seed, u64::MAX),
        qc_mode: Some(c.model.qc_mode()),
        ..ThresholdOptions::default()
    };
    let est = match estimate_threshold_with(&estimates, &opts) {
        Ok(est) => est,
        Err(e @ AnalysisError::NoCrossing { .. }) => {
            for l in &sizes {
                let curve: Vec<String> = estimates
                    .iter()
                    .filter(|e| e.l == *l)
                    .map(|e| format!("{:.3}:{:.3}", e.g, e.p_span))
                    .collect();
                eprintln!("  L={l}: {}", curve.join(" "));
            }
            return Err(runtime(format!("{e}; widen the g range or add samples")));
        }
        Err(e) => return Err(analysis_err(e)),
    };
    let plan = c.scan_plan()?;
    let report = ThresholdReport {
        lattice: c.lattice.kind.name().into(),
        regime: format!("{:?}", c.model.regime).to_lowercase(),
        qc_mode: c.model.qc_mode().label(),
        g_c: est.g_c,
        sigma: est.sigma,
        crossings: est.crossings,
        grid: plan.grid.clone(),
        sizes: plan.sizes.clone(),
        seeds: plan.cells().iter().map(|x| x.seed).collect(),
        method: est.method,
        bound_role: bound_role(c, &plan.grid),
    };
    println!("g_c = {:.4} ± {:.4}", report.g_c, report.sigma);
    let dir = out_dir(c)?.to_path_buf();
    write_json(dir.join("threshold_report.json"), "threshold", c, report, &mut written)?;
    Ok(written)
}

/// Honeycomb and square tori with at most nine faces.
pub fn oracle_lattices() -> Vec<LatticeSpec> {
    vec![
        LatticeSpec::honeycomb(2, Boundary::Torus),
        LatticeSpec::honeycomb(3, Boundary::Torus),
        LatticeSpec::square(2, Boundary::Torus),
        LatticeSpec::square(3, Boundary::Torus),
    ]
}

pub const ORACLE_SUB_G: [f64; 6] = [0.3, -0.3, 0.5, -0.5, 0.9, -0.9];
pub const ORACLE_SUPER_G: [f64; 4] = [1.2, -1.2, 1.5, -1.5];

fn cmd_oracle(a: &OracleArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut c = resolve(&a.run)?;
    if a.printed_exponent {
        c.model.exponent = ExponentConvention::AsPrinted;
    }
    let specs = if a.run.lattice.is_some() || a.run.size.is_some() || a.run.config.is_some() {
        vec![c.lattice.spec()]
    } else {
        oracle_lattices()
    };
    let complexes = specs
        .iter()
        .map(build_lattice)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (sub, sup): (Vec<f64>, Vec<f64>) = match &a.run.g {
        Some(_) => c.g_grid()?.into_iter().partition(|g| g.abs() < 1.0),
        None => (ORACLE_SUB_G.to_vec(), ORACLE_SUPER_G.to_vec()),
    };
    let reports = standard_suite(&complexes, &sub, &sup, c.model.exponent).map_err(|e| match e {
        crate::oracle::OracleError::TooLarge { .. } => CliError::Config(e.to_string()),
        e => runtime(e),
    })?;
    for r in &reports {
        println!(
            "{} {:<34} {:<28} g={:+.2} max_dev={:.2e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.check_name,
            r.lattice,
            r.g,
            r.max_deviation
        );
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    let mut written = Vec::new();
    let dir = out_dir(&c)?.to_path_buf();
    if c.output.wants("json") {
        #[derive(Serialize)]
        struct Body<'a> {
            exponent: ExponentConvention,
            reports: &'a [CheckReport],
        }
        write_json(dir.join("oracle.json"), "oracle", &c, Body { exponent: c.model.exponent, reports: &reports }, &mut written)?;
    }
    if c.output.wants("csv") {
        let mut text = csv_header("oracle", &c);
        text.push_str("check_name,lattice,g,regime,max_deviation,pass\n");
        for r in &reports {
            text.push_str(&format!(
                "{},{},{},{},{:e},{}\n",
                r.check_name,
                r.lattice,
                r.g,
                r.regime.map(|x| format!("{x:?}").to_lowercase()).unwrap_or_default(),
                r.max_deviation,
                r.pass
            ));
        }
        write_file(dir.join("oracle.csv"), &text, &mut written)?;
    }
    for f in &written {
        println!("wrote {}", f.display());
    }
    if failed > 0 {
        return Err(CliError::CheckFailed(format!("{failed} of {} checks failed", reports.len())));
    }
    Ok(Vec::new())
}

fn cmd_snapshot(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let grid = c.g_grid()?;
    if grid.len() != 1 {
        return Err(CliError::Config("snapshot needs a single g (--g)".into()));
    }
    let g = grid[0];
    let complex = build_lattice(&c.lattice.spec()).map_err(|e| CliError::Config(e.to_string()))?;
    let model = c.model.model(g)?;
    let params = SamplerParams { n_samples: 1, thinning_sweeps: 1, ..c.sampler.clone() };
    let state = run_with(&complex, &model, &params, |_| {}).map_err(runtime)?;
    let dec = state.decomposition();
    let spanning = spanning_clusters(dec, &complex).map_err(analysis_err)?;
    let spans = spans_by(dec, &complex, c.scan.criterion).map_err(analysis_err)?;
    let dir = out_dir(c)?.to_path_buf();
    let mut written = Vec::new();
    if c.output.wants("svg") {
        let doc = svg::snapshot(&complex, dec, &spanning, &header_text("snapshot", c))
            .ok_or_else(|| CliError::Config("this lattice has no drawing coordinates".into()))?;
        write_file(dir.join("snapshot.svg"), &doc, &mut written)?;
    }
    if c.output.wants("json") {
        #[derive(Serialize)]
        struct Body {
            g: f64,
            n_merge: usize,
            n_clusters: usize,
            largest_cluster: usize,
            spans: bool,
            outcomes: String,
        }
        let config = dec.config();
        let outcomes = (0..config.len()).map(|v| if config.is_merge(v) { 'M' } else { 'K' }).collect();
        let body = Body {
            g,
            n_merge: dec.n_merge(),
            n_clusters: dec.n_clusters(),
            largest_cluster: dec.max_cluster_size(),
            spans,
            outcomes,
        };
        write_json(dir.join("snapshot.json"), "snapshot", c, body, &mut written)?;
    }
    println!("spans = {spans}, n_merge = {}", dec.n_merge());
    Ok(written)
}

fn cmd_census(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    #[derive(Serialize)]
    struct Row {
        g: f64,
        #[serde(rename = "L")]
        l: usize,
        seed: u64,
        small_loop_regime: bool,
        #[serde(flatten)]
        census: crate::reduction::LoopCensus,
    }
    let mut rows = Vec::new();
    let grid = c.g_grid()?;
    let mut index = 0;
    for &l in &c.scan.sizes {
        let spec = LatticeSpec { size: l, ..c.lattice.spec() };
        let complex = build_lattice(&spec).map_err(|e| CliError::Config(e.to_string()))?;
        for &g in &grid {
            let model = c.model.model(g)?;
            let seed = derive_seed(c.sampler.seed, index);
            index += 1;
            let params = SamplerParams { seed, ..c.sampler.clone() };
            let census = run_census(&complex, &model, &params).map_err(runtime)?;
            eprintln!(
                "  L={l:<4} g={g:<8.4} loops/face={:.4} largest={:.4}",
                census.mean_loop_density, census.largest_fraction
            );
            rows.push(Row { g, l, seed, small_loop_regime: census.small_loop_regime(0.5), census });
        }
    }
    let dir = out_dir(c)?.to_path_buf();
    let mut written = Vec::new();
    if c.output.wants("json") {
        #[derive(Serialize)]
        struct Body<'a> {
            rows: &'a [Row],
        }
        write_json(dir.join("census.json"), "census", c, Body { rows: &rows }, &mut written)?;
    }
    if c.output.wants("csv") {
        let mut text = csv_header("census", c);
        text.push_str("g,L,n_samples,mean_loop_density,density_stderr,largest_fraction,largest_stderr,small_loop_regime\n");
        for r in &rows {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.g,
                r.l,
                r.census.n_samples,
                r.census.mean_loop_density,
                r.census.density_stderr,
                r.census.largest_fraction,
                r.census.largest_stderr,
                r.small_loop_regime
            ));
        }
        write_file(dir.join("census.csv"), &text, &mut written)?;
    }
    Ok(written)
}

fn cmd_classify(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    #[derive(Serialize)]
    struct Row {
        g: f64,
        phase: String,
        trace_t2: Option<i64>,
    }
    let grid = c.raw_grid()?;
    let boundary = PHASE_THRESHOLDS.for_lattice(c.lattice.kind).map_err(|e: PhaseError| CliError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for &g in &grid {
        let class = classify(g, c.lattice.kind).map_err(|e| CliError::Config(e.to_string()))?;
        let trace_t2 = match class {
            Classification::Phase(p) => Some(reference_matrices(p).trace_t2()),
            Classification::Boundary => None,
        };
        println!("g={g:+.4} {class}");
        rows.push(Row { g, phase: class.to_string(), trace_t2 });
    }
    let dir = out_dir(c)?.to_path_buf();
    let mut written = Vec::new();
    if c.output.wants("json") {
        #[derive(Serialize)]
        struct Body<'a> {
            lattice: &'static str,
            boundary: crate::phases::Boundary,
            rows: &'a [Row],
        }
        write_json(
            dir.join("classify.json"),
            "classify",
            c,
            Body { lattice: c.lattice.kind.name(), boundary, rows: &rows },
            &mut written,
        )?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_role_follows_mode_and_regime() {
        let mut c = RunConfig::default();
        assert_eq!(bound_role(&c, &[0.7]), None);
        c.model.regime = RegimeChoice::Super;
        c.model.qc_mode = QcChoice::Upper;
        assert!(bound_role(&c, &[1.2]).unwrap().contains("from below"));
        c.model.qc_mode = QcChoice::Lower;
        assert!(bound_role(&c, &[1.2]).unwrap().contains("from above"));
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[sampler]\nseed = 3\nn_samples = 9\n[scan]\nsizes = [4, 8]\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            seed: Some(4),
            g: Some(vec![-0.5]),
            ..RunArgs::default()
        };
        let c = resolve(&args).unwrap();
        assert_eq!((c.sampler.seed, c.sampler.n_samples), (4, 9));
        assert_eq!(c.scan.sizes, vec![4, 8]);
        assert_eq!(c.g_grid().unwrap(), vec![-0.5]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 1);
        assert_eq!(CliError::CheckFailed(String::new()).exit_code(), 2);
        assert_eq!(CliError::Runtime(String::new()).exit_code(), 3);
        assert_eq!(main_with(["mbqc-loops", "scan", "--steps", "0", "--g-min", "0.7", "--g-max", "0.8"]), 1);
    }
}
