//! `mend`: change-point tests for conditional outcome models from the
//! command line.

mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mend_core::crt::SCHEMA_VERSION;
use mend_core::dataset::{load_csv, CsvSample};
use mend_core::lmm::fit_lmm;
use mend_core::pipeline::{detect, DetectOptions};
use mend_core::simlab::{
    fit_pseudo_eta, preset, run_contenders, run_preset, run_pseudo, Contender, ExperimentOptions, ExperimentReport, PresetOutput,
    Scenario, ScenarioConfig, SimError, PRESET_NAMES, PSEUDO_ETA, STANDIN_FEATURES,
};
use mend_core::statistics::{MendFitter, StatError};
use mend_core::{
    CrtError, DataError, Family, LabeledDataset, LmmError, Method, MixtureFit, PipelineError, TimeLabelModel, UnlabeledDataset,
};

use settings::Settings;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Data(_) => 2,
            CliError::Pipeline(e) => pipeline_code(e),
            CliError::Sim(SimError::InvalidConfig(_) | SimError::Data(_)) => 2,
            CliError::Sim(SimError::Pipeline(e)) => pipeline_code(e),
            CliError::Sim(_) | CliError::Io { .. } => 1,
        }
    }
}

fn pipeline_code(e: &PipelineError) -> u8 {
    if e.is_statistical_abort() {
        return 3;
    }
    match e {
        PipelineError::Data(_)
        | PipelineError::Rx(mend_core::rx_model::RxError::Data(_) | mend_core::rx_model::RxError::Width { .. })
        | PipelineError::Stat(StatError::InvalidConfig(_))
        | PipelineError::Crt(CrtError::InvalidOptions(_))
        | PipelineError::Lmm(LmmError::InvalidTopK { .. } | LmmError::TooFewRows { .. }) => 2,
        _ => 1,
    }
}

#[derive(Parser, Debug)]
#[command(name = "mend", version, about = "Model-X randomization tests for a change point in Y | X over time labels")]
struct Cli {
    /// Flat `key = value` file with defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test a labeled CSV for a change point.
    Detect(DetectArgs),
    /// Run a simulation preset or a single scenario.
    Simulate(SimulateArgs),
    /// Type-I error on fixed covariates with outcomes from one logistic model.
    PseudoSim(PseudoArgs),
    /// Fit the label model and the latent mixture and save them as JSON.
    ExportModel(ExportArgs),
}

/// Options shared by every command that runs tests.
#[derive(Args, Debug)]
struct TestArgs {
    /// mend, mend-lad-mean, mend-lad-repr or ols-cusum.
    #[arg(long)]
    method: Option<String>,
    /// Number of resampled label vectors.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ridge on the mixing coefficient of the mean distillation.
    #[arg(long)]
    lambda_reg: Option<f64>,
    /// Features kept per regime by the representation distillation.
    #[arg(long)]
    top_k: Option<usize>,
    /// EM restarts.
    #[arg(long)]
    restarts: Option<usize>,
    /// Smallest segment size a split may leave on either side.
    #[arg(long)]
    min_segment: Option<usize>,
    /// Segment fitter of the refit statistic: lasso-cv, lasso:LAMBDA or ridge:LAMBDA.
    #[arg(long)]
    fitter: Option<String>,
    /// Ridge of the label model.
    #[arg(long)]
    rx_ridge: Option<f64>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Labeled CSV with an outcome column, a time-label column and features.
    #[arg(long)]
    data: Option<PathBuf>,
    /// CSV of extra covariates with time labels and no outcome.
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[arg(long)]
    y_col: Option<String>,
    #[arg(long)]
    r_col: Option<String>,
    /// gaussian or bernoulli.
    #[arg(long)]
    family: Option<String>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    test: TestArgs,
    /// Where to write the test result JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Named preset; see --help for the list.
    #[arg(long, help = format!("Named preset: {}", PRESET_NAMES.join(", ")))]
    preset: Option<String>,
    /// Single scenario instead of a preset: s1, s2, s3 or pseudo.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated methods for --scenario.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[command(flatten)]
    test: TestArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PseudoArgs {
    /// CSV of covariates with a time-label column. With an outcome column
    /// the logistic model is fitted to it; otherwise the built-in stand-in
    /// model is used, which needs exactly its number of features.
    /// Without this flag stand-in covariates are simulated.
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[arg(long)]
    y_col: Option<String>,
    #[arg(long)]
    r_col: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[command(flatten)]
    test: TestArgs,
    /// Where to write the report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rx_ridge: Option<f64>,
    /// Where to write the model JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = Settings::load(cli.config.as_deref())?;
    let workers = settings.get("workers", cli.workers)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Detect(a) => cmd_detect(&settings, a),
        Command::Simulate(a) => cmd_simulate(&settings, a),
        Command::PseudoSim(a) => cmd_pseudo(&settings, a),
        Command::ExportModel(a) => cmd_export(&settings, a),
    })
}

fn parse_family(raw: &str) -> Result<Family, CliError> {
    match raw {
        "gaussian" => Ok(Family::Gaussian),
        "bernoulli" => Ok(Family::Bernoulli),
        other => Err(CliError::Config(format!("unknown family '{other}' (gaussian or bernoulli)"))),
    }
}

fn parse_method(raw: &str) -> Result<Method, CliError> {
    raw.parse().map_err(|e: StatError| CliError::Config(e.to_string()))
}

fn parse_fitter(raw: &str) -> Result<MendFitter, CliError> {
    let bad = || CliError::Config(format!("unknown fitter '{raw}' (lasso-cv, lasso:LAMBDA or ridge:LAMBDA)"));
    if raw == "lasso-cv" {
        return Ok(MendFitter::LassoCv);
    }
    let (kind, value) = raw.split_once(':').ok_or_else(bad)?;
    let value: f64 = value.parse().map_err(|_| bad())?;
    match kind {
        "lasso" => Ok(MendFitter::LassoFixed(value)),
        "ridge" => Ok(MendFitter::OlsRidge(value)),
        _ => Err(bad()),
    }
}

fn detect_options(s: &Settings, a: &TestArgs) -> Result<DetectOptions, CliError> {
    let mut o = DetectOptions::default();
    o.crt.k = s.or("k", a.k, o.crt.k)?;
    o.crt.alpha = s.or("alpha", a.alpha, o.crt.alpha)?;
    o.crt.seed = s.or("seed", a.seed, o.crt.seed)?;
    if !(o.crt.alpha > 0.0 && o.crt.alpha < 1.0) {
        return Err(CliError::Config(format!("alpha must lie in (0, 1), got {}", o.crt.alpha)));
    }
    if o.crt.k == 0 {
        return Err(CliError::Config("k must be at least 1".into()));
    }
    o.lad_mean.lambda_reg = s.or("lambda-reg", a.lambda_reg, o.lad_mean.lambda_reg)?;
    o.top_k = s.or("top-k", a.top_k, o.top_k)?;
    o.em.restarts = s.or("restarts", a.restarts, o.em.restarts)?;
    o.rx_ridge = s.or("rx-ridge", a.rx_ridge, o.rx_ridge)?;
    if let Some(m) = s.get("min-segment", a.min_segment)? {
        o.lad_mean.min_segment = m;
        o.lad_repr.min_segment = m;
        o.mend.min_segment = m;
    }
    if let Some(f) = s.get::<String>("fitter", a.fitter.clone())? {
        o.mend.fitter = parse_fitter(&f)?;
    }
    Ok(o)
}

/// The smallest attainable p-value is `1 / (k + 1)`.
fn warn_if_powerless(o: &DetectOptions) {
    let floor = 1.0 / (o.crt.k as f64 + 1.0);
    if floor > o.crt.alpha {
        eprintln!(
            "warning: with k = {} the smallest attainable p-value is 1/{} = {floor:.4} > alpha = {}; the test cannot reject",
            o.crt.k,
            o.crt.k + 1,
            o.crt.alpha
        );
    }
}

struct Loaded {
    labeled: LabeledDataset,
    unlabeled: Option<UnlabeledDataset>,
}

fn load_data(s: &Settings, a: &DataArgs) -> Result<Loaded, CliError> {
    let path: PathBuf = s.require("data", a.data.clone())?;
    let y_col: String = s.or("y-col", a.y_col.clone(), "y".into())?;
    let r_col: String = s.or("r-col", a.r_col.clone(), "r".into())?;
    let family = parse_family(&s.or::<String>("family", a.family.clone(), "gaussian".into())?)?;
    let labeled = match load_csv(&path, &y_col, &r_col, family, &[])? {
        CsvSample::Labeled(ds) => ds,
        CsvSample::Unlabeled(_) => return Err(DataError::MissingColumn(y_col).into()),
    };
    let unlabeled = match s.get::<PathBuf>("unlabeled", a.unlabeled.clone())? {
        None => None,
        Some(p) => Some(load_unlabeled(&p, &r_col, &y_col)?),
    };
    Ok(Loaded { labeled, unlabeled })
}

fn load_unlabeled(path: &Path, r_col: &str, y_col: &str) -> Result<UnlabeledDataset, CliError> {
    // Any outcome column in an unlabeled file is ignored.
    match load_csv(path, y_col, r_col, Family::Gaussian, &[y_col])? {
        CsvSample::Unlabeled(u) => Ok(u),
        CsvSample::Labeled(_) => unreachable!("outcome column is ignored"),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    fs::write(path, text + "\n").map_err(io)
}

fn cmd_detect(s: &Settings, a: DetectArgs) -> Result<(), CliError> {
    let opts = detect_options(s, &a.test)?;
    let method = parse_method(&s.or::<String>("method", a.test.method.clone(), Method::LadMean.to_string())?)?;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    let data = load_data(s, &a.data)?;
    if method.uses_crt() {
        warn_if_powerless(&opts);
    }
    let res = detect(&data.labeled, data.unlabeled.as_ref(), method, &opts)?;
    if let Some(path) = &out {
        write_json(path, &res)?;
    }
    let k = if method.uses_crt() { format!(", k = {}", res.k) } else { String::new() };
    println!(
        "{method}: p = {:.4}{k}, tau_hat = {}, reject at alpha = {}: {}",
        res.p_value,
        res.tau_hat,
        res.alpha,
        if res.reject { "yes" } else { "no" }
    );
    Ok(())
}

fn summary_line(r: &ExperimentReport) -> String {
    format!(
        "{} delta={} {}: rejection {:.3} (se {:.3}), localization {:.3}, aborted {}, mean {:.0} ms over {} reps",
        r.scenario.scenario,
        r.scenario.delta,
        r.method,
        r.rejection_rate,
        r.rejection_se(),
        r.localization_accuracy,
        r.aborted,
        r.mean_runtime_ms,
        r.replications
    )
}

fn write_reports(dir: &Path, stem: &str, output: &PresetOutput) -> Result<(), CliError> {
    write_json(&dir.join(format!("{stem}.json")), output)?;
    for (i, r) in output.reports.iter().enumerate() {
        let name = format!("{stem}-{i:02}-{}-{}.csv", r.scenario.scenario, r.method);
        r.write_csv(dir.join(name))?;
    }
    Ok(())
}

fn cmd_simulate(s: &Settings, a: SimulateArgs) -> Result<(), CliError> {
    let mut opts = ExperimentOptions {
        detect: detect_options(s, &a.test)?,
        ..ExperimentOptions::default()
    };
    let reps: Option<usize> = s.get("reps", a.reps)?;
    if reps == Some(0) {
        return Err(CliError::Config("reps must be positive".into()));
    }
    let seed = opts.detect.crt.seed;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    let k_flag: Option<usize> = s.get("k", a.test.k)?;
    let (stem, output) = match (s.get::<String>("preset", a.preset)?, s.get::<String>("scenario", a.scenario)?) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either --preset or --scenario".into())),
        (None, None) => return Err(CliError::Config("--preset or --scenario is required".into())),
        (Some(name), None) => {
            let mut p = preset(&name).ok_or_else(|| {
                CliError::Config(format!("unknown preset '{name}' (known: {})", PRESET_NAMES.join(", ")))
            })?;
            if let Some(k) = k_flag {
                p.k = k;
            }
            opts.detect.crt.k = p.k;
            warn_if_powerless(&opts.detect);
            (name, run_preset(&p, reps, seed, &opts)?)
        }
        (None, Some(raw)) => {
            let scenario: Scenario = raw.parse()?;
            let cfg = ScenarioConfig {
                delta: s.or("delta", a.delta, 0.0)?,
                seed,
                ..ScenarioConfig::new(scenario)
            };
            let methods: String = s.or("methods", a.methods, Method::LadMean.to_string())?;
            let contenders = methods
                .split(',')
                .map(|m| parse_method(m.trim()).map(Contender::Method))
                .collect::<Result<Vec<_>, _>>()?;
            warn_if_powerless(&opts.detect);
            let reports = run_contenders(&cfg, &contenders, reps.unwrap_or(200), &opts)?;
            let output = PresetOutput {
                preset: format!("{scenario}-delta-{}", cfg.delta),
                reports,
                runtime: None,
            };
            (output.preset.clone(), output)
        }
    };
    for r in &output.reports {
        println!("{}", summary_line(r));
    }
    if let Some(rt) = &output.runtime {
        println!(
            "runtime on one {} dataset, k = {}: mend {:.0} ms, mend-lad-mean {:.0} ms, speedup {:.1}x",
            rt.scenario.scenario, rt.k, rt.mend_ms, rt.lad_mean_ms, rt.speedup
        );
    }
    if let Some(dir) = out {
        write_reports(&dir, &stem, &output)?;
    }
    Ok(())
}

fn cmd_pseudo(s: &Settings, a: PseudoArgs) -> Result<(), CliError> {
    let opts = ExperimentOptions {
        detect: detect_options(s, &a.test)?,
        ..ExperimentOptions::default()
    };
    let reps: usize = s.or("reps", a.reps, 500)?;
    if reps == 0 {
        return Err(CliError::Config("reps must be positive".into()));
    }
    let method = parse_method(&s.or::<String>("method", a.test.method.clone(), Method::LadMean.to_string())?)?;
    if method == Method::OlsCusum {
        return Err(CliError::Config("ols-cusum needs a gaussian outcome".into()));
    }
    let seed = opts.detect.crt.seed;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    warn_if_powerless(&opts.detect);
    let contenders = [Contender::Method(method)];
    let report = match s.get::<PathBuf>("covariates", a.covariates)? {
        None => {
            let cfg = ScenarioConfig {
                seed,
                ..ScenarioConfig::new(Scenario::Pseudo)
            };
            run_contenders(&cfg, &contenders, reps, &opts)?.remove(0)
        }
        Some(path) => {
            let y_col: String = s.or("y-col", a.y_col, "y".into())?;
            let r_col: String = s.or("r-col", a.r_col, "r".into())?;
            let (covariates, eta) = match load_csv(&path, &y_col, &r_col, Family::Bernoulli, &[])? {
                CsvSample::Labeled(ds) => {
                    let eta = fit_pseudo_eta(&ds, opts.detect.em.logistic_ridge)?;
                    (UnlabeledDataset::new(ds.x().clone(), ds.r().to_vec())?.with_feature_names(ds.feature_names().to_vec())?, eta)
                }
                CsvSample::Unlabeled(u) if u.p() == STANDIN_FEATURES => (u, PSEUDO_ETA.to_vec()),
                CsvSample::Unlabeled(u) => {
                    return Err(CliError::Config(format!(
                        "covariates have {} features and no '{y_col}' column; add outcomes to fit the logistic model",
                        u.p()
                    )))
                }
            };
            let unlabeled = match s.get::<PathBuf>("unlabeled", a.unlabeled)? {
                None => None,
                Some(p) => Some(load_unlabeled(&p, &r_col, &y_col)?),
            };
            run_pseudo(&covariates, unlabeled.as_ref(), &eta, &contenders, reps, seed, &opts)?.remove(0)
        }
    };
    println!("{}", summary_line(&report));
    if let Some(path) = &out {
        write_json(path, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ExportedModel<'a> {
    schema_version: u32,
    feature_names: &'a [String],
    label_model: &'a TimeLabelModel,
    mixture: &'a MixtureFit,
}

fn cmd_export(s: &Settings, a: ExportArgs) -> Result<(), CliError> {
    let mut opts = DetectOptions::default();
    opts.em.restarts = s.or("restarts", a.restarts, opts.em.restarts)?;
    opts.crt.seed = s.or("seed", a.seed, opts.crt.seed)?;
    opts.rx_ridge = s.or("rx-ridge", a.rx_ridge, opts.rx_ridge)?;
    let out: PathBuf = s.require("out", a.out)?;
    let data = load_data(s, &a.data)?;
    let ds = &data.labeled;
    let rx = TimeLabelModel::learn(ds, data.unlabeled.as_ref(), opts.rx_ridge).map_err(PipelineError::from)?;
    let mixture = fit_lmm(ds, &opts.em, opts.em_seed()).map_err(PipelineError::from)?;
    write_json(
        &out,
        &ExportedModel {
            schema_version: SCHEMA_VERSION,
            feature_names: ds.feature_names(),
            label_model: &rx,
            mixture: &mixture,
        },
    )?;
    println!(
        "label model over {} labels and {} features; mixture weight {:.3}, restart {}, {} EM iterations -> {}",
        rx.t_max(),
        rx.n_features(),
        mixture.pi,
        mixture.restart,
        mixture.loglik_trace.len(),
        out.display()
    );
    Ok(())
}
