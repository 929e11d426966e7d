#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use povdyn::asymptotic::{
    index_series_with, write_index_csv_extended, GiniNumerator, IndexKind, IndexOptions, IndexRow, VarianceRule,
};
use povdyn::empirical::empirical_indexes;
use povdyn::estimation::{estimate, EstimationOptions, EstimationReport};
use povdyn::format::fmt_float;
use povdyn::ingestion::{self, Cohort, CohortOptions, StandardizeKind};
use povdyn::model::{ModelParams, PairDenominator};
use povdyn::simulation::{coverage_experiment, run_cohort, write_cohort_csv, SimConfig};
use povdyn::{Error, Result};

#[derive(Parser)]
#[command(name = "povdyn", version, about = "Dynamic poverty indexes from a continuous-time class model")]
struct Cli {
    /// JSON file with option values for the subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate P̂, Λ̂, μ̂ and class moments from a panel; writes model.json.
    Estimate(EstimateArgs),
    /// Asymptotic index series with confidence bands; writes indexes.csv.
    Indexes(IndexesArgs),
    /// Observed per-wave indexes; writes observed.csv.
    Empirical(PanelArgs),
    /// Simulated cohorts; writes cohort.csv.
    Simulate(SimArgs),
    /// Band coverage experiment; writes coverage.csv and coverage.json.
    Coverage(SimArgs),
    /// Index series past the estimation window; writes forecast.csv.
    Forecast(ForecastArgs),
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct PanelArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    panel: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<PathBuf>,
    /// Comma-separated wave years; defaults to every year in the panel.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    waves: Option<Vec<i32>>,
    /// Year whose thresholds define the standardized poverty line; defaults to the first wave.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    base_year: Option<i32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    base_components: Option<u32>,
    /// Extreme-poverty line as a fraction of the poverty line.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    extreme_fraction: Option<f64>,
    /// threshold_ratio or two_step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    standardize: Option<String>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    panel: PanelArgs,
    /// Years between waves; inferred when omitted.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    /// Inclusive wave range FIRST:LAST.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<String>,
    /// n_squared or n_times_n_minus_one.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pair_denominator: Option<String>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct BandArgs {
    /// model.json from `estimate` (or bare model parameters).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Years since origin: START:END:STEP or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<String>,
    /// Population size for the bands; defaults to the estimation cohort size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    /// lemma4 or proposition2_display.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gini_numerator: Option<String>,
    /// proposition5 or delta_method.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    variance_rule: Option<String>,
    /// Calendar year of t = 0 when the model file has none.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    origin_year: Option<i32>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct IndexesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    band: BandArgs,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct ForecastArgs {
    #[command(flatten)]
    #[serde(flatten)]
    band: BandArgs,
    /// Last calendar year of the default yearly grid.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    until: Option<i32>,
}

#[derive(Args)]
struct SimArgs {
    /// Simulation config JSON (falls back to --config).
    sim_config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Some(serde_json::from_str::<Value>(&read_to_string(path)?)?),
        None => None,
    };
    let outputs = match &cli.command {
        Command::Estimate(a) => cmd_estimate(&resolve(a, config.as_ref())?)?,
        Command::Indexes(a) => cmd_indexes(&resolve(a, config.as_ref())?)?,
        Command::Empirical(a) => cmd_empirical(&resolve(a, config.as_ref())?)?,
        Command::Simulate(a) => cmd_simulate(&sim_config(cli, a, config)?)?,
        Command::Coverage(a) => cmd_coverage(&sim_config(cli, a, config)?)?,
        Command::Forecast(a) => cmd_forecast(&resolve(a, config.as_ref())?)?,
    };
    fs::create_dir_all(&cli.out)?;
    for (name, bytes) in outputs {
        fs::write(cli.out.join(name), bytes)?;
    }
    Ok(())
}

type Outputs = Vec<(&'static str, Vec<u8>)>;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Overlays the flags that were given on top of the config file values.
fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Value>) -> Result<T> {
    let mut merged = config.cloned().unwrap_or(Value::Object(Default::default()));
    let Value::Object(base) = &mut merged else {
        return Err(Error::Parse("config file must hold a JSON object".into()));
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        base.extend(given);
    }
    Ok(serde_json::from_value(merged)?)
}

fn required<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::InvalidParameter(format!("--{name} is required")))
}

fn parse_enum<T: DeserializeOwned>(v: &Option<String>, default: T) -> Result<T> {
    match v {
        None => Ok(default),
        Some(s) => serde_json::from_value(Value::String(s.clone()))
            .map_err(|_| Error::Parse(format!("unknown option value {s:?}"))),
    }
}

fn load_cohort(a: &PanelArgs) -> Result<Cohort> {
    let opts = CohortOptions {
        waves: a.waves.clone(),
        base_year: a.base_year,
        base_components: a.base_components,
        extreme_fraction: a.extreme_fraction,
        standardize: parse_enum(&a.standardize, StandardizeKind::ThresholdRatio)?,
    };
    let (cohort, skipped) = ingestion::load_cohort(
        required(&a.panel, "panel")?,
        required(&a.thresholds, "thresholds")?,
        &opts,
    )?;
    for e in &skipped {
        eprintln!("{}", serde_json::json!({ "warning": "row skipped", "line": e.line, "message": e.message }));
    }
    Ok(cohort)
}

fn parse_window(s: &str) -> Result<(i32, i32)> {
    let bad = || Error::Parse(format!("window must look like 1998:2002, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let range = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if range.0 > range.1 {
        return Err(bad());
    }
    Ok(range)
}

fn cmd_estimate(a: &EstimateArgs) -> Result<Outputs> {
    let cohort = load_cohort(&a.panel)?;
    let opts = EstimationOptions {
        eta: a.eta,
        window: a.window.as_deref().map(parse_window).transpose()?,
        pair_denominator: parse_enum(&a.pair_denominator, PairDenominator::NSquared)?,
    };
    let report = estimate(&cohort, &opts)?;
    Ok(vec![("model.json", serde_json::to_vec_pretty(&report)?)])
}

/// Model parameters plus whatever calendar context the file carries.
struct LoadedModel {
    params: ModelParams,
    origin_year: Option<i32>,
    waves: Vec<i32>,
    households: Option<usize>,
}

fn load_model(path: &Path) -> Result<LoadedModel> {
    let text = read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)?;
    if value.get("params").is_some() {
        let r: EstimationReport = serde_json::from_value(value)?;
        r.params.validate()?;
        return Ok(LoadedModel {
            origin_year: Some(r.origin_year),
            households: Some(r.diagnostics.households),
            waves: r.waves,
            params: r.params,
        });
    }
    let params: ModelParams = serde_json::from_value(value)?;
    params.validate()?;
    Ok(LoadedModel {
        params,
        origin_year: None,
        waves: Vec::new(),
        households: None,
    })
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let num = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad grid value {x:?}")))
    };
    if s.contains(':') {
        let parts: Vec<f64> = s.split(':').map(num).collect::<Result<_>>()?;
        let [start, end, step] = match parts[..] {
            [a, b] => [a, b, 1.0],
            [a, b, c] => [a, b, c],
            _ => return Err(Error::Parse(format!("grid must be START:END[:STEP], got {s:?}"))),
        };
        if !(step > 0.0) {
            return Err(Error::Parse("grid step must be > 0".into()));
        }
        let count = ((end - start) / step + 1e-9).floor();
        return Ok((0..=count.max(-1.0) as i64).map(|k| start + k as f64 * step).collect());
    }
    s.split(',').map(num).collect()
}

struct BandSetup {
    model: LoadedModel,
    grid: Vec<f64>,
    n: f64,
    alpha: f64,
    opts: IndexOptions,
}

fn band_setup(a: &BandArgs, default_grid: impl FnOnce(&LoadedModel) -> Vec<f64>) -> Result<BandSetup> {
    let model = load_model(required(&a.model, "model")?)?;
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(&model),
    };
    if grid.iter().any(|&t| t < 0.0) {
        return Err(Error::InvalidParameter("grid starts before the time origin".into()));
    }
    let n = match (a.n, model.households) {
        (Some(n), _) => n,
        (None, Some(h)) => h as f64,
        (None, None) => return Err(Error::InvalidParameter("--n is required".into())),
    };
    let alpha = a.alpha.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let opts = IndexOptions {
        gini_numerator: parse_enum(&a.gini_numerator, GiniNumerator::Lemma4)?,
        variance_rule: parse_enum(&a.variance_rule, VarianceRule::Proposition5)?,
        ..Default::default()
    };
    Ok(BandSetup {
        model,
        grid,
        n,
        alpha,
        opts,
    })
}

fn origin_of(a: &BandArgs, model: &LoadedModel) -> Option<i32> {
    model.origin_year.or(a.origin_year)
}

fn year_column(origin: Option<i32>, t: f64) -> String {
    origin.map(|o| fmt_float(o as f64 + t)).unwrap_or_default()
}

fn observed_span(model: &LoadedModel) -> f64 {
    match (model.waves.first(), model.waves.last()) {
        (Some(a), Some(b)) => (b - a) as f64,
        _ => 0.0,
    }
}

fn series_rows(s: &BandSetup) -> Result<Vec<IndexRow>> {
    let series = index_series_with(&s.model.params, &s.grid, s.n, s.alpha, &s.opts)?;
    Ok(series.iter().flat_map(|x| x.rows()).collect())
}

fn cmd_indexes(a: &IndexesArgs) -> Result<Outputs> {
    let s = band_setup(&a.band, |m| yearly(observed_span(m)))?;
    let origin = origin_of(&a.band, &s.model);
    let rows = series_rows(&s)?;
    let mut buf = Vec::new();
    write_index_csv_extended(
        rows.into_iter().map(|r| (r, vec![year_column(origin, r.t)])),
        &["year"],
        &mut buf,
    )?;
    Ok(vec![("indexes.csv", buf)])
}

fn yearly(span: f64) -> Vec<f64> {
    (0..=span.max(0.0) as i64).map(|k| k as f64).collect()
}

fn cmd_forecast(a: &ForecastArgs) -> Result<Outputs> {
    let origin_flag = a.band.origin_year;
    let until = a.until;
    let s = band_setup(&a.band, |m| match (until, m.origin_year.or(origin_flag)) {
        (Some(u), Some(o)) => yearly((u - o) as f64),
        _ => yearly(observed_span(m)),
    })?;
    let origin = origin_of(&a.band, &s.model);
    let last_observed = observed_span(&s.model);
    let rows = series_rows(&s)?;
    let mut buf = Vec::new();
    write_index_csv_extended(
        rows.into_iter().map(|r| {
            let flag = if r.t > last_observed { "1" } else { "0" };
            (r, vec![year_column(origin, r.t), flag.to_string()])
        }),
        &["year", "forecast"],
        &mut buf,
    )?;
    Ok(vec![("forecast.csv", buf)])
}

fn cmd_empirical(a: &PanelArgs) -> Result<Outputs> {
    let cohort = load_cohort(a)?;
    let origin = cohort.waves[0];
    let mut rows = Vec::new();
    for cs in cohort.cross_sections() {
        let ix = empirical_indexes(&cs, &cohort.thresholds)?;
        let t = (cs.year - origin) as f64;
        for (kind, value) in [
            (IndexKind::H, Some(ix.h)),
            (IndexKind::I, ix.i),
            (IndexKind::G, ix.g),
            (IndexKind::S, ix.s),
        ] {
            let row = IndexRow {
                kind,
                t,
                value,
                variance: None,
                ci_low: None,
                ci_high: None,
                n: Some(cs.len() as f64),
                alpha: None,
            };
            let note = if value.is_none() { "NoPoor" } else { "" };
            rows.push((row, vec![cs.year.to_string(), note.to_string()]));
        }
    }
    let mut buf = Vec::new();
    write_index_csv_extended(rows, &["year", "note"], &mut buf)?;
    Ok(vec![("observed.csv", buf)])
}

fn sim_config(cli: &Cli, a: &SimArgs, config: Option<Value>) -> Result<SimConfig> {
    let value = match (&a.sim_config, config) {
        (Some(path), _) => serde_json::from_str(&read_to_string(path)?)?,
        (None, Some(v)) => v,
        (None, None) => {
            return Err(Error::InvalidParameter(
                "a simulation config is required (positional or --config)".into(),
            ))
        }
    };
    let mut cfg: SimConfig = serde_json::from_value(value)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(cfg: &SimConfig) -> Result<Outputs> {
    let runs = run_cohort(cfg)?;
    let mut buf = Vec::new();
    write_cohort_csv(cfg, &runs, &mut buf)?;
    Ok(vec![("cohort.csv", buf)])
}

fn cmd_coverage(cfg: &SimConfig) -> Result<Outputs> {
    let report = coverage_experiment(cfg)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    Ok(vec![
        ("coverage.csv", csv),
        ("coverage.json", serde_json::to_vec_pretty(&report)?),
    ])
}
