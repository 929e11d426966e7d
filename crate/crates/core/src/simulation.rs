//! Agent-level Monte Carlo of the class process and class-conditional
//! incomes, with finite-N indexes, band coverage and convergence profiles.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotic::{confidence_band, evaluate, IndexKind, IndexOptions, IndexValues};
use crate::empirical::{indexes_from_poor, EmpiricalIndexes, PovertyClass};
use crate::error::{Error, Result};
use crate::format::{csv_err, fmt_float};
use crate::markov::{matrix_exp, Distribution3, GeneratorMatrix, TransitionMatrix};
use crate::model::{ClassDistributionSpec, ModelParams};

fn default_alpha() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ModelParams,
    pub dist_spec: ClassDistributionSpec,
    pub n_agents: usize,
    /// Observation times in years since the origin.
    pub grid: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Replace `params.moments` by the moments of `dist_spec` so that the
    /// limits describe the simulated population.
    #[serde(default = "default_true")]
    pub moments_from_spec: bool,
    #[serde(default)]
    pub index_options: IndexOptions,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.replications == 0 {
            return Err(Error::InvalidParameter("n_agents and replications must be >= 1".into()));
        }
        if self.grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("grid must be increasing and >= 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        self.dist_spec.validate(&self.params.thresholds)?;
        self.effective_params()?.validate()
    }

    /// Parameters the limits are evaluated with.
    pub fn effective_params(&self) -> Result<ModelParams> {
        let mut p = self.params.clone();
        if self.moments_from_spec {
            p.moments = self.dist_spec.moments()?;
        }
        Ok(p)
    }
}

/// Piecewise-constant, right-continuous class path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    /// `jump_times[0] = 0`; `states[k]` holds on `[jump_times[k], jump_times[k+1])`.
    pub jump_times: Vec<f64>,
    pub states: Vec<PovertyClass>,
    pub horizon: f64,
}

impl SimulatedPath {
    pub fn at(&self, t: f64) -> PovertyClass {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k.saturating_sub(1)]
    }
}

/// Exponential holding times with rate `−λ_ii`, jumps with probabilities
/// `λ_ij/(−λ_ii)`.
pub fn simulate_class_path<R: Rng + ?Sized>(
    lambda: &GeneratorMatrix,
    initial: PovertyClass,
    horizon: f64,
    rng: &mut R,
) -> SimulatedPath {
    let mut jump_times = vec![0.0];
    let mut states = vec![initial];
    let mut t = 0.0;
    let mut state = initial.index();
    loop {
        let rate = lambda.exit_rate(state);
        if rate <= 0.0 {
            break;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        t += -u.ln() / rate;
        if t > horizon {
            break;
        }
        let mut target = rng.random::<f64>() * rate;
        let mut next = state;
        for j in (0..3).filter(|&j| j != state) {
            next = j;
            target -= lambda.get(state, j).max(0.0);
            if target < 0.0 {
                break;
            }
        }
        state = next;
        jump_times.push(t);
        states.push(PovertyClass::from_index(state).expect("state < 3"));
    }
    SimulatedPath {
        jump_times,
        states,
        horizon,
    }
}

fn draw_class<R: Rng + ?Sized>(weights: &[f64; 3], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // rounding left a sliver above the cumulative sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(2)
}

/// One income draw given the class.
pub fn sample_income<R: Rng + ?Sized>(class: PovertyClass, spec: &ClassDistributionSpec, rng: &mut R) -> Result<f64> {
    let law = spec.law(class.index() + 1).ok_or_else(|| {
        Error::InvalidParameter("no income law configured for C3".into())
    })?;
    Ok(law.sample(rng))
}

/// Finite-N indexes of one replication at each grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: u64,
    pub indexes: Vec<EmpiricalIndexes>,
    pub class_counts: Vec<[usize; 3]>,
}

fn rng_for(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

fn step_matrices(lambda: &GeneratorMatrix, grid: &[f64]) -> Result<Vec<TransitionMatrix>> {
    let mut prev = 0.0;
    grid.iter()
        .map(|&t| {
            let p = matrix_exp(lambda, t - prev);
            prev = t;
            p
        })
        .collect()
}

fn simulate_replication(
    cfg: &SimConfig,
    steps: &[TransitionMatrix],
    mu: &Distribution3,
    replication: u64,
) -> Result<ReplicationResult> {
    let mut rng = rng_for(cfg.seed, replication);
    let n_times = cfg.grid.len();
    let mut poor: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n_agents / 4 + 1); n_times];
    let mut class_counts = vec![[0usize; 3]; n_times];
    let mu = mu.weights();
    let rows: Vec<[[f64; 3]; 3]> = steps.iter().map(|p| p.rows()).collect();
    for _ in 0..cfg.n_agents {
        let mut state = draw_class(&mu, &mut rng);
        for k in 0..n_times {
            state = draw_class(&rows[k][state], &mut rng);
            class_counts[k][state] += 1;
            if state < 2 {
                let class = PovertyClass::from_index(state).expect("state < 3");
                poor[k].push(sample_income(class, &cfg.dist_spec, &mut rng)?);
            }
        }
    }
    let y_p = cfg.params.thresholds.poverty();
    let indexes = poor
        .iter_mut()
        .map(|incomes| indexes_from_poor(incomes, cfg.n_agents, y_p))
        .collect::<Result<_>>()?;
    Ok(ReplicationResult {
        replication,
        indexes,
        class_counts,
    })
}

/// Every replication, in replication order. Replication `r` draws from the
/// ChaCha8 stream `r` of `seed`, so the output does not depend on threading.
pub fn run_cohort(cfg: &SimConfig) -> Result<Vec<ReplicationResult>> {
    cfg.validate()?;
    let steps = step_matrices(&cfg.params.lambda, &cfg.grid)?;
    (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| simulate_replication(cfg, &steps, &cfg.params.mu, r))
        .collect()
}

pub fn index_value(ix: &EmpiricalIndexes, kind: IndexKind) -> Option<f64> {
    match kind {
        IndexKind::H => Some(ix.h),
        IndexKind::I => ix.i,
        IndexKind::G => ix.g,
        IndexKind::S => ix.s,
    }
}

pub fn limit_value(v: &IndexValues, kind: IndexKind) -> Option<(f64, f64)> {
    match kind {
        IndexKind::H => Some((v.h, v.var_h)),
        IndexKind::I => v.i.zip(v.var_i),
        IndexKind::G => v.g.zip(v.var_g),
        IndexKind::S => Some((v.s, v.var_s)),
    }
}

pub fn write_cohort_csv<W: Write>(cfg: &SimConfig, runs: &[ReplicationResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replication", "t", "H", "I", "G", "S", "n1", "n2", "n3"])
        .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    for r in runs {
        for (k, ix) in r.indexes.iter().enumerate() {
            let [n1, n2, n3] = r.class_counts[k];
            w.write_record([
                r.replication.to_string(),
                fmt_float(cfg.grid[k]),
                fmt_float(ix.h),
                opt(ix.i),
                opt(ix.g),
                opt(ix.s),
                n1.to_string(),
                n2.to_string(),
                n3.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub index: IndexKind,
    pub t: f64,
    pub value_inf: Option<f64>,
    pub variance_inf: Option<f64>,
    /// `None` when no replication could be scored.
    pub coverage: Option<f64>,
    /// Mean and sample variance of `√N·(index_N − index_∞)`.
    pub mean_z: Option<f64>,
    pub var_z: Option<f64>,
    /// Replications where the finite-N index is undefined (no poor agent).
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n_agents: usize,
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    pub rows: Vec<CoverageRow>,
}

impl CoverageReport {
    pub fn row(&self, kind: IndexKind, t: f64) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.index == kind && r.t == t)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "t", "coverage", "mean_z", "var_z", "n_excluded"])
            .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.index.as_str().to_string(),
                fmt_float(r.t),
                opt(r.coverage),
                opt(r.mean_z),
                opt(r.var_z),
                r.n_excluded.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores already simulated replications against the limits and bands.
pub fn score_coverage(cfg: &SimConfig, runs: &[ReplicationResult]) -> Result<CoverageReport> {
    let params = cfg.effective_params()?;
    let n = cfg.n_agents as f64;
    let mut rows = Vec::new();
    for kind in IndexKind::ALL {
        for (k, &t) in cfg.grid.iter().enumerate() {
            let limit = limit_value(&evaluate(&params, t, &cfg.index_options)?, kind);
            let values: Vec<f64> = runs.iter().filter_map(|r| index_value(&r.indexes[k], kind)).collect();
            let n_excluded = runs.len() - values.len();
            let Some((v, var)) = limit else {
                rows.push(CoverageRow {
                    index: kind,
                    t,
                    value_inf: None,
                    variance_inf: None,
                    coverage: None,
                    mean_z: None,
                    var_z: None,
                    n_excluded: runs.len(),
                });
                continue;
            };
            let (lo, hi) = confidence_band(v, var, n, cfg.alpha)?;
            let scored = !values.is_empty();
            let inside = values.iter().filter(|&&x| lo <= x && x <= hi).count();
            let z: Vec<f64> = values.iter().map(|x| n.sqrt() * (x - v)).collect();
            let mean_z = scored.then(|| z.iter().sum::<f64>() / z.len() as f64);
            let var_z = (z.len() > 1).then(|| {
                let m = mean_z.unwrap_or(0.0);
                z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (z.len() - 1) as f64
            });
            rows.push(CoverageRow {
                index: kind,
                t,
                value_inf: Some(v),
                variance_inf: Some(var),
                coverage: scored.then(|| inside as f64 / values.len() as f64),
                mean_z,
                var_z,
                n_excluded,
            });
        }
    }
    Ok(CoverageReport {
        n_agents: cfg.n_agents,
        replications: cfg.replications,
        alpha: cfg.alpha,
        seed: cfg.seed,
        rows,
    })
}

pub const MIN_COVERAGE_REPLICATIONS: usize = 100;

/// Fraction of replications whose finite-N index lies in the `(1−α)` band.
pub fn coverage_experiment(cfg: &SimConfig) -> Result<CoverageReport> {
    if cfg.replications < MIN_COVERAGE_REPLICATIONS {
        return Err(Error::InvalidParameter(format!(
            "coverage needs at least {MIN_COVERAGE_REPLICATIONS} replications"
        )));
    }
    let runs = run_cohort(cfg)?;
    score_coverage(cfg, &runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SllnPoint {
    pub n_agents: usize,
    pub index: IndexKind,
    /// Mean of `|index_N − index_∞|` over replications and grid times.
    pub mean_abs_error: f64,
}

/// Mean absolute deviation from the limit for each population size.
pub fn slln_profile(cfg: &SimConfig, sizes: &[usize]) -> Result<Vec<SllnPoint>> {
    let params = cfg.effective_params()?;
    let limits: Vec<IndexValues> = cfg
        .grid
        .iter()
        .map(|&t| evaluate(&params, t, &cfg.index_options))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &n in sizes {
        let run_cfg = SimConfig {
            n_agents: n,
            ..cfg.clone()
        };
        let runs = run_cohort(&run_cfg)?;
        for kind in IndexKind::ALL {
            let mut total = 0.0;
            let mut count = 0usize;
            for r in &runs {
                for (k, ix) in r.indexes.iter().enumerate() {
                    if let (Some(x), Some((v, _))) = (index_value(ix, kind), limit_value(&limits[k], kind)) {
                        total += (x - v).abs();
                        count += 1;
                    }
                }
            }
            if count == 0 {
                return Err(Error::NoPoor);
            }
            out.push(SllnPoint {
                n_agents: n,
                index: kind,
                mean_abs_error: total / count as f64,
            });
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter("need >= 2 positive (x, y) pairs".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
