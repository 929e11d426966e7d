//! Infinite-population limits of the four poverty indexes, their CLT
//! variances and normal confidence bands.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{csv_err, fmt_float};
use crate::model::{
    sigma12_sq_at, sigma2_gini_at, theta_at, xbar12_at, ClassIncomeMoments,
    GiniVarianceForm, ModelParams, Occupancy, PovertyThresholds,
};
use crate::normal;

/// Occupancy masses at or below this are treated as "no poor".
pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IndexKind {
    H,
    I,
    G,
    S,
}

impl IndexKind {
    pub const ALL: [IndexKind; 4] = [IndexKind::H, IndexKind::I, IndexKind::G, IndexKind::S];

    pub fn as_str(&self) -> &'static str {
        match self {
            IndexKind::H => "H",
            IndexKind::I => "I",
            IndexKind::G => "G",
            IndexKind::S => "S",
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndexKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" | "h" => Ok(IndexKind::H),
            "I" | "i" => Ok(IndexKind::I),
            "G" | "g" => Ok(IndexKind::G),
            "S" | "s" => Ok(IndexKind::S),
            _ => Err(Error::Parse(format!("unknown index kind {s:?}"))),
        }
    }
}

/// Coefficient placed on the within-class term of `C1` in the Gini numerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GiniNumerator {
    /// `(μ'P.1)²·z̄1`, identical to `Θ_t`.
    #[default]
    Lemma4,
    /// `(μ'P.2)²·z̄1`, as printed in the closed-form display.
    Proposition2Display,
}

/// Which asymptotic variances go into the bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceRule {
    /// `H(1−H)`, `σ12²/(y_p²H²)`, `σ²/(4H²x̄²)`, `(1−H)S²/H`.
    #[default]
    Proposition5,
    /// First-order expansion of each index in the sample means of
    /// `1{poor}`, `Y·1{poor}` and the pair kernel projection.
    DeltaMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IndexOptions {
    #[serde(default)]
    pub gini_numerator: GiniNumerator,
    #[serde(default)]
    pub variance_rule: VarianceRule,
    #[serde(default)]
    pub gini_variance_form: GiniVarianceForm,
}

/// All four limits and their variances at one `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexValues {
    pub t: f64,
    pub h: f64,
    pub i: Option<f64>,
    pub g: Option<f64>,
    pub s: f64,
    pub var_h: f64,
    pub var_i: Option<f64>,
    pub var_g: Option<f64>,
    pub var_s: f64,
}

/// Limit values from an occupancy vector; `Err` when I or G are undefined.
struct Limits {
    h: f64,
    xbar: f64,
    i: f64,
    theta: f64,
    g: f64,
    s: f64,
}

fn limits(
    m: &ClassIncomeMoments,
    th: &PovertyThresholds,
    o: &Occupancy,
    numerator: GiniNumerator,
    t: f64,
) -> Result<Limits> {
    let h = o.poor();
    if h <= EPS {
        return Err(Error::NoPoorMass { t });
    }
    let xbar = xbar12_at(m, o);
    if xbar <= EPS {
        return Err(Error::ZeroPoorIncome { t });
    }
    let i = 1.0 - xbar / (th.poverty() * h);
    let theta = theta_at(m, o);
    let numer = match numerator {
        GiniNumerator::Lemma4 => theta,
        GiniNumerator::Proposition2Display => theta - o.p1 * o.p1 * m.zbar1 + o.p2 * o.p2 * m.zbar1,
    };
    let g = numer / (2.0 * h * xbar);
    let s = h * (i + (1.0 - i) * g);
    Ok(Limits {
        h,
        xbar,
        i,
        theta,
        g,
        s,
    })
}

fn occupancy(params: &ModelParams, t: f64) -> Result<Occupancy> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t must be finite and >= 0, got {t}")));
    }
    params.occupancy(t)
}

/// `ℍ∞(t) = μ'(P.1(t) + P.2(t))`.
pub fn h_inf(params: &ModelParams, t: f64) -> Result<f64> {
    Ok(occupancy(params, t)?.poor().clamp(0.0, 1.0))
}

/// `𝕀∞(t) = 1 − (y1·μ'P.1 + y2·μ'P.2)/(y_p·ℍ∞)`.
pub fn i_inf(params: &ModelParams, t: f64) -> Result<f64> {
    let o = occupancy(params, t)?;
    let h = o.poor();
    if h <= EPS {
        return Err(Error::NoPoorMass { t });
    }
    let m = &params.moments;
    let y_p = params.thresholds.poverty();
    Ok(1.0 - (m.y1 / y_p) * o.p1 / h - (m.y2 / y_p) * o.p2 / h)
}

/// `𝔾∞(t) = Θ_t/(2·ℍ∞·x̄12)`.
pub fn g_inf(params: &ModelParams, t: f64) -> Result<f64> {
    g_inf_with(params, t, GiniNumerator::Lemma4)
}

pub fn g_inf_with(params: &ModelParams, t: f64, numerator: GiniNumerator) -> Result<f64> {
    let o = occupancy(params, t)?;
    Ok(limits(&params.moments, &params.thresholds, &o, numerator, t)?.g)
}

/// `𝕊∞ = ℍ∞·[𝕀∞ + (1−𝕀∞)·𝔾∞]`, zero when there is no poor mass.
pub fn s_inf(params: &ModelParams, t: f64) -> Result<f64> {
    let o = occupancy(params, t)?;
    if o.poor() <= EPS {
        return Ok(0.0);
    }
    Ok(limits(&params.moments, &params.thresholds, &o, GiniNumerator::Lemma4, t)?.s)
}

pub fn var_h(params: &ModelParams, t: f64) -> Result<f64> {
    let h = h_inf(params, t)?;
    Ok(h * (1.0 - h))
}

pub fn var_i(params: &ModelParams, t: f64) -> Result<f64> {
    evaluate(params, t, &IndexOptions::default())?
        .var_i
        .ok_or(Error::NoPoorMass { t })
}

pub fn var_g(params: &ModelParams, t: f64) -> Result<f64> {
    evaluate(params, t, &IndexOptions::default())?
        .var_g
        .ok_or(Error::NoPoorMass { t })
}

pub fn var_s(params: &ModelParams, t: f64) -> Result<f64> {
    Ok(evaluate(params, t, &IndexOptions::default())?.var_s)
}

/// Evaluates every index and variance at `t` from a single `exp(tΛ)`.
///
/// With no poor mass, `i`/`g` and their variances are `None` and `s`,
/// `var_s` are zero. Zero poor income is an error.
pub fn evaluate(params: &ModelParams, t: f64, opts: &IndexOptions) -> Result<IndexValues> {
    let o = occupancy(params, t)?;
    evaluate_at(&params.moments, &params.thresholds, &o, t, opts)
}

pub fn evaluate_at(
    m: &ClassIncomeMoments,
    th: &PovertyThresholds,
    o: &Occupancy,
    t: f64,
    opts: &IndexOptions,
) -> Result<IndexValues> {
    let h = o.poor().clamp(0.0, 1.0);
    let var_h = h * (1.0 - h);
    if h <= EPS {
        return Ok(IndexValues {
            t,
            h,
            i: None,
            g: None,
            s: 0.0,
            var_h,
            var_i: None,
            var_g: None,
            var_s: 0.0,
        });
    }
    let l = limits(m, th, o, opts.gini_numerator, t)?;
    let y_p = th.poverty();
    let sigma12 = sigma12_sq_at(m, o)?;
    let sigma2 = sigma2_gini_at(m, o, opts.gini_variance_form)?;
    let (var_i, var_g, var_s) = match opts.variance_rule {
        VarianceRule::Proposition5 => (
            sigma12 / (y_p * y_p * h * h),
            sigma2 / (4.0 * h * h * l.xbar * l.xbar),
            (1.0 - h) * l.s * l.s / h,
        ),
        VarianceRule::DeltaMethod => {
            let cov = influence_covariance(m, o, &l, sigma12, sigma2);
            let (x, g) = (l.xbar, l.g);
            let ci = [x / (y_p * h * h), -1.0 / (y_p * h), 0.0];
            let cg = [-g / h, -g / x, 1.0 / (h * x)];
            let cs = [1.0 - (x / y_p) * g / h, -1.0 / y_p, 1.0 / (y_p * h)];
            (
                quad_form(&cov, &ci).max(0.0),
                quad_form(&cov, &cg).max(0.0),
                quad_form(&cov, &cs).max(0.0),
            )
        }
    };
    Ok(IndexValues {
        t,
        h,
        i: Some(l.i),
        g: Some(l.g),
        s: l.s,
        var_h,
        var_i: Some(var_i),
        var_g: Some(var_g),
        var_s,
    })
}

/// Covariance of `(1{poor}, Y·1{poor}, m(Y)·1{poor})` for one agent, where
/// `m(y)` is the mean absolute difference of `y` to an independent poor draw.
fn influence_covariance(
    m: &ClassIncomeMoments,
    o: &Occupancy,
    l: &Limits,
    sigma12: f64,
    sigma2: f64,
) -> [[f64; 3]; 3] {
    let (h, x, th) = (l.h, l.xbar, l.theta);
    let (p1, p2) = (o.p1, o.p2);
    let e_ga = p1 * p1 * m.w1 + p2 * p2 * m.w2 + p1 * p2 * (m.y2_2 - m.y1_2);
    let c_bb = h * (1.0 - h);
    let c_ba = x * (1.0 - h);
    let c_bg = th * (1.0 - h);
    let c_ag = e_ga - x * th;
    [
        [c_bb, c_ba, c_bg],
        [c_ba, sigma12, c_ag],
        [c_bg, c_ag, sigma2],
    ]
}

fn quad_form(a: &[[f64; 3]; 3], c: &[f64; 3]) -> f64 {
    (0..3)
        .map(|i| (0..3).map(|j| c[i] * a[i][j] * c[j]).sum::<f64>())
        .sum()
}

fn check_band_args(variance_inf: f64, n: f64, alpha: f64) -> Result<()> {
    if !(variance_inf >= 0.0) || !variance_inf.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "variance must be finite and >= 0, got {variance_inf}"
        )));
    }
    if !(n >= 1.0) {
        return Err(Error::InvalidParameter(format!("population size must be >= 1, got {n}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// `value ± z_{1−α/2}·√(variance_inf/n)`, not clipped to `[0, 1]`.
pub fn confidence_band(value: f64, variance_inf: f64, n: f64, alpha: f64) -> Result<(f64, f64)> {
    check_band_args(variance_inf, n, alpha)?;
    let half = normal::quantile(1.0 - alpha / 2.0) * (variance_inf / n).sqrt();
    Ok((value - half, value + half))
}

/// Normal approximation of `P(a ≤ index_N ≤ b)`. A zero variance gives
/// the indicator of `value_inf ∈ [a, b]`.
pub fn prob_in_interval(a: f64, b: f64, value_inf: f64, variance_inf: f64, n: f64) -> Result<f64> {
    if a > b {
        return Err(Error::InvalidParameter(format!("need a <= b, got [{a}, {b}]")));
    }
    check_band_args(variance_inf.max(0.0), n, 0.5)?;
    if variance_inf <= 0.0 {
        return Ok(if (a..=b).contains(&value_inf) { 1.0 } else { 0.0 });
    }
    if a == b {
        return Ok(0.0);
    }
    let s = (variance_inf / n).sqrt();
    let p = normal::cdf((b - value_inf) / s) - normal::cdf((a - value_inf) / s);
    Ok(p.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexPoint {
    pub t: f64,
    pub value: f64,
    pub variance_inf: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub kind: IndexKind,
    pub points: Vec<IndexPoint>,
}

impl IndexSeries {
    pub fn rows(&self) -> impl Iterator<Item = IndexRow> + '_ {
        self.points.iter().map(move |p| IndexRow {
            kind: self.kind,
            t: p.t,
            value: Some(p.value),
            variance: Some(p.variance_inf),
            ci_low: Some(p.ci_low),
            ci_high: Some(p.ci_high),
            n: Some(p.n),
            alpha: Some(p.alpha),
        })
    }
}

/// One line of the index CSV. Empirical rows leave the band fields empty,
/// and `value` is empty where the index is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexRow {
    pub kind: IndexKind,
    pub t: f64,
    pub value: Option<f64>,
    pub variance: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: Option<f64>,
    pub alpha: Option<f64>,
}

pub const INDEX_CSV_HEADER: [&str; 8] = ["kind", "t", "value", "variance", "ci_low", "ci_high", "n", "alpha"];

pub fn write_index_csv<W: Write>(rows: impl IntoIterator<Item = IndexRow>, out: W) -> Result<()> {
    write_index_csv_extended(rows.into_iter().map(|r| (r, Vec::new())), &[], out)
}

/// Index CSV with trailing columns `extra_header`, one value list per row.
pub fn write_index_csv_extended<W: Write>(
    rows: impl IntoIterator<Item = (IndexRow, Vec<String>)>,
    extra_header: &[&str],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INDEX_CSV_HEADER.iter().chain(extra_header))
        .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    for (r, extra) in rows {
        let mut record = vec![
            r.kind.as_str().to_string(),
            fmt_float(r.t),
            opt(r.value),
            opt(r.variance),
            opt(r.ci_low),
            opt(r.ci_high),
            opt(r.n),
            opt(r.alpha),
        ];
        record.extend(extra);
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// The four series `H, I, G, S` over `t_grid`.
pub fn index_series(params: &ModelParams, t_grid: &[f64], n: f64, alpha: f64) -> Result<Vec<IndexSeries>> {
    index_series_with(params, t_grid, n, alpha, &IndexOptions::default())
}

pub fn index_series_with(
    params: &ModelParams,
    t_grid: &[f64],
    n: f64,
    alpha: f64,
    opts: &IndexOptions,
) -> Result<Vec<IndexSeries>> {
    check_band_args(0.0, n, alpha)?;
    if t_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("time grid must be strictly increasing".into()));
    }
    let values: Vec<IndexValues> = t_grid
        .par_iter()
        .map(|&t| evaluate(params, t, opts))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(4);
    for kind in IndexKind::ALL {
        let points = values
            .iter()
            .map(|v| {
                let (value, var) = match kind {
                    IndexKind::H => (v.h, v.var_h),
                    IndexKind::I => (v.i.ok_or(Error::NoPoorMass { t: v.t })?, v.var_i.unwrap_or(0.0)),
                    IndexKind::G => (v.g.ok_or(Error::NoPoorMass { t: v.t })?, v.var_g.unwrap_or(0.0)),
                    IndexKind::S => (v.s, v.var_s),
                };
                let (ci_low, ci_high) = confidence_band(value, var, n, alpha)?;
                Ok(IndexPoint {
                    t: v.t,
                    value,
                    variance_inf: var,
                    ci_low,
                    ci_high,
                    n,
                    alpha,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(IndexSeries { kind, points });
    }
    Ok(out)
}
