//! Model parameters and the analytic moments of the poor-censored income.
//!
//! For an agent `h`, let `X = Y_h(t)·1{C_h(t) ∈ {C1, C2}}`. Its law is the
//! mixture `F(t; x) = F1(x)·p1 + F2(x)·p2 + p3` with `(p1, p2, p3) = μ'P(t)`.
//! This module evaluates the truncated moments of `X`, the expected absolute
//! difference `Θ_t` between two independent poor agents, and the variance
//! `σ²(t)` of the conditional mean absolute difference.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{matrix_exp, Distribution3, GeneratorMatrix};

const JENSEN_RTOL: f64 = 1e-9;
/// `sigma2_gini` results in `[-NEGATIVE_VARIANCE_TOL, 0)` are clamped to zero.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-6;

/// Extreme-poverty and poverty lines, `0 < y_ep < y_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds", into = "RawThresholds")]
pub struct PovertyThresholds {
    extreme: f64,
    poverty: f64,
}

#[derive(Serialize, Deserialize)]
struct RawThresholds {
    y_ep: f64,
    y_p: f64,
}

impl PovertyThresholds {
    pub fn new(extreme: f64, poverty: f64) -> Result<Self> {
        if !(extreme.is_finite() && poverty.is_finite()) || !(0.0 < extreme && extreme < poverty) {
            return Err(Error::InvalidThresholds(format!(
                "need 0 < y_ep < y_p, got y_ep = {extreme}, y_p = {poverty}"
            )));
        }
        Ok(Self { extreme, poverty })
    }

    pub fn extreme(&self) -> f64 {
        self.extreme
    }

    pub fn poverty(&self) -> f64 {
        self.poverty
    }
}

impl TryFrom<RawThresholds> for PovertyThresholds {
    type Error = Error;
    fn try_from(r: RawThresholds) -> Result<Self> {
        Self::new(r.y_ep, r.y_p)
    }
}

impl From<PovertyThresholds> for RawThresholds {
    fn from(t: PovertyThresholds) -> Self {
        RawThresholds {
            y_ep: t.extreme,
            y_p: t.poverty,
        }
    }
}

/// Within-class income moments of the two poor classes.
///
/// `zbar*` are mean absolute differences `∫∫|y−x| dF dF`, `q*` are
/// `∫ m(y)² dF(y)` and `w*` are `∫ y·m(y) dF(y)` with `m(y) = ∫|y−x| dF(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassIncomeMoments {
    pub y1: f64,
    pub y2: f64,
    pub y1_2: f64,
    pub y2_2: f64,
    pub zbar1: f64,
    pub zbar2: f64,
    pub q1: f64,
    pub q2: f64,
    pub w1: f64,
    pub w2: f64,
}

impl ClassIncomeMoments {
    pub fn from_classes(c1: &ClassMoments, c2: &ClassMoments) -> Self {
        Self {
            y1: c1.mean,
            y2: c2.mean,
            y1_2: c1.second,
            y2_2: c2.second,
            zbar1: c1.zbar,
            zbar2: c2.zbar,
            q1: c1.q,
            q2: c2.q,
            w1: c1.w,
            w2: c2.w,
        }
    }

    pub fn class(&self, class: usize) -> ClassMoments {
        match class {
            1 => ClassMoments {
                mean: self.y1,
                second: self.y1_2,
                zbar: self.zbar1,
                q: self.q1,
                w: self.w1,
            },
            _ => ClassMoments {
                mean: self.y2,
                second: self.y2_2,
                zbar: self.zbar2,
                q: self.q2,
                w: self.w2,
            },
        }
    }

    pub fn validate(&self, thresholds: &PovertyThresholds) -> Result<()> {
        let fields = [
            self.y1, self.y2, self.y1_2, self.y2_2, self.zbar1, self.zbar2, self.q1, self.q2,
            self.w1, self.w2,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMoments("non-finite moment".into()));
        }
        let (ep, p) = (thresholds.extreme(), thresholds.poverty());
        if !(0.0 <= self.y1 && self.y1 <= ep && ep <= self.y2 && self.y2 <= p) {
            return Err(Error::InvalidMoments(format!(
                "need 0 <= y1 <= y_ep <= y2 <= y_p, got y1 = {}, y2 = {}",
                self.y1, self.y2
            )));
        }
        for class in [1, 2] {
            self.class(class).validate(class)?;
        }
        Ok(())
    }
}

/// Moments of a single class law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMoments {
    pub mean: f64,
    pub second: f64,
    pub zbar: f64,
    pub q: f64,
    pub w: f64,
}

impl ClassMoments {
    fn validate(&self, class: usize) -> Result<()> {
        let slack = |a: f64| JENSEN_RTOL * a.abs().max(1.0);
        if self.second < self.mean * self.mean - slack(self.mean * self.mean) {
            return Err(Error::InvalidMoments(format!(
                "class {class}: second moment below squared mean"
            )));
        }
        if self.zbar < 0.0 || self.w < 0.0 {
            return Err(Error::InvalidMoments(format!(
                "class {class}: negative mean absolute difference"
            )));
        }
        if self.q < self.zbar * self.zbar - slack(self.zbar * self.zbar) {
            return Err(Error::InvalidMoments(format!(
                "class {class}: q below zbar squared"
            )));
        }
        Ok(())
    }
}

/// How pair averages over a finite sample are normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDenominator {
    /// All ordered pairs including self-pairs: divide by `n²`.
    #[default]
    NSquared,
    /// Distinct ordered pairs only: divide by `n(n−1)`.
    NTimesNMinusOne,
}

/// Exact pair-average moments of a sample.
pub fn sample_moments(samples: &[f64], denominator: PairDenominator) -> Result<ClassMoments> {
    let n = samples.len();
    let min_n = match denominator {
        PairDenominator::NSquared => 1,
        PairDenominator::NTimesNMinusOne => 2,
    };
    if n < min_n {
        return Err(Error::InvalidParameter(format!(
            "need at least {min_n} samples, got {n}"
        )));
    }
    let nf = n as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    let inner_div = match denominator {
        PairDenominator::NSquared => nf,
        PairDenominator::NTimesNMinusOne => nf - 1.0,
    };
    // s(y_k) = Σ_x |y_k − x| from prefix sums over the sorted sample
    let mut prefix = 0.0;
    let (mut sum_s, mut sum_m2, mut sum_ym) = (0.0, 0.0, 0.0);
    for (k, &y) in sorted.iter().enumerate() {
        let below = k as f64;
        let above = nf - below - 1.0;
        let s = (y * below - prefix) + ((total - prefix - y) - y * above);
        prefix += y;
        let m = s / inner_div;
        sum_s += s;
        sum_m2 += m * m;
        sum_ym += y * m;
    }
    Ok(ClassMoments {
        mean: total / nf,
        second: sorted.iter().map(|v| v * v).sum::<f64>() / nf,
        zbar: sum_s / (nf * inner_div),
        q: sum_m2 / nf,
        w: sum_ym / nf,
    })
}

/// Law of income within one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ClassLaw {
    Uniform { lo: f64, hi: f64 },
    /// Exponential with the given rate, truncated to `[lo, hi]`.
    TruncatedExponential { lo: f64, hi: f64, rate: f64 },
    /// Resampling with replacement from a finite sample.
    Empirical { samples: Vec<f64> },
    PointMass { value: f64 },
    /// `lo + Exp(rate)`; only meaningful for the non-poor class.
    ShiftedExponential { lo: f64, rate: f64 },
}

impl ClassLaw {
    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("class law: {m}")));
        match self {
            ClassLaw::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                bad("uniform needs lo < hi")
            }
            ClassLaw::TruncatedExponential { lo, hi, rate }
                if !(lo.is_finite() && hi.is_finite() && lo < hi && *rate > 0.0 && rate.is_finite()) =>
            {
                bad("truncated exponential needs lo < hi and rate > 0")
            }
            ClassLaw::Empirical { samples } if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) => {
                bad("empirical law needs finite samples")
            }
            ClassLaw::PointMass { value } if !value.is_finite() => bad("point mass must be finite"),
            ClassLaw::ShiftedExponential { lo, rate } if !(lo.is_finite() && *rate > 0.0 && rate.is_finite()) => {
                bad("shifted exponential needs rate > 0")
            }
            _ => Ok(()),
        }
    }

    /// Smallest and largest attainable values.
    pub fn support(&self) -> (f64, f64) {
        match self {
            ClassLaw::Uniform { lo, hi } | ClassLaw::TruncatedExponential { lo, hi, .. } => (*lo, *hi),
            ClassLaw::Empirical { samples } => samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
            ClassLaw::PointMass { value } => (*value, *value),
            ClassLaw::ShiftedExponential { lo, .. } => (*lo, f64::INFINITY),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            ClassLaw::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            ClassLaw::TruncatedExponential { lo, hi, rate } => {
                if x < *lo {
                    0.0
                } else if x >= *hi {
                    1.0
                } else {
                    let z = -(-rate * (hi - lo)).exp_m1();
                    -(-rate * (x - lo)).exp_m1() / z
                }
            }
            ClassLaw::Empirical { samples } => {
                samples.iter().filter(|&&v| v <= x).count() as f64 / samples.len() as f64
            }
            ClassLaw::PointMass { value } => {
                if x >= *value {
                    1.0
                } else {
                    0.0
                }
            }
            ClassLaw::ShiftedExponential { lo, rate } => {
                if x < *lo {
                    0.0
                } else {
                    -(-rate * (x - lo)).exp_m1()
                }
            }
        }
    }

    /// One draw. Continuous laws never return their lower endpoint.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // u in (0, 1]
        let u = 1.0 - rng.random::<f64>();
        match self {
            ClassLaw::Uniform { lo, hi } => hi - (hi - lo) * (1.0 - u),
            ClassLaw::TruncatedExponential { lo, hi, rate } => {
                let z = -(-rate * (hi - lo)).exp_m1();
                (lo - (-u * z).ln_1p() / rate).min(*hi)
            }
            ClassLaw::Empirical { samples } => samples[rng.random_range(0..samples.len())],
            ClassLaw::PointMass { value } => *value,
            ClassLaw::ShiftedExponential { lo, rate } => {
                let x = lo - u.ln() / rate;
                if x > *lo {
                    x
                } else {
                    lo + f64::EPSILON * lo.abs().max(1.0)
                }
            }
        }
    }

    /// Population moments of the law. Empirical laws use all `n²` pairs.
    pub fn moments(&self) -> Result<ClassMoments> {
        self.check()?;
        Ok(match self {
            ClassLaw::Uniform { lo, hi } => {
                let w = hi - lo;
                let mean = 0.5 * (lo + hi);
                ClassMoments {
                    mean,
                    second: (lo * lo + lo * hi + hi * hi) / 3.0,
                    zbar: w / 3.0,
                    q: 7.0 * w * w / 60.0,
                    // ∫ y·m(y) dy / w with m(y) = ((y−lo)² + (hi−y)²)/(2w)
                    w: w * (2.0 * mean) / 6.0,
                }
            }
            ClassLaw::TruncatedExponential { lo, hi, rate } => truncated_exponential_moments(*lo, *hi, *rate),
            ClassLaw::Empirical { samples } => sample_moments(samples, PairDenominator::NSquared)?,
            ClassLaw::PointMass { value } => ClassMoments {
                mean: *value,
                second: value * value,
                zbar: 0.0,
                q: 0.0,
                w: 0.0,
            },
            ClassLaw::ShiftedExponential { lo, rate } => {
                let mean = lo + 1.0 / rate;
                let zbar = 1.0 / rate;
                ClassMoments {
                    mean,
                    second: mean * mean + 1.0 / (rate * rate),
                    zbar,
                    // m(y) = (y−lo) − 1/r + 2e^{−r(y−lo)}/r
                    q: 4.0 / (3.0 * rate * rate),
                    w: lo / rate + 1.5 / (rate * rate),
                }
            }
        })
    }
}

fn truncated_exponential_moments(lo: f64, hi: f64, rate: f64) -> ClassMoments {
    let width = hi - lo;
    let z = -(-rate * width).exp_m1();
    let density = |x: f64| rate * (-rate * (x - lo)).exp() / z;
    let cdf = |x: f64| -(-rate * (x - lo)).exp_m1() / z;
    // ∫_lo^y x f(x) dx
    let partial_mean = |y: f64| {
        let u = y - lo;
        let e = (-rate * u).exp();
        (lo * (1.0 - e) + (1.0 - e * (1.0 + rate * u)) / rate) / z
    };
    let mean = partial_mean(hi);
    let m = |y: f64| y * (2.0 * cdf(y) - 1.0) + mean - 2.0 * partial_mean(y);
    let es = (1.0 - (-rate * width).exp() * (1.0 + rate * width)) / (rate * z);
    let rw = rate * width;
    let es2 = 2.0 / (rate * rate) * (1.0 - (-rw).exp() * (1.0 + rw + 0.5 * rw * rw)) / z;
    let second = lo * lo + 2.0 * lo * es + es2;
    let zbar = gauss_legendre(lo, hi, |y| m(y) * density(y));
    let q = gauss_legendre(lo, hi, |y| m(y).powi(2) * density(y));
    let w = gauss_legendre(lo, hi, |y| y * m(y) * density(y));
    ClassMoments {
        mean,
        second,
        zbar,
        q,
        w,
    }
}

/// Composite 20-point Gauss–Legendre rule over 32 panels.
fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    const ORDER: usize = 20;
    const PANELS: usize = 32;
    let (nodes, weights) = legendre_nodes(ORDER);
    let h = (b - a) / PANELS as f64;
    let mut total = 0.0;
    for k in 0..PANELS {
        let (lo, hi) = (a + h * k as f64, a + h * (k + 1) as f64);
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        total += half
            * nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * f(mid + half * x))
                .sum::<f64>();
    }
    total
}

fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Income laws of the three classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistributionSpec {
    /// C1, supported on `[0, y_ep]`.
    pub extreme: ClassLaw,
    /// C2, supported on `(y_ep, y_p]`.
    pub poor: ClassLaw,
    /// C3, supported above `y_p`. Only needed when non-poor incomes are drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub non_poor: Option<ClassLaw>,
}

impl ClassDistributionSpec {
    /// Uniform laws filling both poor class intervals.
    pub fn uniform(thresholds: &PovertyThresholds) -> Self {
        Self {
            extreme: ClassLaw::Uniform {
                lo: 0.0,
                hi: thresholds.extreme(),
            },
            poor: ClassLaw::Uniform {
                lo: thresholds.extreme(),
                hi: thresholds.poverty(),
            },
            non_poor: None,
        }
    }

    pub fn validate(&self, thresholds: &PovertyThresholds) -> Result<()> {
        let (ep, p) = (thresholds.extreme(), thresholds.poverty());
        self.extreme.check()?;
        self.poor.check()?;
        let (lo, hi) = self.extreme.support();
        if lo < 0.0 || hi > ep {
            return Err(Error::InvalidParameter(format!(
                "C1 law support [{lo}, {hi}] outside [0, {ep}]"
            )));
        }
        let (lo, hi) = self.poor.support();
        let open_lo = match self.poor {
            ClassLaw::Uniform { .. } | ClassLaw::TruncatedExponential { .. } => lo >= ep,
            _ => lo > ep,
        };
        if !open_lo || hi > p {
            return Err(Error::InvalidParameter(format!(
                "C2 law support [{lo}, {hi}] outside ({ep}, {p}]"
            )));
        }
        if let Some(law) = &self.non_poor {
            law.check()?;
            let (lo, _) = law.support();
            let ok = match law {
                ClassLaw::Empirical { .. } | ClassLaw::PointMass { .. } => lo > p,
                _ => lo >= p,
            };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "C3 law support starts at {lo}, must lie above {p}"
                )));
            }
        }
        Ok(())
    }

    pub fn law(&self, class: usize) -> Option<&ClassLaw> {
        match class {
            1 => Some(&self.extreme),
            2 => Some(&self.poor),
            _ => self.non_poor.as_ref(),
        }
    }

    pub fn moments(&self) -> Result<ClassIncomeMoments> {
        Ok(ClassIncomeMoments::from_classes(
            &self.extreme.moments()?,
            &self.poor.moments()?,
        ))
    }
}

/// Everything needed to evaluate the infinite-population indexes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu: Distribution3,
    pub lambda: GeneratorMatrix,
    pub thresholds: PovertyThresholds,
    pub moments: ClassIncomeMoments,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.moments.validate(&self.thresholds)
    }

    /// Class occupation probabilities `μ'P(t)`.
    pub fn occupancy(&self, t: f64) -> Result<Occupancy> {
        let p = matrix_exp(&self.lambda, t)?;
        let [p1, p2, p3] = self.mu.propagate(&p);
        Ok(Occupancy { p1, p2, p3 })
    }
}

/// `μ'P.1(t)`, `μ'P.2(t)`, `μ'P.3(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupancy {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl Occupancy {
    pub fn poor(&self) -> f64 {
        self.p1 + self.p2
    }
}

/// Which closed form is used for `σ²(t) + Θ_t²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GiniVarianceForm {
    /// Exact expansion of `∫[∫|y−x| dF(t;x)]² dF(t;y)`, including the
    /// between-class cross terms.
    #[default]
    Complete,
    /// Sum of the four squared pieces only, without cross terms.
    PaperExpansion,
}

/// `F(t; x)` with class CDFs taken from `spec`.
pub fn mixture_cdf(params: &ModelParams, spec: &ClassDistributionSpec, t: f64, x: f64) -> Result<f64> {
    let o = params.occupancy(t)?;
    if x >= params.thresholds.poverty() {
        return Ok(1.0);
    }
    Ok((spec.extreme.cdf(x) * o.p1 + spec.poor.cdf(x) * o.p2 + o.p3).min(1.0))
}

pub fn truncated_moment_at(m: &ClassIncomeMoments, o: &Occupancy, r: u32) -> Result<f64> {
    match r {
        1 => Ok(m.y1 * o.p1 + m.y2 * o.p2),
        2 => Ok(m.y1_2 * o.p1 + m.y2_2 * o.p2),
        _ => Err(Error::UnsupportedOrder(r)),
    }
}

/// `E[X^r]` for `r ∈ {1, 2}`.
pub fn truncated_moment(params: &ModelParams, t: f64, r: u32) -> Result<f64> {
    if r == 0 || r > 2 {
        return Err(Error::UnsupportedOrder(r));
    }
    truncated_moment_at(&params.moments, &params.occupancy(t)?, r)
}

pub fn theta_at(m: &ClassIncomeMoments, o: &Occupancy) -> f64 {
    o.p1 * o.p1 * m.zbar1 + 2.0 * (m.y2 - m.y1) * o.p1 * o.p2 + o.p2 * o.p2 * m.zbar2
}

/// `Θ_t`, the expected absolute income difference over pairs of poor agents.
pub fn theta(params: &ModelParams, t: f64) -> Result<f64> {
    Ok(theta_at(&params.moments, &params.occupancy(t)?))
}

/// `∫[∫|y−x| dF(t;x)]² dF(t;y)`.
pub fn gini_second_moment_at(m: &ClassIncomeMoments, o: &Occupancy, form: GiniVarianceForm) -> f64 {
    let (p1, p2) = (o.p1, o.p2);
    let diagonal = p1.powi(3) * m.q1
        + p2 * p2 * p1 * (m.y1_2 - 2.0 * m.y1 * m.y2 + m.y2 * m.y2)
        + p1 * p1 * p2 * (m.y2_2 - 2.0 * m.y1 * m.y2 + m.y1 * m.y1)
        + p2.powi(3) * m.q2;
    match form {
        GiniVarianceForm::PaperExpansion => diagonal,
        GiniVarianceForm::Complete => {
            diagonal
                + 2.0 * p1 * p1 * p2 * (m.y2 * m.zbar1 - m.w1)
                + 2.0 * p1 * p2 * p2 * (m.w2 - m.y1 * m.zbar2)
        }
    }
}

pub fn sigma2_gini_at(m: &ClassIncomeMoments, o: &Occupancy, form: GiniVarianceForm) -> Result<f64> {
    let th = theta_at(m, o);
    clamp_variance(gini_second_moment_at(m, o, form) - th * th, "sigma2_gini")
}

/// `σ²(t)`: variance of the conditional mean absolute difference.
pub fn sigma2_gini(params: &ModelParams, t: f64) -> Result<f64> {
    sigma2_gini_at(&params.moments, &params.occupancy(t)?, GiniVarianceForm::Complete)
}

pub fn xbar12_at(m: &ClassIncomeMoments, o: &Occupancy) -> f64 {
    m.y1 * o.p1 + m.y2 * o.p2
}

/// `E[X]`, the mean poor-censored income.
pub fn xbar12(params: &ModelParams, t: f64) -> Result<f64> {
    Ok(xbar12_at(&params.moments, &params.occupancy(t)?))
}

pub fn sigma12_sq_at(m: &ClassIncomeMoments, o: &Occupancy) -> Result<f64> {
    let mean = xbar12_at(m, o);
    clamp_variance(m.y1_2 * o.p1 + m.y2_2 * o.p2 - mean * mean, "sigma12_sq")
}

/// `Var[X]`.
pub fn sigma12_sq(params: &ModelParams, t: f64) -> Result<f64> {
    sigma12_sq_at(&params.moments, &params.occupancy(t)?)
}

fn clamp_variance(v: f64, what: &'static str) -> Result<f64> {
    if v < -NEGATIVE_VARIANCE_TOL {
        Err(Error::NegativeVariance { what, value: v })
    } else {
        Ok(v.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thresholds() -> PovertyThresholds {
        PovertyThresholds::new(3287.70, 5479.50).unwrap()
    }

    fn paper_params() -> ModelParams {
        ModelParams {
            mu: Distribution3::new([0.050, 0.068, 0.882]).unwrap(),
            lambda: GeneratorMatrix::from_rows([
                [-0.59, 0.58, 0.01],
                [0.17, -0.59, 0.42],
                [0.00, 0.02, -0.02],
            ])
            .unwrap(),
            thresholds: thresholds(),
            moments: ClassIncomeMoments {
                y1: 2136.62,
                y2: 4488.47,
                y1_2: 2136.62f64.powi(2) + 977.95f64.powi(2),
                y2_2: 4488.47f64.powi(2) + 613.02f64.powi(2),
                zbar1: 1100.0,
                zbar2: 700.0,
                q1: 1.3e6,
                q2: 5.3e5,
                w1: 2.5e6,
                w2: 3.2e6,
            },
        }
    }

    fn point_mass_params(mu: [f64; 3], y1: f64, y2: f64) -> ModelParams {
        let spec = ClassDistributionSpec {
            extreme: ClassLaw::PointMass { value: y1 },
            poor: ClassLaw::PointMass { value: y2 },
            non_poor: None,
        };
        ModelParams {
            mu: Distribution3::new(mu).unwrap(),
            lambda: GeneratorMatrix::zero(),
            thresholds: thresholds(),
            moments: spec.moments().unwrap(),
        }
    }

    #[test]
    fn thresholds_must_be_ordered() {
        assert!(PovertyThresholds::new(5479.5, 5479.5).is_err());
        assert!(PovertyThresholds::new(0.0, 1.0).is_err());
        assert!(PovertyThresholds::new(600.0, 1000.0).is_ok());
    }

    #[test]
    fn pair_moments_of_two_point_sample() {
        let m = sample_moments(&[1.0, 3.0], PairDenominator::NSquared).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.zbar, 1.0);
        assert_eq!(m.q, 1.0);
        let m = sample_moments(&[1.0, 3.0], PairDenominator::NTimesNMinusOne).unwrap();
        assert_eq!(m.zbar, 2.0);
        assert_eq!(m.q, 4.0);
    }

    #[test]
    fn prefix_sum_pairs_match_double_loop() {
        let xs: [f64; 7] = [5.0, 1.0, 4.0, 4.0, 9.5, 0.0, 2.25];
        let n = xs.len() as f64;
        let inner: Vec<f64> = xs
            .iter()
            .map(|y| xs.iter().map(|x| (y - x).abs()).sum::<f64>() / n)
            .collect();
        let zbar = inner.iter().sum::<f64>() / n;
        let q = inner.iter().map(|m| m * m).sum::<f64>() / n;
        let w = xs.iter().zip(&inner).map(|(y, m)| y * m).sum::<f64>() / n;
        let got = sample_moments(&xs, PairDenominator::NSquared).unwrap();
        assert!((got.zbar - zbar).abs() < 1e-12);
        assert!((got.q - q).abs() < 1e-12);
        assert!((got.w - w).abs() < 1e-12);
    }

    #[test]
    fn uniform_moments_match_resampled_grid() {
        // a fine midpoint grid approximates the uniform law
        let law = ClassLaw::Uniform { lo: 2.0, hi: 5.0 };
        let exact = law.moments().unwrap();
        let n = 4000;
        let grid: Vec<f64> = (0..n).map(|k| 2.0 + 3.0 * (k as f64 + 0.5) / n as f64).collect();
        let approx = sample_moments(&grid, PairDenominator::NSquared).unwrap();
        assert!((exact.zbar - approx.zbar).abs() < 1e-5);
        assert!((exact.q - approx.q).abs() < 1e-5);
        assert!((exact.w - approx.w).abs() < 1e-4);
        assert!((exact.second - approx.second).abs() < 1e-5);
    }

    #[test]
    fn truncated_exponential_moments_match_resampled_grid() {
        let (lo, hi, rate) = (1.0, 4.0, 0.7);
        let law = ClassLaw::TruncatedExponential { lo, hi, rate };
        let exact = law.moments().unwrap();
        // quantile grid of the law
        let z = 1.0 - (-rate * (hi - lo)).exp();
        let n = 4000;
        let grid: Vec<f64> = (0..n)
            .map(|k| lo - (1.0 - z * (k as f64 + 0.5) / n as f64).ln() / rate)
            .collect();
        let approx = sample_moments(&grid, PairDenominator::NSquared).unwrap();
        for (a, b) in [
            (exact.mean, approx.mean),
            (exact.second, approx.second),
            (exact.zbar, approx.zbar),
            (exact.q, approx.q),
            (exact.w, approx.w),
        ] {
            assert!((a - b).abs() < 1e-4 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn shifted_exponential_moments_match_resampled_grid() {
        let (lo, rate) = (10.0, 0.5);
        let exact = ClassLaw::ShiftedExponential { lo, rate }.moments().unwrap();
        let n = 20_000;
        let grid: Vec<f64> = (0..n)
            .map(|k| lo - (1.0 - (k as f64 + 0.5) / n as f64).ln() / rate)
            .collect();
        let approx = sample_moments(&grid, PairDenominator::NSquared).unwrap();
        for (a, b) in [(exact.zbar, approx.zbar), (exact.q, approx.q), (exact.w, approx.w)] {
            assert!((a - b).abs() < 2e-3 * a, "{a} vs {b}");
        }
    }

    #[test]
    fn mixture_cdf_limits() {
        let p = paper_params();
        let spec = ClassDistributionSpec::uniform(&p.thresholds);
        let o = p.occupancy(3.0).unwrap();
        assert!((mixture_cdf(&p, &spec, 3.0, 5479.5).unwrap() - 1.0).abs() < 1e-12);
        assert!((mixture_cdf(&p, &spec, 3.0, -1.0).unwrap() - o.p3).abs() < 1e-15);
        let mut q = p.clone();
        q.mu = Distribution3::new([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(mixture_cdf(&q, &spec, 0.0, 10.0).unwrap(), 1.0);
    }

    #[test]
    fn first_truncated_moment_at_origin() {
        let v = truncated_moment(&paper_params(), 0.0, 1).unwrap();
        assert!((v - 412.05).abs() < 0.01, "{v}");
        assert!(matches!(
            truncated_moment(&paper_params(), 0.0, 3),
            Err(Error::UnsupportedOrder(3))
        ));
    }

    #[test]
    fn first_truncated_moment_without_poor_mass() {
        let mut p = paper_params();
        p.mu = Distribution3::new([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(truncated_moment(&p, 0.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn second_truncated_moment_of_unit_uniform() {
        let t = PovertyThresholds::new(1.0, 2.0).unwrap();
        let spec = ClassDistributionSpec::uniform(&t);
        let p = ModelParams {
            mu: Distribution3::new([0.4, 0.0, 0.6]).unwrap(),
            lambda: GeneratorMatrix::zero(),
            thresholds: t,
            moments: spec.moments().unwrap(),
        };
        let v = truncated_moment(&p, 0.0, 2).unwrap();
        assert!((v - 0.4 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn theta_without_poor_mass_is_zero() {
        let p = point_mass_params([0.0, 0.0, 1.0], 100.0, 4000.0);
        assert_eq!(theta(&p, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn theta_of_point_masses() {
        let p = point_mass_params([0.2, 0.3, 0.5], 1000.0, 4000.0);
        assert!((theta(&p, 0.0).unwrap() - 2.0 * 3000.0 * 0.2 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn sigma2_of_single_point_mass_class_is_zero() {
        let p = point_mass_params([0.3, 0.0, 0.7], 1000.0, 4000.0);
        assert_eq!(sigma2_gini(&p, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn sigma2_flags_inconsistent_moments() {
        let mut p = point_mass_params([0.5, 0.0, 0.5], 1000.0, 4000.0);
        p.moments.zbar1 = 900.0;
        p.moments.q1 = 0.0;
        assert!(matches!(
            sigma2_gini(&p, 0.0),
            Err(Error::NegativeVariance { .. })
        ));
        assert!(p.validate().is_err());
    }

    #[test]
    fn xbar_and_variance_without_poor_mass() {
        let p = point_mass_params([0.0, 0.0, 1.0], 1000.0, 4000.0);
        assert_eq!(xbar12(&p, 0.0).unwrap(), 0.0);
        assert_eq!(sigma12_sq(&p, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn xbar_at_origin_with_paper_values() {
        assert!((xbar12(&paper_params(), 0.0).unwrap() - 412.05).abs() < 0.01);
    }

    #[test]
    fn sigma12_of_two_point_masses() {
        // X ∈ {y1, y2} with probability 1/2 each: variance (y2 − y1)²/4
        let p = point_mass_params([0.5, 0.5, 0.0], 1000.0, 4000.0);
        assert!((sigma12_sq(&p, 0.0).unwrap() - 1500.0f64.powi(2)).abs() < 1e-6);
    }

    #[test]
    fn class_spec_support_checks() {
        let t = thresholds();
        assert!(ClassDistributionSpec::uniform(&t).validate(&t).is_ok());
        let bad = ClassDistributionSpec {
            extreme: ClassLaw::Uniform { lo: 0.0, hi: 4000.0 },
            poor: ClassLaw::Uniform { lo: 3287.7, hi: 5479.5 },
            non_poor: None,
        };
        assert!(bad.validate(&t).is_err());
        let bad = ClassDistributionSpec {
            extreme: ClassLaw::PointMass { value: 100.0 },
            poor: ClassLaw::PointMass { value: 3287.7 },
            non_poor: None,
        };
        assert!(bad.validate(&t).is_err());
    }

    #[test]
    fn laws_sample_inside_support() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let laws = [
            ClassLaw::Uniform { lo: 3.0, hi: 5.0 },
            ClassLaw::TruncatedExponential { lo: 3.0, hi: 5.0, rate: 2.0 },
            ClassLaw::Empirical { samples: vec![3.5, 4.0, 4.5] },
        ];
        for law in &laws {
            for _ in 0..10_000 {
                let x = law.sample(&mut rng);
                assert!(x > 3.0 && x <= 5.0, "{law:?} gave {x}");
            }
        }
        let shifted = ClassLaw::ShiftedExponential { lo: 5.0, rate: 1.0 };
        assert!((0..10_000).all(|_| shifted.sample(&mut rng) > 5.0));
    }
}
