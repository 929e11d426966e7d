//! Finite-population indexes of an observed cross-section.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PovertyThresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PovertyClass {
    /// Extreme poor, income `≤ y_ep`.
    C1,
    /// Poor, `y_ep < income ≤ y_p`.
    C2,
    /// Non-poor.
    C3,
}

impl PovertyClass {
    pub const ALL: [PovertyClass; 3] = [PovertyClass::C1, PovertyClass::C2, PovertyClass::C3];

    /// Zero-based state index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_poor(self) -> bool {
        self != PovertyClass::C3
    }
}

impl fmt::Display for PovertyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.index() + 1)
    }
}

pub fn classify(income: f64, thresholds: &PovertyThresholds) -> Result<PovertyClass> {
    if income < 0.0 || income.is_nan() {
        return Err(Error::NegativeIncome(income));
    }
    Ok(if income <= thresholds.extreme() {
        PovertyClass::C1
    } else if income <= thresholds.poverty() {
        PovertyClass::C2
    } else {
        PovertyClass::C3
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub id: String,
    pub income: f64,
    pub class: PovertyClass,
}

/// Standardized incomes of one wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub year: i32,
    pub households: Vec<Household>,
}

impl CrossSection {
    pub fn new(year: i32, incomes: impl IntoIterator<Item = (String, f64)>, thresholds: &PovertyThresholds) -> Result<Self> {
        let households = incomes
            .into_iter()
            .map(|(id, income)| {
                Ok(Household {
                    id,
                    income,
                    class: classify(income, thresholds)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { year, households })
    }

    pub fn len(&self) -> usize {
        self.households.len()
    }

    pub fn is_empty(&self) -> bool {
        self.households.is_empty()
    }

    /// `(n1, n2, n3)`.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut n = [0; 3];
        for h in &self.households {
            n[h.class.index()] += 1;
        }
        n
    }

    pub fn poor_incomes(&self) -> Vec<f64> {
        self.households
            .iter()
            .filter(|h| h.class.is_poor())
            .map(|h| h.income)
            .collect()
    }
}

/// `(n1 + n2)/N`.
pub fn headcount(cs: &CrossSection) -> Result<f64> {
    if cs.is_empty() {
        return Err(Error::EmptyCrossSection);
    }
    let [n1, n2, _] = cs.class_counts();
    Ok((n1 + n2) as f64 / cs.len() as f64)
}

/// `1 − Σ_poor Y / (y_p·(n1 + n2))`.
pub fn income_gap(cs: &CrossSection, thresholds: &PovertyThresholds) -> Result<f64> {
    income_gap_of(&cs.poor_incomes(), thresholds.poverty())
}

pub fn income_gap_of(poor: &[f64], y_p: f64) -> Result<f64> {
    if poor.is_empty() {
        return Err(Error::NoPoor);
    }
    Ok(1.0 - poor.iter().sum::<f64>() / (y_p * poor.len() as f64))
}

/// Gini among the poor, `Σ_h Σ_l |Y_h − Y_l| / (2·n_p·Σ_h Y_h)`.
pub fn gini_poor(cs: &CrossSection) -> Result<f64> {
    gini_of(&cs.poor_incomes())
}

/// Literal double sum over all ordered pairs of poor households.
pub fn gini_poor_pairwise(cs: &CrossSection) -> Result<f64> {
    let poor = cs.poor_incomes();
    let total = check_gini_input(&poor)?;
    let mut s = 0.0;
    for a in &poor {
        for b in &poor {
            s += (a - b).abs();
        }
    }
    Ok(s / (2.0 * poor.len() as f64 * total))
}

/// Sorted-form Gini `Σ (2i − n − 1)·y_(i) / (n·Σ y)` of a sample.
pub fn gini_of(incomes: &[f64]) -> Result<f64> {
    let total = check_gini_input(incomes)?;
    let mut sorted = incomes.to_vec();
    sorted.sort_by(f64::total_cmp);
    gini_sorted(&sorted, total)
}

pub(crate) fn gini_sorted(sorted: &[f64], total: f64) -> Result<f64> {
    let n = sorted.len() as f64;
    let s: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, y)| (2.0 * (i as f64 + 1.0) - n - 1.0) * y)
        .sum();
    Ok(s / (n * total))
}

fn check_gini_input(poor: &[f64]) -> Result<f64> {
    if poor.is_empty() {
        return Err(Error::NoPoor);
    }
    let total: f64 = poor.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroIncomeMass);
    }
    Ok(total)
}

/// `h·[i + (1 − i)·g]`.
pub fn sen(h: f64, i: f64, g: f64) -> f64 {
    h * (i + (1.0 - i) * g)
}

/// All four indexes of one cross-section. `i`, `g` are `None` without poor
/// households (`s` is then 0) and `g` is `None` when the poor hold no income.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalIndexes {
    pub h: f64,
    pub i: Option<f64>,
    pub g: Option<f64>,
    pub s: Option<f64>,
}

pub fn empirical_indexes(cs: &CrossSection, thresholds: &PovertyThresholds) -> Result<EmpiricalIndexes> {
    if cs.is_empty() {
        return Err(Error::EmptyCrossSection);
    }
    indexes_from_poor(&mut cs.poor_incomes(), cs.len(), thresholds.poverty())
}

/// Indexes from the poor incomes of a population of `n` agents. Sorts `poor`.
pub fn indexes_from_poor(poor: &mut [f64], n: usize, y_p: f64) -> Result<EmpiricalIndexes> {
    if n == 0 {
        return Err(Error::EmptyCrossSection);
    }
    let h = poor.len() as f64 / n as f64;
    if poor.is_empty() {
        return Ok(EmpiricalIndexes {
            h,
            i: None,
            g: None,
            s: Some(0.0),
        });
    }
    let i = income_gap_of(poor, y_p)?;
    poor.sort_by(f64::total_cmp);
    let total: f64 = poor.iter().sum();
    let g = if total > 0.0 { Some(gini_sorted(poor, total)?) } else { None };
    Ok(EmpiricalIndexes {
        h,
        i: Some(i),
        g,
        s: g.map(|g| sen(h, i, g)),
    })
}
