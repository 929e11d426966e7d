//! Panel and threshold CSV readers, income standardization and cohort
//! construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::format::csv_err;
use crate::empirical::{classify, CrossSection, PovertyClass};
use crate::error::{Error, Result};
use crate::model::PovertyThresholds;

/// Household sizes at or above this share one threshold row ("7+").
pub const MAX_COMPONENTS: u32 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub household_id: String,
    pub year: i32,
    pub components: u32,
    pub income: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PanelLoad {
    pub records: Vec<PanelRecord>,
    pub errors: Vec<RowError>,
}

fn column_indexes<const N: usize>(headers: &csv::StringRecord, names: [&str; N]) -> Result<[usize; N]> {
    let mut out = [0; N];
    for (slot, name) in out.iter_mut().zip(names) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse(format!("missing column {name:?}")))?;
    }
    Ok(out)
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str) -> std::result::Result<&'a str, String> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| format!("missing field {name}"))
}

pub fn load_panel(path: impl AsRef<Path>) -> Result<PanelLoad> {
    read_panel(File::open(path)?)
}

/// Parses `household_id,year,components,income`. Malformed rows are skipped
/// and reported; a missing column fails the whole read.
pub fn read_panel<R: Read>(input: R) -> Result<PanelLoad> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let [id_i, year_i, comp_i, inc_i] = column_indexes(&headers, ["household_id", "year", "components", "income"])?;
    let mut out = PanelLoad::default();
    for row in rdr.records() {
        let rec = row.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let parsed = (|| -> std::result::Result<PanelRecord, String> {
            let household_id = field(&rec, id_i, "household_id")?.to_string();
            if household_id.is_empty() {
                return Err("empty household_id".into());
            }
            let year = field(&rec, year_i, "year")?
                .parse::<i32>()
                .map_err(|e| format!("year: {e}"))?;
            let components = field(&rec, comp_i, "components")?
                .parse::<u32>()
                .map_err(|e| format!("components: {e}"))?;
            if components == 0 {
                return Err("components must be >= 1".into());
            }
            let income = field(&rec, inc_i, "income")?
                .parse::<f64>()
                .map_err(|e| format!("income: {e}"))?;
            if !income.is_finite() || income < 0.0 {
                return Err(format!("income must be finite and >= 0, got {income}"));
            }
            Ok(PanelRecord {
                household_id,
                year,
                components,
                income,
            })
        })();
        match parsed {
            Ok(r) => out.records.push(r),
            Err(message) => out.errors.push(RowError { line, message }),
        }
    }
    Ok(out)
}

/// Poverty thresholds by household size and year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ThresholdEntry>", into = "Vec<ThresholdEntry>")]
pub struct ThresholdTable {
    cells: BTreeMap<(i32, u32), f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub components: u32,
    pub year: i32,
    pub threshold: f64,
}

impl ThresholdTable {
    /// Entries with `components > 7` are folded into the 7+ row.
    pub fn new(entries: impl IntoIterator<Item = ThresholdEntry>) -> Result<Self> {
        let mut cells = BTreeMap::new();
        for e in entries {
            if e.components == 0 {
                return Err(Error::InvalidParameter("threshold row with 0 components".into()));
            }
            if !(e.threshold > 0.0 && e.threshold.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "threshold for {} components in {} must be > 0",
                    e.components, e.year
                )));
            }
            let key = (e.year, e.components.min(MAX_COMPONENTS));
            if cells.insert(key, e.threshold).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate threshold for {} components in {}",
                    key.1, key.0
                )));
            }
        }
        let table = Self { cells };
        for year in table.years() {
            let row: Vec<f64> = table.cells.range((year, 0)..=(year, u32::MAX)).map(|(_, v)| *v).collect();
            if row.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidParameter(format!(
                    "thresholds for {year} must increase with household size"
                )));
            }
        }
        Ok(table)
    }

    pub fn get(&self, components: u32, year: i32) -> Result<f64> {
        let c = components.clamp(1, MAX_COMPONENTS);
        self.cells
            .get(&(year, c))
            .copied()
            .ok_or(Error::MissingThreshold { components: c, year })
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.cells.keys().map(|(y, _)| *y).collect()
    }

    pub fn entries(&self) -> Vec<ThresholdEntry> {
        self.cells
            .iter()
            .map(|(&(year, components), &threshold)| ThresholdEntry {
                components,
                year,
                threshold,
            })
            .collect()
    }

    /// Italian relative poverty lines (euro), biennial 1998–2012.
    pub fn italy_1998_2012() -> Self {
        const YEARS: [i32; 8] = [1998, 2000, 2002, 2004, 2006, 2008, 2010, 2012];
        const ROWS: [[f64; 8]; 7] = [
            [5479.50, 5833.54, 5919.60, 6623.88, 6986.40, 7197.60, 7145.76, 7134.36],
            [9147.74, 9722.56, 9866.04, 11039.76, 11644.08, 11996.04, 11909.52, 11890.56],
            [12212.24, 12931.00, 13121.88, 14682.84, 15486.60, 15954.72, 15839.64, 15814.44],
            [14929.12, 15847.76, 16081.68, 17994.84, 18979.80, 19553.52, 19412.52, 19381.56],
            [17426.45, 18472.86, 18745.44, 20975.52, 22123.80, 22792.44, 22628.04, 22592.04],
            [19667.65, 21000.72, 21310.68, 23845.92, 25151.16, 25911.48, 25724.52, 25683.60],
            [21963.74, 23334.13, 23678.52, 26495.40, 27945.84, 28790.52, 28582.80, 28537.32],
        ];
        let entries = ROWS.iter().enumerate().flat_map(|(c, row)| {
            YEARS.iter().zip(row).map(move |(&year, &threshold)| ThresholdEntry {
                components: c as u32 + 1,
                year,
                threshold,
            })
        });
        Self::new(entries).expect("built-in table is valid")
    }
}

impl TryFrom<Vec<ThresholdEntry>> for ThresholdTable {
    type Error = Error;
    fn try_from(v: Vec<ThresholdEntry>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ThresholdTable> for Vec<ThresholdEntry> {
    fn from(t: ThresholdTable) -> Self {
        t.entries()
    }
}

/// An absent or unreadable file is reported as a missing threshold.
pub fn load_thresholds(path: impl AsRef<Path>) -> Result<ThresholdTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::MissingThresholdFile {
        path: path.to_path_buf(),
        source,
    })?;
    read_thresholds(file)
}

/// Parses `components,year,threshold` where `components` is `1`–`6` or `7+`.
pub fn read_thresholds<R: Read>(input: R) -> Result<ThresholdTable> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let [c_i, y_i, t_i] = column_indexes(&headers, ["components", "year", "threshold"])?;
    let mut entries = Vec::new();
    for row in rdr.records() {
        let rec = row.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |m: String| Error::Parse(format!("line {line}: {m}"));
        let comp = field(&rec, c_i, "components").map_err(bad)?;
        let components = match comp {
            "7+" => MAX_COMPONENTS,
            s => s.parse::<u32>().map_err(|e| bad(format!("components: {e}")))?,
        };
        let year = field(&rec, y_i, "year")
            .map_err(bad)?
            .parse::<i32>()
            .map_err(|e| bad(format!("year: {e}")))?;
        let threshold = field(&rec, t_i, "threshold")
            .map_err(bad)?
            .parse::<f64>()
            .map_err(|e| bad(format!("threshold: {e}")))?;
        entries.push(ThresholdEntry {
            components,
            year,
            threshold,
        });
    }
    ThresholdTable::new(entries)
}

/// How raw incomes are brought to the base household size and year.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StandardizeRule {
    /// `income · threshold(base) / threshold(components, year)`.
    #[default]
    ThresholdRatio,
    /// `income / (scale[components] · deflator[year])`, with `scale` relative
    /// to the base household size and `deflator` relative to the base year.
    TwoStep {
        scale: BTreeMap<u32, f64>,
        deflator: BTreeMap<i32, f64>,
    },
}

impl StandardizeRule {
    /// Equivalence scale and deflator read off a threshold table.
    pub fn two_step_from_table(table: &ThresholdTable, base_components: u32, base_year: i32) -> Result<Self> {
        let base = table.get(base_components, base_year)?;
        let scale = (1..=MAX_COMPONENTS)
            .map(|c| Ok((c, table.get(c, base_year)? / base)))
            .collect::<Result<_>>()?;
        let deflator = table
            .years()
            .into_iter()
            .map(|y| Ok((y, table.get(base_components, y)? / base)))
            .collect::<Result<_>>()?;
        Ok(StandardizeRule::TwoStep { scale, deflator })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedRecord {
    pub household_id: String,
    pub year: i32,
    pub components: u32,
    pub raw_income: f64,
    pub income: f64,
}

/// Rescales every record; the single poverty line afterwards is
/// `threshold(base_components, base_year)`, returned alongside.
pub fn standardize(
    records: &[PanelRecord],
    table: &ThresholdTable,
    rule: &StandardizeRule,
    base_components: u32,
    base_year: i32,
) -> Result<(Vec<StandardizedRecord>, f64)> {
    let base = table.get(base_components, base_year)?;
    let out = records
        .iter()
        .map(|r| {
            // Divide first so an income equal to its threshold maps exactly to `base`.
            let income = match rule {
                StandardizeRule::ThresholdRatio => r.income / table.get(r.components, r.year)? * base,
                StandardizeRule::TwoStep { scale, deflator } => {
                    let c = r.components.clamp(1, MAX_COMPONENTS);
                    let s = scale.get(&c).copied();
                    let d = deflator.get(&r.year).copied();
                    match (s, d) {
                        (Some(s), Some(d)) if s > 0.0 && d > 0.0 => r.income / (s * d),
                        _ => {
                            return Err(Error::MissingThreshold {
                                components: c,
                                year: r.year,
                            })
                        }
                    }
                }
            };
            Ok(StandardizedRecord {
                household_id: r.household_id.clone(),
                year: r.year,
                components: r.components,
                raw_income: r.income,
                income,
            })
        })
        .collect::<Result<_>>()?;
    Ok((out, base))
}

/// `y_ep = fraction · y_p`, checked against `0 < y_ep < y_p`.
pub fn derive_extreme_threshold(y_p: f64, fraction: f64) -> Result<f64> {
    Ok(PovertyThresholds::new(fraction * y_p, y_p)?.extreme())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortHousehold {
    pub id: String,
    /// One standardized income per wave.
    pub incomes: Vec<f64>,
    pub classes: Vec<PovertyClass>,
}

/// Households observed at every wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub waves: Vec<i32>,
    pub thresholds: PovertyThresholds,
    pub households: Vec<CohortHousehold>,
    pub dropped: usize,
}

impl Cohort {
    pub fn n_incomes(&self) -> usize {
        self.households.len() * self.waves.len()
    }

    pub fn cross_section(&self, wave: usize) -> CrossSection {
        CrossSection {
            year: self.waves[wave],
            households: self
                .households
                .iter()
                .map(|h| crate::empirical::Household {
                    id: h.id.clone(),
                    income: h.incomes[wave],
                    class: h.classes[wave],
                })
                .collect(),
        }
    }

    pub fn cross_sections(&self) -> Vec<CrossSection> {
        (0..self.waves.len()).map(|k| self.cross_section(k)).collect()
    }

    /// Restriction to the waves in `[from, to]`.
    pub fn window(&self, from: i32, to: i32) -> Result<Cohort> {
        let keep: Vec<usize> = (0..self.waves.len())
            .filter(|&k| (from..=to).contains(&self.waves[k]))
            .collect();
        if keep.is_empty() {
            return Err(Error::InvalidParameter(format!("no wave inside [{from}, {to}]")));
        }
        Ok(Cohort {
            waves: keep.iter().map(|&k| self.waves[k]).collect(),
            thresholds: self.thresholds,
            households: self
                .households
                .iter()
                .map(|h| CohortHousehold {
                    id: h.id.clone(),
                    incomes: keep.iter().map(|&k| h.incomes[k]).collect(),
                    classes: keep.iter().map(|&k| h.classes[k]).collect(),
                })
                .collect(),
            dropped: self.dropped,
        })
    }
}

/// Keeps households with an income at every wave and labels their classes.
pub fn build_cohort(records: &[StandardizedRecord], waves: &[i32], thresholds: &PovertyThresholds) -> Result<Cohort> {
    if waves.is_empty() || waves.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("wave years must be nonempty and increasing".into()));
    }
    let mut by_household: BTreeMap<&str, BTreeMap<i32, f64>> = BTreeMap::new();
    for r in records {
        let incomes = by_household.entry(&r.household_id).or_default();
        if incomes.insert(r.year, r.income).is_some() {
            return Err(Error::InvalidParameter(format!(
                "household {} has two records for {}",
                r.household_id, r.year
            )));
        }
    }
    let total = by_household.len();
    let mut households = Vec::new();
    for (id, incomes) in by_household {
        let Some(path) = waves.iter().map(|y| incomes.get(y).copied()).collect::<Option<Vec<f64>>>() else {
            continue;
        };
        let classes = path.iter().map(|&y| classify(y, thresholds)).collect::<Result<_>>()?;
        households.push(CohortHousehold {
            id: id.to_string(),
            incomes: path,
            classes,
        });
    }
    if households.is_empty() {
        return Err(Error::EmptyCohort);
    }
    Ok(Cohort {
        waves: waves.to_vec(),
        thresholds: *thresholds,
        dropped: total - households.len(),
        households,
    })
}

/// Distinct years present in the records, ascending.
pub fn panel_years(records: &[PanelRecord]) -> Vec<i32> {
    records.iter().map(|r| r.year).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Which standardization rule the file pipeline applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeKind {
    #[default]
    ThresholdRatio,
    /// Scale and deflator derived from the threshold table.
    TwoStep,
}

/// Options of [`load_cohort`]; every field has a default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortOptions {
    /// Wave years; every year present in the panel when absent.
    pub waves: Option<Vec<i32>>,
    /// Defaults to the first wave.
    pub base_year: Option<i32>,
    /// Defaults to 1.
    pub base_components: Option<u32>,
    /// `y_ep / y_p`, default 0.6.
    pub extreme_fraction: Option<f64>,
    pub standardize: StandardizeKind,
}

pub const DEFAULT_EXTREME_FRACTION: f64 = 0.6;

/// Standardizes the panel records and builds the complete-case cohort.
pub fn cohort_from_records(records: Vec<PanelRecord>, table: &ThresholdTable, opts: &CohortOptions) -> Result<Cohort> {
    let waves = match &opts.waves {
        Some(w) => w.clone(),
        None => panel_years(&records),
    };
    let first = *waves.first().ok_or(Error::EmptyCohort)?;
    let base_year = opts.base_year.unwrap_or(first);
    let base_components = opts.base_components.unwrap_or(1);
    let rule = match opts.standardize {
        StandardizeKind::ThresholdRatio => StandardizeRule::ThresholdRatio,
        StandardizeKind::TwoStep => StandardizeRule::two_step_from_table(table, base_components, base_year)?,
    };
    let records: Vec<_> = records.into_iter().filter(|r| waves.contains(&r.year)).collect();
    let (standardized, y_p) = standardize(&records, table, &rule, base_components, base_year)?;
    let y_ep = derive_extreme_threshold(y_p, opts.extreme_fraction.unwrap_or(DEFAULT_EXTREME_FRACTION))?;
    build_cohort(&standardized, &waves, &PovertyThresholds::new(y_ep, y_p)?)
}

/// Reads both CSV files and builds the cohort; also returns skipped rows.
pub fn load_cohort(
    panel: impl AsRef<Path>,
    thresholds: impl AsRef<Path>,
    opts: &CohortOptions,
) -> Result<(Cohort, Vec<RowError>)> {
    let table = load_thresholds(thresholds)?;
    let load = load_panel(panel)?;
    let cohort = cohort_from_records(load.records, &table, opts)?;
    Ok((cohort, load.errors))
}
