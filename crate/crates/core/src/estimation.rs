//! From a cohort to model parameters: transition counts, `P̂`, `Λ̂ = log(P̂)/η`,
//! `μ̂` and pooled class income moments.

use serde::{Deserialize, Serialize};

use crate::empirical::{CrossSection, PovertyClass};
use crate::error::{Error, Result};
use crate::ingestion::Cohort;
use crate::markov::{
    eigen_decompose, matrix_exp, matrix_log_generator, Distribution3, GeneratorMatrix, Mat3, TransitionMatrix,
};
use crate::model::{sample_moments, ClassIncomeMoments, ModelParams, PairDenominator, PovertyThresholds};

/// `K_ij`, the number of observed one-step moves from class `i` to `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub k: [[u64; 3]; 3],
}

impl TransitionCounts {
    pub fn row_totals(&self) -> [u64; 3] {
        self.k.map(|row| row.iter().sum())
    }

    pub fn total(&self) -> u64 {
        self.row_totals().iter().sum()
    }

    pub fn merge(mut self, other: &TransitionCounts) -> Self {
        for i in 0..3 {
            for j in 0..3 {
                self.k[i][j] += other.k[i][j];
            }
        }
        self
    }
}

/// Classes of one household on the wave grid; `None` marks a missing wave.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPath {
    pub household: String,
    pub classes: Vec<Option<PovertyClass>>,
}

/// Counts every pair of adjacent waves over all paths.
pub fn count_transitions(paths: &[ClassPath]) -> Result<TransitionCounts> {
    let mut counts = TransitionCounts::default();
    for p in paths {
        let classes = p
            .classes
            .iter()
            .copied()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::IncompletePath {
                household: p.household.clone(),
            })?;
        for w in classes.windows(2) {
            counts.k[w[0].index()][w[1].index()] += 1;
        }
    }
    Ok(counts)
}

/// `p̂_ij = K_ij / K_i`.
pub fn estimate_transition_matrix(counts: &TransitionCounts) -> Result<TransitionMatrix> {
    let totals = counts.row_totals();
    let mut m = Mat3::zeros();
    for i in 0..3 {
        if totals[i] == 0 {
            return Err(Error::EmptyRow { class: i + 1 });
        }
        for j in 0..3 {
            m[(i, j)] = counts.k[i][j] as f64 / totals[i] as f64;
        }
    }
    TransitionMatrix::new(m)
}

/// `Λ̂ = log(P̂)/η`; requires `P̂` irreducible.
pub fn estimate_generator(p: &TransitionMatrix, eta: f64) -> Result<GeneratorMatrix> {
    if !p.is_irreducible() {
        return Err(Error::NotIrreducible);
    }
    matrix_log_generator(p, eta)
}

/// Class shares of a cross-section.
pub fn estimate_initial_distribution(cs: &CrossSection) -> Result<Distribution3> {
    if cs.is_empty() {
        return Err(Error::EmptyCrossSection);
    }
    let n = cs.len() as f64;
    let [a, b, c] = cs.class_counts();
    Distribution3::new([a as f64 / n, b as f64 / n, c as f64 / n])
}

pub const MIN_CLASS_OBSERVATIONS: usize = 2;

/// Pooled moments of the two poor classes. Non-poor observations are ignored.
pub fn estimate_class_moments(
    pooled: impl IntoIterator<Item = (f64, PovertyClass)>,
    denominator: PairDenominator,
) -> Result<ClassIncomeMoments> {
    let (mut c1, mut c2) = (Vec::new(), Vec::new());
    for (y, class) in pooled {
        match class {
            PovertyClass::C1 => c1.push(y),
            PovertyClass::C2 => c2.push(y),
            PovertyClass::C3 => {}
        }
    }
    for (class, v) in [(1, &c1), (2, &c2)] {
        if v.len() < MIN_CLASS_OBSERVATIONS {
            return Err(Error::InsufficientClassData {
                class,
                count: v.len(),
                needed: MIN_CLASS_OBSERVATIONS,
            });
        }
    }
    Ok(ClassIncomeMoments::from_classes(
        &sample_moments(&c1, denominator)?,
        &sample_moments(&c2, denominator)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimationOptions {
    /// Years between waves; inferred from the wave grid when absent.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Inclusive `[first, last]` wave years to use.
    #[serde(default)]
    pub window: Option<(i32, i32)>,
    #[serde(default)]
    pub pair_denominator: PairDenominator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub p_hat: TransitionMatrix,
    /// Eigenvalues of `P̂` as `[re, im]`, largest real part first.
    pub p_eigenvalues: Vec<[f64; 2]>,
    pub embeddable: bool,
    /// `max |exp(η·Λ̂) − P̂|`.
    pub reconstruction_error: f64,
    pub households: usize,
    pub dropped_households: usize,
    /// Pooled observations per class over the window.
    pub class_sizes: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub params: ModelParams,
    pub counts: TransitionCounts,
    pub eta: f64,
    pub waves: Vec<i32>,
    pub origin_year: i32,
    pub diagnostics: Diagnostics,
}

fn infer_eta(waves: &[i32]) -> Result<f64> {
    let steps: Vec<i32> = waves.windows(2).map(|w| w[1] - w[0]).collect();
    match steps.first() {
        Some(&s) if steps.iter().all(|&x| x == s) => Ok(s as f64),
        Some(_) => Err(Error::InvalidParameter(
            "waves are unevenly spaced; pass eta explicitly".into(),
        )),
        None => Err(Error::InvalidParameter("need at least two waves".into())),
    }
}

/// Full pipeline over the cohort (or its window).
pub fn estimate(cohort: &Cohort, opts: &EstimationOptions) -> Result<EstimationReport> {
    let windowed;
    let cohort = match opts.window {
        Some((from, to)) => {
            windowed = cohort.window(from, to)?;
            &windowed
        }
        None => cohort,
    };
    if cohort.waves.len() < 2 {
        return Err(Error::InvalidParameter("need at least two waves".into()));
    }
    let eta = match opts.eta {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => return Err(Error::InvalidParameter(format!("eta must be > 0, got {e}"))),
        None => infer_eta(&cohort.waves)?,
    };
    let paths: Vec<ClassPath> = cohort
        .households
        .iter()
        .map(|h| ClassPath {
            household: h.id.clone(),
            classes: h.classes.iter().map(|&c| Some(c)).collect(),
        })
        .collect();
    let counts = count_transitions(&paths)?;
    let p_hat = estimate_transition_matrix(&counts)?;
    let lambda = estimate_generator(&p_hat, eta)?;
    let mu = estimate_initial_distribution(&cohort.cross_section(0))?;
    let pooled = cohort
        .households
        .iter()
        .flat_map(|h| h.incomes.iter().copied().zip(h.classes.iter().copied()));
    let moments = estimate_class_moments(pooled, opts.pair_denominator)?;
    let thresholds: PovertyThresholds = cohort.thresholds;
    let params = ModelParams {
        mu,
        lambda,
        thresholds,
        moments,
    };
    params.validate()?;

    let recon = matrix_exp(&params.lambda, eta)?;
    let reconstruction_error = (recon.matrix() - p_hat.matrix()).abs().max();
    let eig = eigen_decompose(p_hat.matrix())?;
    let mut class_sizes = [0; 3];
    for h in &cohort.households {
        for c in &h.classes {
            class_sizes[c.index()] += 1;
        }
    }
    Ok(EstimationReport {
        diagnostics: Diagnostics {
            p_hat,
            p_eigenvalues: eig.values.iter().map(|z| [z.re, z.im]).collect(),
            embeddable: true,
            reconstruction_error,
            households: cohort.households.len(),
            dropped_households: cohort.dropped,
            class_sizes,
        },
        params,
        counts,
        eta,
        origin_year: cohort.waves[0],
        waves: cohort.waves.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{build_cohort, StandardizedRecord};
    use PovertyClass::*;

    fn path(classes: &[Option<PovertyClass>]) -> ClassPath {
        ClassPath {
            household: "h".into(),
            classes: classes.to_vec(),
        }
    }

    #[test]
    fn counts_single_path() {
        let k = count_transitions(&[path(&[Some(C1), Some(C2), Some(C2)])]).unwrap();
        let mut expected = [[0; 3]; 3];
        expected[0][1] = 1;
        expected[1][1] = 1;
        assert_eq!(k.k, expected);
        assert_eq!(count_transitions(&[]).unwrap().total(), 0);
        assert!(matches!(
            count_transitions(&[path(&[Some(C1), None])]),
            Err(Error::IncompletePath { .. })
        ));
    }

    #[test]
    fn count_total_is_households_times_steps() {
        let paths: Vec<_> = (0..914).map(|h| path(&[Some([C1, C2, C3][h % 3]); 8])).collect();
        assert_eq!(count_transitions(&paths).unwrap().total(), 6398);
    }

    #[test]
    fn transition_matrix_from_counts() {
        let c = TransitionCounts {
            k: [[37, 38, 25], [11, 38, 51], [1, 3, 96]],
        };
        let p = estimate_transition_matrix(&c).unwrap();
        assert_eq!(p.rows()[0], [0.37, 0.38, 0.25]);
        let id = TransitionCounts {
            k: [[5, 0, 0], [0, 5, 0], [0, 0, 5]],
        };
        assert_eq!(estimate_transition_matrix(&id).unwrap(), TransitionMatrix::identity());
        let empty = TransitionCounts {
            k: [[1, 0, 0], [0, 0, 0], [0, 0, 1]],
        };
        assert!(matches!(estimate_transition_matrix(&empty), Err(Error::EmptyRow { class: 2 })));
    }

    #[test]
    fn generator_requires_irreducibility() {
        assert!(matches!(
            estimate_generator(&TransitionMatrix::identity(), 2.0),
            Err(Error::NotIrreducible)
        ));
    }

    #[test]
    fn initial_distribution_examples() {
        let t = PovertyThresholds::new(10.0, 20.0).unwrap();
        let cs = |ys: &[f64]| CrossSection::new(1998, ys.iter().map(|&y| (String::new(), y)), &t).unwrap();
        assert_eq!(estimate_initial_distribution(&cs(&[30.0, 40.0])).unwrap().weights(), [0.0, 0.0, 1.0]);
        assert_eq!(
            estimate_initial_distribution(&cs(&[1.0, 2.0, 15.0, 30.0])).unwrap().weights(),
            [0.5, 0.25, 0.25]
        );
    }

    #[test]
    fn class_moments_of_small_pools() {
        let m = estimate_class_moments(
            [(1.0, C1), (3.0, C1), (5.0, C2), (7.0, C2), (100.0, C3)],
            PairDenominator::NSquared,
        )
        .unwrap();
        assert_eq!((m.y1, m.zbar1, m.q1), (2.0, 1.0, 1.0));
        assert_eq!(m.y2, 6.0);
        assert!(matches!(
            estimate_class_moments([(1.0, C1), (5.0, C2), (6.0, C2)], PairDenominator::NSquared),
            Err(Error::InsufficientClassData { class: 1, count: 1, needed: 2 })
        ));
    }

    fn cohort_from(paths: &[Vec<f64>]) -> Cohort {
        let t = PovertyThresholds::new(600.0, 1000.0).unwrap();
        let waves: Vec<i32> = (0..paths[0].len() as i32).map(|k| 2000 + 2 * k).collect();
        let records: Vec<_> = paths
            .iter()
            .enumerate()
            .flat_map(|(h, ys)| {
                ys.iter().enumerate().map(move |(k, &y)| StandardizedRecord {
                    household_id: format!("{h:03}"),
                    year: 2000 + 2 * k as i32,
                    components: 1,
                    raw_income: y,
                    income: y,
                })
            })
            .collect();
        build_cohort(&records, &waves, &t).unwrap()
    }

    #[test]
    fn pipeline_on_small_cohort() {
        // per origin class: 8 stay, one moves to each other class
        let level = |c: usize, k: usize| [100.0, 700.0, 2000.0][c] + k as f64;
        let mut paths = Vec::new();
        for from in 0..3 {
            for k in 0..10 {
                let to = match k {
                    8 => (from + 1) % 3,
                    9 => (from + 2) % 3,
                    _ => from,
                };
                paths.push(vec![level(from, k), level(to, k)]);
            }
        }
        let cohort = cohort_from(&paths);
        let r = estimate(&cohort, &EstimationOptions::default()).unwrap();
        assert_eq!(r.eta, 2.0);
        assert_eq!(r.counts.total(), 30);
        assert_eq!(r.diagnostics.p_hat.rows()[1], [0.1, 0.8, 0.1]);
        assert_eq!(r.origin_year, 2000);
        assert_eq!(r.params.mu.weights(), [1.0 / 3.0; 3]);
        assert!(r.diagnostics.reconstruction_error < 1e-8);
        assert_eq!(r.diagnostics.class_sizes, [20, 20, 20]);
        // log of 0.7·I + 0.1·J is ln(0.7)·(I − J/3)
        let off = -(0.7f64).ln() / 3.0 / 2.0;
        assert!((r.params.lambda.get(0, 1) - off).abs() < 1e-12);
        let m = r.params.moments;
        assert!(m.zbar1 * m.zbar1 <= m.q1 && m.zbar2 * m.zbar2 <= m.q2);
    }

    #[test]
    fn single_wave_window_is_rejected() {
        let cohort = cohort_from(&[vec![100.0, 700.0, 2000.0], vec![700.0, 100.0, 2000.0]]);
        let opts = EstimationOptions {
            window: Some((2000, 2000)),
            ..Default::default()
        };
        assert!(estimate(&cohort, &opts).is_err());
    }
}
