mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use povdyn::asymptotic::{self, IndexKind, IndexOptions, VarianceRule};
use povdyn::empirical::{classify, PovertyClass};
use povdyn::estimation::{estimate, EstimationOptions};
use povdyn::ingestion::{load_cohort, standardize, CohortOptions, PanelRecord, StandardizeRule, ThresholdTable};
use povdyn::markov::{eigen_decompose, matrix_exp, matrix_log_generator, Distribution3, GeneratorMatrix};
use povdyn::model::{
    mixture_cdf, sigma12_sq, sigma2_gini, theta, xbar12, ClassDistributionSpec, ClassLaw, ModelParams,
};
use povdyn::simulation::{index_value, limit_value, run_cohort, score_coverage, SimConfig};

use common::*;

fn generator(off: [f64; 6]) -> GeneratorMatrix {
    let [a, b, c, d, e, f] = off;
    GeneratorMatrix::from_rows([[-(a + b), a, b], [c, -(c + d), d], [e, f, -(e + f)]]).unwrap()
}

fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn log_exp_roundtrip(off in prop::array::uniform6(0.01f64..1.0), eta in 0.5f64..3.0) {
        let p = matrix_exp(&generator(off), eta).unwrap();
        let e = eigen_decompose(p.matrix()).unwrap();
        prop_assume!(e.values.iter().all(|v| v.im == 0.0 && v.re > 0.0));
        let back = matrix_exp(&matrix_log_generator(&p, eta).unwrap(), eta).unwrap();
        prop_assert!(max_abs_diff(back.rows(), p.rows()) < 1e-8);
    }

    #[test]
    fn semigroup(off in prop::array::uniform6(0.0f64..2.0), s in 0.0f64..10.0, t in 0.0f64..10.0) {
        let l = generator(off);
        let ps = matrix_exp(&l, s).unwrap().rows();
        let pt = matrix_exp(&l, t).unwrap().rows();
        let pst = matrix_exp(&l, s + t).unwrap().rows();
        prop_assert!(max_abs_diff(mat_mul(ps, pt), pst) < 1e-9);
    }

    #[test]
    fn exp_stays_stochastic(off in prop::array::uniform6(0.0f64..3.0)) {
        let l = generator(off);
        for k in 0..40 {
            let p = matrix_exp(&l, 0.5 * k as f64).unwrap();
            for row in p.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&x| x >= -1e-15));
            }
        }
    }

    #[test]
    fn pair_moment_bounds(
        lo1 in 0.0f64..1000.0, w1 in 10.0f64..2000.0,
        lo2 in 3300.0f64..4000.0, w2 in 10.0f64..1400.0,
        r1 in 1e-4f64..1e-2, r2 in 1e-4f64..1e-2, exp_law in any::<bool>(), t in 0.0f64..20.0,
    ) {
        let spec = if exp_law {
            ClassDistributionSpec {
                extreme: ClassLaw::TruncatedExponential { lo: lo1, hi: (lo1 + w1).min(Y_EP), rate: r1 },
                poor: ClassLaw::TruncatedExponential { lo: lo2, hi: (lo2 + w2).min(Y_P), rate: r2 },
                non_poor: None,
            }
        } else {
            ClassDistributionSpec {
                extreme: ClassLaw::Uniform { lo: lo1, hi: (lo1 + w1).min(Y_EP) },
                poor: ClassLaw::Uniform { lo: lo2, hi: (lo2 + w2).min(Y_P) },
                non_poor: None,
            }
        };
        let m = spec.moments().unwrap();
        prop_assert!(m.q1 >= m.zbar1 * m.zbar1 && m.q2 >= m.zbar2 * m.zbar2);
        let params = ModelParams { moments: m, ..uniform_params() };
        prop_assert!(sigma12_sq(&params, t).unwrap() >= 0.0);
        prop_assert!(sigma2_gini(&params, t).unwrap() >= 0.0);
    }
}

#[test]
fn mixture_cdf_shape() {
    let params = uniform_params();
    let spec = ClassDistributionSpec::uniform(&params.thresholds);
    for t in [0.0, 1.5, 7.0, 30.0] {
        let o = params.occupancy(t).unwrap();
        assert!((mixture_cdf(&params, &spec, t, -1.0).unwrap() - o.p3).abs() < 1e-15);
        assert_eq!(mixture_cdf(&params, &spec, t, Y_P).unwrap(), 1.0);
        assert_eq!(mixture_cdf(&params, &spec, t, 1e6).unwrap(), 1.0);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=600 {
            let v = mixture_cdf(&params, &spec, t, k as f64 * 10.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }
}

#[test]
fn quantities_are_continuous_in_t() {
    let params = uniform_params();
    let f = |t: f64| -> Vec<f64> {
        let v = asymptotic::evaluate(&params, t, &IndexOptions::default()).unwrap();
        vec![
            v.h,
            v.i.unwrap(),
            v.g.unwrap(),
            v.s,
            v.var_h,
            v.var_i.unwrap(),
            v.var_g.unwrap(),
            v.var_s,
            theta(&params, t).unwrap(),
            sigma2_gini(&params, t).unwrap(),
            xbar12(&params, t).unwrap(),
            sigma12_sq(&params, t).unwrap(),
        ]
    };
    for k in 0..=150 {
        let t = 0.1 * k as f64;
        for (a, b) in f(t).iter().zip(f(t + 1e-4)) {
            assert!((a - b).abs() <= 1e-2 * a.abs().max(1e-12), "t={t}: {a} vs {b}");
        }
    }
}

#[test]
fn indexes_settle_after_long_horizon() {
    let params = uniform_params();
    let opts = IndexOptions::default();
    let a = asymptotic::evaluate(&params, 500.0, &opts).unwrap();
    for t in [600.0, 1000.0, 5000.0] {
        let b = asymptotic::evaluate(&params, t, &opts).unwrap();
        assert!((a.h - b.h).abs() < 1e-8);
        assert!((a.i.unwrap() - b.i.unwrap()).abs() < 1e-8);
        assert!((a.g.unwrap() - b.g.unwrap()).abs() < 1e-8);
        assert!((a.s - b.s).abs() < 1e-8);
    }
}

#[test]
fn poor_income_variance_matches_monte_carlo() {
    let th = thresholds();
    let spec = ClassDistributionSpec::uniform(&th);
    let params = ModelParams {
        mu: Distribution3::new([0.5, 0.5, 0.0]).unwrap(),
        moments: spec.moments().unwrap(),
        ..uniform_params()
    };
    let exact = sigma12_sq(&params, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let class = if rng.random::<bool>() { 1 } else { 2 };
        let x = spec.law(class).unwrap().sample(&mut rng);
        s += x;
        s2 += x * x;
    }
    let mean = s / n as f64;
    let var = s2 / n as f64 - mean * mean;
    assert!((var / exact - 1.0).abs() < 0.01, "{var} vs {exact}");
    // Between-class part of the uniform mixture is (y2 - y1)^2 / 4.
    let between = (0.5 * (Y_EP + Y_P) - 0.5 * Y_EP).powi(2) / 4.0;
    assert!(exact > between);
}

fn uniform_sim(n_agents: usize, replications: usize, grid: Vec<f64>, seed: u64) -> SimConfig {
    let params = uniform_params();
    SimConfig {
        dist_spec: ClassDistributionSpec::uniform(&params.thresholds),
        params,
        n_agents,
        grid,
        replications,
        seed,
        alpha: 0.05,
        moments_from_spec: true,
        index_options: IndexOptions::default(),
    }
}

#[test]
fn large_cohort_gini_matches_limit() {
    let cfg = uniform_sim(100_000, 20, vec![4.0], 41);
    let runs = run_cohort(&cfg).unwrap();
    let g: Vec<f64> = runs.iter().map(|r| r.indexes[0].g.unwrap()).collect();
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    let sd = (g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (g.len() - 1) as f64).sqrt();
    let se = sd / (g.len() as f64).sqrt();
    let limit = asymptotic::g_inf(&cfg.effective_params().unwrap(), 4.0).unwrap();
    assert!((mean - limit).abs() <= 3.0 * se, "{mean} vs {limit} (se {se})");
}

#[test]
fn delta_method_gini_variance_matches_monte_carlo() {
    let mut cfg = uniform_sim(2000, 2000, (0..=7).map(|k| 2.0 * k as f64).collect(), 8);
    cfg.index_options.variance_rule = VarianceRule::DeltaMethod;
    let runs = run_cohort(&cfg).unwrap();
    let report = score_coverage(&cfg, &runs).unwrap();
    for row in report.rows.iter().filter(|r| r.index == IndexKind::G) {
        let ratio = row.var_z.unwrap() / row.variance_inf.unwrap();
        assert!((ratio - 1.0).abs() < 0.10, "t={}: ratio {ratio}", row.t);
    }
}

#[test]
fn empirical_indexes_stay_within_five_sigma() {
    let cfg = uniform_sim(2000, 200, vec![0.0, 3.0, 9.0], 99);
    let params = cfg.effective_params().unwrap();
    let limits: Vec<_> = cfg
        .grid
        .iter()
        .map(|&t| asymptotic::evaluate(&params, t, &IndexOptions::default()).unwrap())
        .collect();
    let runs = run_cohort(&cfg).unwrap();
    for kind in IndexKind::ALL {
        let mut inside = 0;
        let mut total = 0;
        for r in &runs {
            for (k, ix) in r.indexes.iter().enumerate() {
                let (v, var) = limit_value(&limits[k], kind).unwrap();
                let x = index_value(ix, kind).unwrap();
                total += 1;
                if (x - v).abs() <= 5.0 * (var / cfg.n_agents as f64).sqrt() {
                    inside += 1;
                }
            }
        }
        assert!(inside as f64 >= 0.99 * total as f64, "{kind}: {inside}/{total}");
    }
}

#[test]
fn estimated_moments_respect_pair_identities() {
    let dir = tempfile::tempdir().unwrap();
    let (panel, th) = write_synthetic_fixture(dir.path());
    let (cohort, _) = load_cohort(&panel, &th, &CohortOptions::default()).unwrap();
    let report = estimate(&cohort, &EstimationOptions::default()).unwrap();
    let m = &report.params.moments;
    for c in [1, 2] {
        let cm = m.class(c);
        let sd = (cm.second - cm.mean * cm.mean).sqrt();
        assert!(cm.zbar * cm.zbar <= cm.q);
        assert!(cm.zbar <= 2.0 * sd);
    }
    for row in report.diagnostics.p_hat.rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(report.diagnostics.reconstruction_error < 1e-8);
    let households = cohort.households.len() as u64;
    assert_eq!(report.counts.total(), households * (cohort.waves.len() as u64 - 1));
    assert_eq!(cohort.n_incomes(), cohort.households.len() * cohort.waves.len());
}

#[test]
fn income_at_its_threshold_standardizes_to_the_poverty_line() {
    let table = ThresholdTable::italy_1998_2012();
    let records: Vec<PanelRecord> = table
        .entries()
        .iter()
        .map(|e| PanelRecord {
            household_id: format!("{}-{}", e.components, e.year),
            year: e.year,
            components: e.components,
            income: e.threshold,
        })
        .collect();
    let (out, y_p) = standardize(&records, &table, &StandardizeRule::ThresholdRatio, 1, 1998).unwrap();
    let th = thresholds();
    assert_eq!(y_p, Y_P);
    for r in &out {
        assert_eq!(r.income, Y_P, "{} {}", r.components, r.year);
        assert_eq!(classify(r.income, &th).unwrap(), PovertyClass::C2);
    }
}
