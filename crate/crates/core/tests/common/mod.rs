#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use povdyn::ingestion::ThresholdTable;
use povdyn::markov::{Distribution3, GeneratorMatrix, TransitionMatrix};
use povdyn::model::{ClassDistributionSpec, ModelParams, PovertyThresholds};

pub const P_HAT: [[f64; 3]; 3] = [[0.37, 0.38, 0.25], [0.11, 0.38, 0.51], [0.01, 0.03, 0.96]];
pub const P_FORECAST: [[f64; 3]; 3] = [[0.32, 0.41, 0.27], [0.12, 0.37, 0.51], [0.01, 0.02, 0.97]];
pub const LAMBDA_HAT: [[f64; 3]; 3] = [[-0.59, 0.58, 0.01], [0.17, -0.59, 0.42], [0.0, 0.02, -0.02]];
pub const MU_HAT: [f64; 3] = [0.050, 0.068, 0.882];
pub const Y_EP: f64 = 3287.70;
pub const Y_P: f64 = 5479.50;
pub const YEARS: [i32; 8] = [1998, 2000, 2002, 2004, 2006, 2008, 2010, 2012];

pub fn thresholds() -> PovertyThresholds {
    PovertyThresholds::new(Y_EP, Y_P).unwrap()
}

pub fn paper_p() -> TransitionMatrix {
    TransitionMatrix::from_rows(P_HAT).unwrap()
}

pub fn paper_lambda() -> GeneratorMatrix {
    GeneratorMatrix::from_rows(LAMBDA_HAT).unwrap()
}

/// Printed generator and initial law with uniform class laws.
pub fn uniform_params() -> ModelParams {
    let th = thresholds();
    ModelParams {
        mu: Distribution3::new(MU_HAT).unwrap(),
        lambda: paper_lambda(),
        thresholds: th,
        moments: ClassDistributionSpec::uniform(&th).moments().unwrap(),
    }
}

pub fn col_sums(c: &[[i64; 3]; 3]) -> [i64; 3] {
    [0, 1, 2].map(|j| c.iter().map(|r| r[j]).sum())
}

/// Splits each class count `m[i]` along row `q[i]` by largest remainder.
fn round_rows(m: [i64; 3], q: &[[f64; 3]; 3]) -> [[i64; 3]; 3] {
    let mut out = [[0i64; 3]; 3];
    for i in 0..3 {
        let raw = q[i].map(|p| p * m[i] as f64);
        let mut row = raw.map(|x| x.floor() as i64);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
        let missing = m[i] - row.iter().sum::<i64>();
        for &j in order.iter().take(missing as usize) {
            row[j] += 1;
        }
        out[i] = row;
    }
    out
}

/// Per-step transition counts of a 10000-household, 8-wave panel. The
/// pooled counts equal `diag(k)·P_HAT` exactly and the first two steps
/// follow `P_FORECAST`.
pub fn synthetic_steps() -> (Vec<[i64; 3]>, Vec<[[i64; 3]; 3]>) {
    let n = 10_000i64;
    let mut m = vec![[500i64, 680, 8820]];
    let mut steps = Vec::new();
    let r: [[f64; 3]; 3] =
        std::array::from_fn(|i| std::array::from_fn(|j| P_HAT[i][j] + 0.4 * (P_HAT[i][j] - P_FORECAST[i][j])));
    for s in 0..5 {
        let q = if s < 2 { &P_FORECAST } else { &r };
        let c = round_rows(*m.last().unwrap(), q);
        m.push(col_sums(&c));
        steps.push(c);
    }
    // Step 5 steers the wave-6 marginals so every pooled row total is a
    // multiple of 100.
    let m5 = *m.last().unwrap();
    let mut c5 = round_rows(m5, &r);
    let natural = col_sums(&c5);
    let s: [i64; 3] = [0, 1, 2].map(|i| m.iter().map(|w| w[i]).sum());
    let mut m6 = [0i64; 3];
    for i in 0..3 {
        let need = (-s[i]).rem_euclid(100);
        m6[i] = natural[i] - (natural[i] - need).rem_euclid(100);
        if natural[i] - m6[i] > 50 {
            m6[i] += 100;
        }
    }
    m6[2] += n - m6.iter().sum::<i64>();
    loop {
        let cs = col_sums(&c5);
        let Some(over) = (0..3).find(|&j| cs[j] > m6[j]) else {
            break;
        };
        let under = (0..3).find(|&j| cs[j] < m6[j]).unwrap();
        let row = (0..3).max_by_key(|&i| c5[i][over]).unwrap();
        let amount = (cs[over] - m6[over]).min(m6[under] - cs[under]).min(c5[row][over]);
        c5[row][over] -= amount;
        c5[row][under] += amount;
    }
    m.push(m6);
    steps.push(c5);
    let k: [i64; 3] = [0, 1, 2].map(|i| s[i] + m6[i]);
    let mut c6 = [[0i64; 3]; 3];
    for i in 0..3 {
        assert_eq!(k[i] % 100, 0);
        for j in 0..3 {
            let pct = (P_HAT[i][j] * 100.0).round() as i64;
            c6[i][j] = k[i] / 100 * pct - steps.iter().map(|c| c[i][j]).sum::<i64>();
            assert!(c6[i][j] >= 0, "fixture step 6 negative at ({i},{j})");
        }
    }
    m.push(col_sums(&c6));
    steps.push(c6);
    (m, steps)
}

/// Standardized income of household `h` in class `c` (0-based).
pub fn standardized_income(class: usize, h: usize) -> f64 {
    match class {
        0 => 500.0 + (h % 50) as f64 * 50.0,
        1 => 3400.0 + (h % 40) as f64 * 50.0,
        _ => 6000.0 + (h % 100) as f64 * 100.0,
    }
}

/// Class paths realizing [`synthetic_steps`], one per household.
pub fn synthetic_paths() -> Vec<Vec<usize>> {
    let (m, steps) = synthetic_steps();
    let mut paths: Vec<Vec<usize>> = Vec::new();
    for (i, &count) in m[0].iter().enumerate() {
        for _ in 0..count {
            paths.push(vec![i]);
        }
    }
    for c in &steps {
        let mut quota = *c;
        for p in paths.iter_mut() {
            let from = *p.last().unwrap();
            let to = (0..3).find(|&j| quota[from][j] > 0).unwrap();
            quota[from][to] -= 1;
            p.push(to);
        }
    }
    paths
}

pub fn thresholds_csv(table: &ThresholdTable) -> String {
    let mut s = String::from("components,year,threshold\n");
    for e in table.entries() {
        let c = if e.components == 7 { "7+".to_string() } else { e.components.to_string() };
        writeln!(s, "{c},{},{}", e.year, e.threshold).unwrap();
    }
    s
}

/// Raw-income panel for the synthetic paths, de-standardized through the
/// built-in threshold table with household sizes 1–7.
pub fn synthetic_panel_csv() -> String {
    let table = ThresholdTable::italy_1998_2012();
    let base = table.get(1, 1998).unwrap();
    let mut s = String::from("household_id,year,components,income\n");
    for (h, path) in synthetic_paths().iter().enumerate() {
        let comps = 1 + (h % 7) as u32;
        for (w, &class) in path.iter().enumerate() {
            let year = YEARS[w];
            let raw = standardized_income(class, h) * table.get(comps, year).unwrap() / base;
            writeln!(s, "hh{h:05},{year},{comps},{raw}").unwrap();
        }
    }
    s
}

/// Writes the synthetic panel and threshold table into `dir`.
pub fn write_synthetic_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let panel = dir.join("panel.csv");
    let th = dir.join("thresholds.csv");
    std::fs::write(&panel, synthetic_panel_csv()).unwrap();
    std::fs::write(&th, thresholds_csv(&ThresholdTable::italy_1998_2012())).unwrap();
    (panel, th)
}

pub fn max_abs_diff(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
