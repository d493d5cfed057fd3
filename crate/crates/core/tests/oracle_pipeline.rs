//! End-to-end calibration against the synthetic oracle, where every bias
//! effect is known in closed form.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use cmbe_core::benchgen::{generate, GenConfig, Vocab};
use cmbe_core::calib::{
    calibrate, debias, group_moments, CalibrationProfile, GroupMoment, SelectionConfig, SolverOptions,
};
use cmbe_core::detect::Detectors;
use cmbe_core::oracle::{calibration_pool_groups, synthetic_pool, OracleConfig, SyntheticOracle};
use cmbe_core::source::predict_all;
use cmbe_core::{BiasFeature, BiasType, NliSample, PromptMode, ScoreVector};

fn four_types() -> BTreeSet<BiasType> {
    [
        BiasType::SentenceLength,
        BiasType::LexicalOverlap,
        BiasType::SemanticSimilarity,
        BiasType::SpeculativeWord,
    ]
    .into_iter()
    .collect()
}

fn fit(known: BTreeSet<BiasType>, seed: u64) -> (CalibrationProfile, Vec<NliSample>) {
    let pool = synthetic_pool(&calibration_pool_groups(12), 7);
    let oracle = SyntheticOracle::new(OracleConfig::five_bias_default()).unwrap();
    let (profile, set) = calibrate(
        &pool,
        &SelectionConfig::new(known, 15, 90, seed),
        &Detectors::offline_default(),
        &oracle,
        &PromptMode::ZeroShot,
        &SolverOptions::default(),
        4,
    )
    .unwrap();
    (profile, set.stage2)
}

/// Dense Gaussian elimination with partial pivoting on the normal
/// equations, written independently of the library solver.
fn normal_equations(groups: &[GroupMoment], profile: &CalibrationProfile) -> Vec<f64> {
    let types: Vec<BiasType> = profile.known_types.iter().copied().collect();
    let k = types.len();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for g in groups {
        let w = (g.count as f64).sqrt();
        for c in 0..3 {
            let mut a = vec![0.0; k];
            for f in &g.features {
                let col = types.iter().position(|t| *t == f.bias_type()).unwrap();
                a[col] += w * profile.feature_nies[f].nie.0[c];
            }
            rows.push((a, w * (g.mean[c] - 1.0 / 3.0)));
        }
    }
    let mut m = vec![vec![0.0; k + 1]; k];
    for (a, b) in &rows {
        for i in 0..k {
            for j in 0..k {
                m[i][j] += a[i] * a[j];
            }
            m[i][k] += a[i] * b;
        }
    }
    for col in 0..k {
        let pivot = (col..k).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, pivot);
        for r in 0..k {
            if r != col {
                let factor = m[r][col] / m[col][col];
                for c in col..=k {
                    m[r][c] -= factor * m[col][c];
                }
            }
        }
    }
    (0..k).map(|i| m[i][k] / m[i][i]).collect()
}

#[test]
fn weights_are_recovered_and_match_normal_equations() {
    let (profile, _) = fit(four_types(), 1);
    let truth = OracleConfig::five_bias_default();
    for (t, l) in &profile.lambdas {
        assert!((l - truth.weight(*t)).abs() < 1e-6, "{t}: {l}");
    }
    assert!(profile.diagnostics.group_count >= 4);
    assert!(!profile.diagnostics.rank_deficient);
    let dense = normal_equations(&profile.groups, &profile);
    for (l, d) in profile.lambdas.values().zip(dense) {
        assert!((l - d).abs() < 1e-9, "{l} vs {d}");
    }
}

#[test]
fn feature_effects_equal_injected_shifts() {
    let (profile, _) = fit(four_types(), 2);
    let truth = OracleConfig::five_bias_default();
    for (f, nie) in &profile.feature_nies {
        assert!(nie.nie.max_abs_diff(&truth.shifts[f]) < 1e-12, "{f}");
        assert!(nie.nie.sum().abs() < 1e-9);
    }
}

#[test]
fn stage2_group_means_debias_to_uniform() {
    let (profile, stage2) = fit(four_types(), 3);
    assert!(profile.diagnostics.residual_norm < 1e-9);
    let oracle = SyntheticOracle::new(OracleConfig::five_bias_default()).unwrap();
    let det = Detectors::offline_default();
    let preds = predict_all(&oracle, &stage2, &PromptMode::ZeroShot, 1).unwrap();
    let mut sums: BTreeMap<BTreeSet<BiasFeature>, (ScoreVector, usize)> = BTreeMap::new();
    for (s, p) in stage2.iter().zip(&preds) {
        let fs = s.features.clone().unwrap();
        let d = debias(p, &fs, &profile);
        let e = sums.entry(fs).or_insert((ScoreVector::ZERO, 0));
        e.0 = e.0 + d.scores;
        e.1 += 1;
    }
    for (fs, (sum, n)) in sums {
        let mean = (1.0 / n as f64) * sum;
        assert!(mean.max_abs_diff(&ScoreVector([1.0 / 3.0; 3])) < 1e-9, "{fs:?}: {mean:?}");
    }
    // Same groups as the library saw.
    assert_eq!(group_moments(&stage2, &preds, &profile.known_types, &det).unwrap(), profile.groups);
}

fn accuracy(samples: &[NliSample], profile: Option<&CalibrationProfile>) -> f64 {
    let oracle = SyntheticOracle::new(OracleConfig::five_bias_default()).unwrap();
    let preds = predict_all(&oracle, samples, &PromptMode::ZeroShot, 4).unwrap();
    let correct = samples
        .iter()
        .zip(&preds)
        .filter(|(s, p)| {
            let label = match profile {
                Some(prof) => debias(p, s.features.as_ref().unwrap(), prof).label,
                None => p.argmax(),
            };
            Some(label) == s.gold
        })
        .count();
    correct as f64 / samples.len() as f64
}

#[test]
fn debiasing_the_benchmark() {
    let ds = generate(&GenConfig::balanced(600, 42).unwrap(), &Vocab::builtin(), &Detectors::offline_default()).unwrap();
    let samples: Vec<NliSample> = ds.samples().cloned().collect();
    let vanilla = accuracy(&samples, None);
    let (cmbe4, _) = fit(four_types(), 4);
    let full = accuracy(&samples, Some(&cmbe4));
    let mut three = Vec::new();
    for drop in four_types() {
        let known: BTreeSet<_> = four_types().into_iter().filter(|t| *t != drop).collect();
        let (p, _) = fit(known, 5);
        three.push(accuracy(&samples, Some(&p)));
    }
    let partial = three.iter().sum::<f64>() / three.len() as f64;
    assert!(vanilla < 0.5, "{vanilla}");
    assert!(full >= 0.95, "{full}");
    assert!(full - partial >= 0.01 && partial - vanilla >= 0.01, "{vanilla} {partial} {full}");
}
