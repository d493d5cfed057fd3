//! Randomized invariant checks.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use cmbe_core::benchgen::{generate, GenConfig, Vocab};
use cmbe_core::calib::{
    debias, estimate_feature_nie, fit_lambdas, report_probabilities, select_calibration_samples, CalibrationProfile,
    FeatureNie, GroupMoment, SelectionConfig, SolverOptions,
};
use cmbe_core::detect::Detectors;
use cmbe_core::eval::{evaluate, Prediction, RunMeta};
use cmbe_core::oracle::{oracle_predict, synthetic_pool, OracleConfig, PoolGroup};
use cmbe_core::{
    dist_mean, BiasFeature, BiasType, Label, ModelError, NliSample, ProbDist, ProbSource, PromptMode, ScoreVector,
};
use proptest::prelude::*;

const CASES: u32 = 1000;

static VOCAB: LazyLock<Vocab> = LazyLock::new(Vocab::builtin);
static DETECTORS: LazyLock<Detectors> = LazyLock::new(Detectors::offline_default);

fn valid(d: &ProbDist) -> bool {
    let v = d.values();
    v.iter().all(|x| (0.0..=1.0).contains(x)) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

fn weights() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(0.0f64..10.0)
}

fn dist() -> impl Strategy<Value = ProbDist> {
    weights().prop_map(|w| ProbDist::from_weights(w).unwrap())
}

fn zero_sum() -> impl Strategy<Value = ScoreVector> {
    prop::array::uniform3(-0.3f64..0.3).prop_map(|v| {
        let m = v.iter().sum::<f64>() / 3.0;
        ScoreVector(v.map(|x| x - m))
    })
}

fn label() -> impl Strategy<Value = Label> {
    (0usize..3).prop_map(|i| Label::ALL[i])
}

fn feature_set() -> impl Strategy<Value = BTreeSet<BiasFeature>> {
    // At most one feature per type.
    prop::array::uniform5(0usize..3).prop_map(|picks| {
        BiasType::ALL
            .iter()
            .zip(picks)
            .filter_map(|(t, p)| t.features().get(p).copied())
            .collect()
    })
}

/// Replays a fixed distribution per sample id.
struct Table(BTreeMap<String, ProbDist>);

impl ProbSource for Table {
    fn source_id(&self) -> String {
        "table".into()
    }
    fn predict(&self, s: &NliSample, _: &PromptMode) -> Result<ProbDist, ModelError> {
        Ok(self.0[&s.id])
    }
}

fn profile_with(nies: &BTreeMap<BiasFeature, ScoreVector>, lambdas: [f64; 5]) -> CalibrationProfile {
    let mut p = CalibrationProfile::zero(BiasType::ALL.into_iter().collect());
    for (f, v) in nies {
        p.feature_nies.insert(*f, FeatureNie { feature: *f, nie: *v, n_used: 3 });
    }
    for (t, l) in BiasType::ALL.into_iter().zip(lambdas) {
        p.lambdas.insert(t, l);
    }
    p
}

fn nie_map() -> impl Strategy<Value = BTreeMap<BiasFeature, ScoreVector>> {
    prop::collection::vec(zero_sum(), 9)
        .prop_map(|v| BiasFeature::ALL.into_iter().zip(v).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn normalized_weights_are_distributions(w in prop::array::uniform3(-5.0f64..10.0)) {
        prop_assert!(valid(&ProbDist::from_weights(w).unwrap()));
        prop_assert!(valid(&report_probabilities(&ScoreVector(w))));
    }

    #[test]
    fn means_are_distributions(ds in prop::collection::vec(dist(), 1..40)) {
        prop_assert!(valid(&dist_mean(&ds).unwrap()));
    }

    #[test]
    fn oracle_outputs_are_distributions(
        q in 0.34f64..=1.0,
        shifts in prop::collection::vec(zero_sum(), 9),
        w in prop::array::uniform5(-2.0f64..3.0),
        noise in 0.0f64..0.2,
        seed in any::<u64>(),
        gold in label(),
        features in feature_set(),
    ) {
        let cfg = OracleConfig {
            base_confidence: q,
            shifts: BiasFeature::ALL.into_iter().zip(shifts).collect(),
            weights: BiasType::ALL.into_iter().zip(w).collect(),
            noise_seed: seed,
            noise_scale: noise,
        };
        let s = NliSample::new("x", "p", "h").unwrap().with_gold(gold).with_features(features);
        let d = oracle_predict(&s, &cfg).unwrap();
        prop_assert!(valid(&d));
        prop_assert_eq!(d, oracle_predict(&s, &cfg).unwrap());
    }

    #[test]
    fn unbiased_oracle_is_always_right(q in 0.34f64..=1.0, gold in label(), features in feature_set()) {
        let s = NliSample::new("x", "p", "h").unwrap().with_gold(gold).with_features(features);
        prop_assert_eq!(oracle_predict(&s, &OracleConfig::unbiased(q)).unwrap().argmax(), gold);
    }

    #[test]
    fn feature_effects_sum_to_zero(ds in prop::collection::vec(dist(), 1..30)) {
        let samples: Vec<NliSample> = (0..ds.len()).map(|i| NliSample::new(i.to_string(), "p", "h").unwrap()).collect();
        let table = Table(samples.iter().map(|s| s.id.clone()).zip(ds).collect());
        let nie = estimate_feature_nie(BiasFeature::Speculative, &samples, &table, &PromptMode::ZeroShot, 1).unwrap();
        prop_assert!(nie.nie.sum().abs() <= 1e-9);
        prop_assert_eq!(nie.n_used, samples.len());
    }

    #[test]
    fn debias_argmax_ignores_constant_offsets(
        d in dist(),
        nies in nie_map(),
        lambdas in prop::array::uniform5(-2.0f64..2.0),
        features in feature_set(),
        c in -1.0f64..1.0,
    ) {
        let p = profile_with(&nies, lambdas);
        // Adding c to every component of every effect moves the combined
        // effect along (1, 1, 1).
        let shifted: BTreeMap<_, _> = nies.iter().map(|(f, v)| (*f, *v + ScoreVector([c; 3]))).collect();
        let q = profile_with(&shifted, lambdas);
        let a = debias(&d, &features, &p);
        let b = debias(&d, &features, &q);
        let offset = b.scores - a.scores;
        prop_assert!((offset.0[0] - offset.0[1]).abs() < 1e-12 && (offset.0[1] - offset.0[2]).abs() < 1e-12);
        // Argmax ties are broken by index, so compare away from exact ties.
        let s = a.scores.0;
        let mut sorted = s;
        sorted.sort_by(|x, y| y.total_cmp(x));
        if sorted[0] - sorted[1] > 1e-9 {
            prop_assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn zero_profile_changes_nothing(d in dist(), features in feature_set(), lambdas in prop::array::uniform5(-3.0f64..3.0)) {
        let zero: BTreeMap<_, _> = BiasFeature::ALL.into_iter().map(|f| (f, ScoreVector::ZERO)).collect();
        let out = debias(&d, &features, &profile_with(&zero, lambdas));
        prop_assert_eq!(out.label, d.argmax());
        prop_assert_eq!(out.scores, d.to_scores());
    }

    #[test]
    fn least_squares_matches_normal_equations(
        nies in nie_map(),
        truth in prop::array::uniform4(-2.0f64..2.0),
        noise in prop::collection::vec(prop::array::uniform3(-0.01f64..0.01), 11),
        counts in prop::collection::vec(1usize..20, 11),
    ) {
        let known: BTreeSet<BiasType> = BiasType::ALL[..4].iter().copied().collect();
        let four: Vec<BiasFeature> = BiasFeature::FIVE_BIAS[..4].to_vec();
        let feature_nies: BTreeMap<_, _> = four.iter().map(|f| (*f, FeatureNie { feature: *f, nie: nies[f], n_used: 3 })).collect();
        let mut groups = Vec::new();
        let mut k = 0;
        for mask in 1u32..16 {
            if mask.count_ones() < 2 { continue; }
            let fs: BTreeSet<_> = four.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, f)| *f).collect();
            let mut mean = [1.0 / 3.0; 3];
            for f in &fs {
                let t = f.bias_type();
                let col = BiasType::ALL.iter().position(|x| *x == t).unwrap();
                for c in 0..3 { mean[c] += truth[col] * nies[f].0[c]; }
            }
            for c in 0..3 { mean[c] += noise[k][c]; }
            groups.push(GroupMoment { features: fs, count: counts[k], mean });
            k += 1;
        }
        let fit = fit_lambdas(&groups, &feature_nies, &known, &SolverOptions::default()).unwrap();
        if !fit.diagnostics.rank_deficient && fit.diagnostics.condition_number.unwrap() < 1e4 {
            let dense = normal_equations(&groups, &feature_nies);
            for (l, d) in fit.lambdas.values().zip(&dense) {
                prop_assert!((l - d).abs() < 1e-9, "{} vs {}", l, d);
            }
        }
    }

    #[test]
    fn accuracy_is_one_minus_weighted_error(golds in prop::collection::vec(label(), 1..60), preds in prop::collection::vec(label(), 60)) {
        let ds: Vec<NliSample> = golds.iter().enumerate().map(|(i, g)| NliSample::new(i.to_string(), "p", "h").unwrap().with_gold(*g)).collect();
        let p: Vec<Prediction> = ds.iter().zip(&preds).map(|(s, l)| Prediction { id: s.id.clone(), label: *l }).collect();
        let r = evaluate(&ds, &p, RunMeta::default()).unwrap();
        let weighted: f64 = r.per_label.iter().filter_map(|b| b.error_rate.map(|e| e * b.total as f64)).sum::<f64>() / ds.len() as f64;
        prop_assert!((r.accuracy - (1.0 - weighted)).abs() < 1e-12);
    }

    #[test]
    fn pools_and_selection_are_seed_deterministic(seed in any::<u64>(), per_label in 3usize..6) {
        let groups: Vec<PoolGroup> = cmbe_core::oracle::calibration_pool_groups(per_label);
        let pool = synthetic_pool(&groups, seed);
        prop_assert_eq!(&pool, &synthetic_pool(&groups, seed));
        let det = &*DETECTORS;
        let known: BTreeSet<BiasType> = BiasType::ALL[..4].iter().copied().collect();
        let cfg = SelectionConfig::new(known.clone(), 9, 30, seed);
        let a = select_calibration_samples(&pool, &cfg, det).unwrap();
        prop_assert_eq!(&a, &select_calibration_samples(&pool, &cfg, det).unwrap());
        // Stage-1 purity against the known types.
        for (f, samples) in &a.stage1 {
            for s in samples {
                let known_fs = cmbe_core::bias::restrict_to_known(s.features.as_ref().unwrap(), &known);
                prop_assert_eq!(known_fs, [*f].into_iter().collect::<BTreeSet<_>>());
            }
        }
        for s in &a.stage2 {
            prop_assert!(s.features.as_ref().unwrap().len() >= 2);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    /// Generation is a function of the seed, and every generated sample
    /// re-detects with exactly its annotated features.
    #[test]
    fn generation_is_deterministic_and_pure(seed in any::<u64>()) {
        let det = &*DETECTORS;
        let cfg = GenConfig::balanced(3, seed).unwrap();
        let a = generate(&cfg, &VOCAB, det).unwrap();
        let b = generate(&cfg, &VOCAB, det).unwrap();
        prop_assert_eq!(&a.records, &b.records);
        for s in a.samples() {
            let found = det.detect(s).unwrap();
            prop_assert_eq!(Some(&found), s.features.as_ref());
            let types: BTreeSet<_> = found.iter().map(|f| f.bias_type()).collect();
            prop_assert_eq!(types.len(), found.len());
            prop_assert_eq!(found, BiasFeature::FIVE_BIAS.into_iter().collect::<BTreeSet<_>>());
        }
    }
}

/// Dense normal equations with partial pivoting, independent of the library.
fn normal_equations(groups: &[GroupMoment], nies: &BTreeMap<BiasFeature, FeatureNie>) -> Vec<f64> {
    let types = &BiasType::ALL[..4];
    let k = types.len();
    let mut m = vec![vec![0.0; k + 1]; k];
    for g in groups {
        let w = (g.count as f64).sqrt();
        for c in 0..3 {
            let mut a = vec![0.0; k];
            for f in &g.features {
                let col = types.iter().position(|t| *t == f.bias_type()).unwrap();
                a[col] += w * nies[f].nie.0[c];
            }
            let b = w * (g.mean[c] - 1.0 / 3.0);
            for i in 0..k {
                for j in 0..k {
                    m[i][j] += a[i] * a[j];
                }
                m[i][k] += a[i] * b;
            }
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
