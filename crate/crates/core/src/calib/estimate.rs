use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CalibError;
use crate::bias::{restrict_to_known, BiasFeature, BiasType};
use crate::detect::Detectors;
use crate::label::{dist_mean, ProbDist, ScoreVector};
use crate::sample::NliSample;
use crate::source::{predict_all, ProbSource, PromptMode};

/// Average indirect effect of one bias feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNie {
    pub feature: BiasFeature,
    pub nie: ScoreVector,
    pub n_used: usize,
}

/// Mean predicted probabilities minus the uniform distribution.
///
/// Takes raw components so published (rounded) means can be fed in as is.
pub fn nie_from_mean(mean: [f64; 3]) -> ScoreVector {
    ScoreVector(mean.map(|m| m - 1.0 / 3.0))
}

pub fn estimate_feature_nie<S: ProbSource + ?Sized>(
    feature: BiasFeature,
    samples: &[NliSample],
    model: &S,
    mode: &PromptMode,
    parallelism: usize,
) -> Result<FeatureNie, CalibError> {
    if samples.is_empty() {
        return Err(CalibError::EmptyStage1(feature));
    }
    let preds = predict_all(model, samples, mode, parallelism)?;
    let mean = dist_mean(&preds)?;
    Ok(FeatureNie {
        feature,
        nie: nie_from_mean(mean.values()),
        n_used: samples.len(),
    })
}

/// Mean prediction over the stage-2 samples that share one known-feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMoment {
    #[serde(with = "crate::bias::feature_set_serde")]
    pub features: BTreeSet<BiasFeature>,
    pub count: usize,
    pub mean: [f64; 3],
}

/// Groups predictions by each sample's known-feature set.
pub fn group_moments(
    samples: &[NliSample],
    predictions: &[ProbDist],
    known: &BTreeSet<BiasType>,
    detectors: &Detectors,
) -> Result<Vec<GroupMoment>, CalibError> {
    if samples.len() != predictions.len() {
        return Err(CalibError::LengthMismatch {
            samples: samples.len(),
            predictions: predictions.len(),
        });
    }
    let mut groups: BTreeMap<BTreeSet<BiasFeature>, Vec<ProbDist>> = BTreeMap::new();
    for (s, p) in samples.iter().zip(predictions) {
        let features = restrict_to_known(&detectors.features_of(s)?, known);
        groups.entry(features).or_default().push(*p);
    }
    groups
        .into_iter()
        .map(|(features, dists)| {
            let n = dists.len() as f64;
            let mut acc = [0.0; 3];
            for d in &dists {
                for (a, v) in acc.iter_mut().zip(d.values()) {
                    *a += v;
                }
            }
            Ok(GroupMoment {
                features,
                count: dists.len(),
                mean: acc.map(|a| a / n),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Ridge penalty on the weights; 0 means plain least squares.
    pub ridge: f64,
    /// Singular values below `rank_tolerance * largest` count as zero.
    pub rank_tolerance: f64,
    /// Weight each group's equations by the square root of its size.
    pub weight_by_group_size: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            ridge: 0.0,
            rank_tolerance: 1e-10,
            weight_by_group_size: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub residual_norm: f64,
    pub group_count: usize,
    pub equation_count: usize,
    pub unknowns: usize,
    pub rank: usize,
    /// Largest over smallest singular value; absent when the smallest is 0.
    pub condition_number: Option<f64>,
    pub singular_values: Vec<f64>,
    /// Set when the system could not pin down every weight; the reported
    /// weights are then the minimum-norm solution.
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambdas: BTreeMap<BiasType, f64>,
    pub groups: Vec<GroupMoment>,
    pub diagnostics: SolveDiagnostics,
}

/// Builds the stacked per-group moment system `A x = b` over the types in
/// `types`: for group g and label c,
/// `sum_t x_t * sum_{f in g, type(f) = t} nie_f[c] = mean_g[c] - 1/3`.
pub(crate) fn moment_system(
    groups: &[GroupMoment],
    nies: &BTreeMap<BiasFeature, FeatureNie>,
    types: &[BiasType],
    weighted: bool,
) -> Result<(DMatrix<f64>, DVector<f64>), CalibError> {
    let rows = groups.len() * 3;
    let mut a = DMatrix::zeros(rows, types.len());
    let mut b = DVector::zeros(rows);
    for (g, group) in groups.iter().enumerate() {
        let w = if weighted { (group.count as f64).sqrt() } else { 1.0 };
        for f in &group.features {
            let nie = nies.get(f).ok_or(CalibError::UnknownFeature(*f))?;
            let col = types
                .iter()
                .position(|t| *t == f.bias_type())
                .ok_or(CalibError::UnknownFeature(*f))?;
            for c in 0..3 {
                a[(g * 3 + c, col)] += w * nie.nie.0[c];
            }
        }
        for c in 0..3 {
            b[g * 3 + c] = w * (group.mean[c] - 1.0 / 3.0);
        }
    }
    Ok((a, b))
}

/// Solves the stacked group system by SVD least squares (minimum norm when
/// rank deficient), with optional ridge augmentation.
pub fn fit_lambdas(
    groups: &[GroupMoment],
    nies: &BTreeMap<BiasFeature, FeatureNie>,
    known: &BTreeSet<BiasType>,
    opts: &SolverOptions,
) -> Result<LambdaFit, CalibError> {
    let types: Vec<BiasType> = known.iter().copied().collect();
    let k = types.len();
    let (a, b) = moment_system(groups, nies, &types, opts.weight_by_group_size)?;
    let equation_count = a.nrows();

    let (a_aug, b_aug) = if opts.ridge > 0.0 {
        let mut a_aug = DMatrix::zeros(equation_count + k, k);
        a_aug.rows_mut(0, equation_count).copy_from(&a);
        let mut b_aug = DVector::zeros(equation_count + k);
        b_aug.rows_mut(0, equation_count).copy_from(&b);
        for i in 0..k {
            a_aug[(equation_count + i, i)] = opts.ridge.sqrt();
        }
        (a_aug, b_aug)
    } else {
        (a.clone(), b.clone())
    };

    let (x, singular_values, rank) = if a_aug.nrows() == 0 || k == 0 {
        (DVector::zeros(k), Vec::new(), 0)
    } else {
        let svd = a_aug.svd(true, true);
        let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        let largest = sv.iter().copied().fold(0.0, f64::max);
        let eps = opts.rank_tolerance * largest;
        let rank = sv.iter().filter(|s| **s > eps).count();
        let x = if rank == 0 {
            DVector::zeros(k)
        } else {
            svd.solve(&b_aug, eps).map_err(|e| CalibError::InvalidProfile(e.to_string()))?
        };
        (x, sv, rank)
    };

    let smallest = if singular_values.len() < k {
        0.0
    } else {
        singular_values.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let largest = singular_values.iter().copied().fold(0.0, f64::max);
    let condition_number = (smallest > 0.0).then(|| largest / smallest);
    let residual_norm = if equation_count == 0 { 0.0 } else { (&a * &x - &b).norm() };

    Ok(LambdaFit {
        lambdas: types.iter().copied().zip(x.iter().copied()).collect(),
        groups: groups.to_vec(),
        diagnostics: SolveDiagnostics {
            residual_norm,
            group_count: groups.len(),
            equation_count,
            unknowns: k,
            rank,
            condition_number,
            singular_values,
            rank_deficient: rank < k,
        },
    })
}

/// Predicts the stage-2 samples, groups them and fits the type weights.
#[allow(clippy::too_many_arguments)]
pub fn estimate_lambdas<S: ProbSource + ?Sized>(
    stage2: &[NliSample],
    model: &S,
    mode: &PromptMode,
    nies: &BTreeMap<BiasFeature, FeatureNie>,
    known: &BTreeSet<BiasType>,
    detectors: &Detectors,
    opts: &SolverOptions,
    parallelism: usize,
) -> Result<LambdaFit, CalibError> {
    for s in stage2 {
        for f in restrict_to_known(&detectors.features_of(s)?, known) {
            if !nies.contains_key(&f) {
                return Err(CalibError::Uncovered { id: s.id.clone(), feature: f });
            }
        }
    }
    let preds = predict_all(model, stage2, mode, parallelism)?;
    let groups = group_moments(stage2, &preds, known, detectors)?;
    fit_lambdas(&groups, nies, known, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn nie(feature: BiasFeature, v: [f64; 3]) -> (BiasFeature, FeatureNie) {
        (feature, FeatureNie { feature, nie: ScoreVector(v), n_used: 15 })
    }

    fn group(features: &[BiasFeature], mean: [f64; 3]) -> GroupMoment {
        GroupMoment {
            features: features.iter().copied().collect(),
            count: 3,
            mean,
        }
    }

    fn two_types() -> (BTreeMap<BiasFeature, FeatureNie>, BTreeSet<BiasType>) {
        let nies = [
            nie(BiasFeature::HypShorter, [0.1, -0.1, 0.0]),
            nie(BiasFeature::Speculative, [0.06, 0.0, -0.06]),
        ]
        .into_iter()
        .collect();
        let known = [BiasType::SentenceLength, BiasType::SpeculativeWord].into_iter().collect();
        (nies, known)
    }

    #[test]
    fn table_row_arithmetic() {
        let v = nie_from_mean([0.437, 0.217, 0.344]);
        let printed = [0.1037, -0.1163, 0.0107];
        for (got, want) in v.0.iter().zip(printed) {
            assert_abs_diff_eq!(*got, want, epsilon = 5e-5);
        }
    }

    #[test]
    fn exact_two_type_solve() {
        let (nies, known) = two_types();
        let u = 1.0 / 3.0;
        let ab = [u + 0.8 * 0.1 + 0.06, u - 0.8 * 0.1, u - 0.06];
        let a = [u + 0.8 * 0.1, u - 0.8 * 0.1, u];
        let groups = [
            group(&[BiasFeature::HypShorter, BiasFeature::Speculative], ab),
            group(&[BiasFeature::HypShorter], a),
        ];
        let fit = fit_lambdas(&groups, &nies, &known, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.lambdas[&BiasType::SentenceLength], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.lambdas[&BiasType::SpeculativeWord], 1.0, epsilon = 1e-12);
        assert!(fit.diagnostics.residual_norm < 1e-12);
        assert!(!fit.diagnostics.rank_deficient);
        assert_eq!(fit.diagnostics.rank, 2);
    }

    #[test]
    fn uniform_model_gives_zero_weights() {
        let (nies, known) = two_types();
        let u = [1.0 / 3.0; 3];
        let groups = [group(&[BiasFeature::HypShorter, BiasFeature::Speculative], u)];
        let fit = fit_lambdas(&groups, &nies, &known, &SolverOptions::default()).unwrap();
        assert!(fit.lambdas.values().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        // One group with both features: two unknowns, one direction.
        let (mut nies, known) = two_types();
        nies.get_mut(&BiasFeature::Speculative).unwrap().nie = ScoreVector([0.1, -0.1, 0.0]);
        let u = 1.0 / 3.0;
        let groups = [group(&[BiasFeature::HypShorter, BiasFeature::Speculative], [u + 0.2, u - 0.2, u])];
        let fit = fit_lambdas(&groups, &nies, &known, &SolverOptions::default()).unwrap();
        assert!(fit.diagnostics.rank_deficient);
        assert_eq!(fit.diagnostics.rank, 1);
        assert!(fit.diagnostics.condition_number.is_none());
        // Minimum norm splits the effect evenly.
        assert_abs_diff_eq!(fit.lambdas[&BiasType::SentenceLength], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.lambdas[&BiasType::SpeculativeWord], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ridge_shrinks() {
        let (nies, known) = two_types();
        let u = 1.0 / 3.0;
        let groups = [
            group(&[BiasFeature::HypShorter, BiasFeature::Speculative], [u + 0.14, u - 0.08, u - 0.06]),
            group(&[BiasFeature::HypShorter], [u + 0.08, u - 0.08, u]),
        ];
        let plain = fit_lambdas(&groups, &nies, &known, &SolverOptions::default()).unwrap();
        let ridged = fit_lambdas(&groups, &nies, &known, &SolverOptions { ridge: 0.01, ..Default::default() }).unwrap();
        let norm = |f: &LambdaFit| f.lambdas.values().map(|v| v * v).sum::<f64>();
        assert!(norm(&ridged) < norm(&plain));
    }

    #[test]
    fn no_groups() {
        let (nies, known) = two_types();
        let fit = fit_lambdas(&[], &nies, &known, &SolverOptions::default()).unwrap();
        assert!(fit.diagnostics.rank_deficient);
        assert!(fit.lambdas.values().all(|l| *l == 0.0));
    }

    #[test]
    fn uncovered_feature_is_an_error() {
        let (nies, known) = two_types();
        let groups = [group(&[BiasFeature::SemsimHigh], [0.4, 0.3, 0.3])];
        let known: BTreeSet<_> = known.into_iter().chain([BiasType::SemanticSimilarity]).collect();
        assert!(matches!(
            fit_lambdas(&groups, &nies, &known, &SolverOptions::default()),
            Err(CalibError::UnknownFeature(BiasFeature::SemsimHigh))
        ));
    }
}
