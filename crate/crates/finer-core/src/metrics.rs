//! Explanation quality measurement: per-sample prediction drop under IC
//! masking, the zero-nullification baseline metric, averaged masked
//! prediction across explainers, top-k intersection size, and ROC/AUC
//! against planted ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{ICAttribution, MaskContext};
use crate::ic::{select_roi, Roi, RoiMode};
use crate::matrix::Matrix;
use crate::net::Model;

/// Model prediction after zero-nullifying the k most important cells of
/// a feature-level attribution. Retained as the feature-level baseline;
/// the IC metrics below replace cells with benign content instead.
pub fn da_k(model: &Model, x_v: &Matrix, e_v: &Matrix, k: usize) -> Result<f64> {
    if e_v.shape() != x_v.shape() {
        return Err(Error::data("attribution shape must match the input"));
    }
    let mut cells: Vec<(usize, usize)> = (0..x_v.rows())
        .flat_map(|r| (0..x_v.cols()).map(move |c| (r, c)))
        .collect();
    // Ties break by row then column so the choice is deterministic.
    cells.sort_by(|&(r1, c1), &(r2, c2)| {
        e_v.get(r2, c2)
            .total_cmp(&e_v.get(r1, c1))
            .then(r1.cmp(&r2))
            .then(c1.cmp(&c2))
    });
    let mut nullified = x_v.clone();
    for &(r, c) in cells.iter().take(k.min(cells.len())) {
        nullified.set(r, c, 0.0);
    }
    let p = model.prob(&nullified)?;
    debug_assert!((0.0..=1.0).contains(&p));
    Ok(p)
}

/// Model prediction drop at workload k: `f(x) - f(x with the top-k
/// scored components masked)`. Always in `[-1, 1]`; k clamps to the
/// component count.
pub fn mpd_k(model: &Model, ctx: &MaskContext<'_>, scores: &[f64], k: usize) -> Result<f64> {
    let roi = select_roi(scores, RoiMode::TopK(k))?;
    let masked = ctx.masked(&roi)?;
    let drop = model.prob(&ctx.x_v.matrix)? - model.prob(&masked.matrix)?;
    debug_assert!((-1.0..=1.0).contains(&drop));
    Ok(drop)
}

/// Mean masked prediction over (explainer, sample) pairs at a deduction
/// percentile; lower means the model is easier to explain away.
pub fn amp(
    model: &Model,
    items: &[(MaskContext<'_>, Vec<ICAttribution>)],
    percentile: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ctx, attributions) in items {
        for attribution in attributions {
            let roi = select_roi(&attribution.scores, RoiMode::TopPercentile(percentile))?;
            let masked = ctx.masked(&roi)?;
            total += model.prob(&masked.matrix)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::data("amp needs at least one explained sample"));
    }
    let value = total / count as f64;
    debug_assert!((0.0..=1.0).contains(&value));
    Ok(value)
}

/// Mean MPD over the samples with more than `k` components.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityReport {
    pub explainer: String,
    pub k: usize,
    /// `(sample id, MPD)` for each included sample.
    pub per_sample: Vec<(String, f64)>,
    pub mean: f64,
    /// Samples excluded because their component count was `<= k`.
    pub filtered: usize,
}

pub fn global_fidelity(
    model: &Model,
    label: &str,
    items: &[(String, MaskContext<'_>, Vec<f64>)],
    k: usize,
) -> Result<FidelityReport> {
    let mut per_sample = Vec::new();
    let mut filtered = 0usize;
    for (id, ctx, scores) in items {
        if ctx.ic_count() <= k {
            filtered += 1;
            continue;
        }
        per_sample.push((id.clone(), mpd_k(model, ctx, scores, k)?));
    }
    let mean = if per_sample.is_empty() {
        f64::NAN
    } else {
        per_sample.iter().map(|(_, v)| v).sum::<f64>() / per_sample.len() as f64
    };
    Ok(FidelityReport {
        explainer: label.to_string(),
        k,
        per_sample,
        mean,
        filtered,
    })
}

/// Fraction of shared components between two top-k explanations.
pub fn intersection_size(e1: &[f64], e2: &[f64], k: usize) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::data("attributions must cover the same components"));
    }
    let a = match select_roi(e1, RoiMode::TopK(k))? {
        Roi::Ics(s) => s,
        Roi::Cells(_) => unreachable!(),
    };
    let b = match select_roi(e2, RoiMode::TopK(k))? {
        Roi::Ics(s) => s,
        Roi::Cells(_) => unreachable!(),
    };
    let shared = a.intersection(&b).count();
    let value = shared as f64 / k as f64;
    debug_assert!((0.0..=1.0).contains(&value));
    Ok(value)
}

/// One point of an ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub curve: Vec<RocPoint>,
}

/// AUC over pooled `(score, is_positive)` pairs, with midrank tie
/// handling (equivalent to trapezoidal interpolation of the ROC curve).
/// Errs when either class is absent.
pub fn roc_auc(pairs: &[(f64, bool)]) -> Result<RocResult> {
    let positives = pairs.iter().filter(|(_, t)| *t).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::data(
            "roc needs at least one positive and one negative",
        ));
    }

    // Midranks over ascending scores.
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].0 == pairs[order[i]].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if pairs[idx].1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let auc = (rank_sum_pos - positives as f64 * (positives as f64 + 1.0) / 2.0)
        / (positives as f64 * negatives as f64);

    // Curve: sweep thresholds from high to low over distinct scores.
    let mut curve = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut idx = order.len();
    while idx > 0 {
        let score = pairs[order[idx - 1]].0;
        while idx > 0 && pairs[order[idx - 1]].0 == score {
            if pairs[order[idx - 1]].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx -= 1;
        }
        curve.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    debug_assert!((0.0..=1.0).contains(&auc));
    Ok(RocResult { auc, curve })
}

/// Per-sample localization AUC against ground-truth component sets.
/// Samples without both classes are excluded and counted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// `(sample id, auc)` for each scorable sample.
    pub per_sample: Vec<(String, f64)>,
    pub mean: f64,
    pub excluded: usize,
}

pub fn localization_auc(samples: &[(String, Vec<f64>, Vec<bool>)]) -> LocalizationReport {
    let mut per_sample = Vec::new();
    let mut excluded = 0usize;
    for (id, scores, truth) in samples {
        debug_assert_eq!(scores.len(), truth.len());
        let pairs: Vec<(f64, bool)> = scores.iter().copied().zip(truth.iter().copied()).collect();
        match roc_auc(&pairs) {
            Ok(r) => per_sample.push((id.clone(), r.auc)),
            Err(_) => excluded += 1,
        }
    }
    let mean = if per_sample.is_empty() {
        f64::NAN
    } else {
        per_sample.iter().map(|(_, v)| v).sum::<f64>() / per_sample.len() as f64
    };
    LocalizationReport {
        per_sample,
        mean,
        excluded,
    }
}

/// A point of an evaluation curve (workload k or percentile p on the x
/// axis, a mean metric on the y axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::ExplainerId;
    use crate::ic::{ic_indicator, BaselineSet};
    use crate::net::LayerSpec;
    use crate::task::{generate_dataset, TaskSpec, Vectorizer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fix {
        vectorizer: Vectorizer,
        baselines: BaselineSet,
        samples: Vec<crate::task::ProblemSample>,
        model: Model,
    }

    fn fix(seed: u64) -> Fix {
        let spec = TaskSpec {
            train_benign: 24,
            train_risk: 16,
            test_benign: 4,
            test_risk: 4,
            ics_per_sample: (4, 8),
            ..TaskSpec::default()
        };
        let data = generate_dataset(&spec, seed).unwrap();
        let benign: Vec<_> = data.train.iter().filter(|s| s.label == 0).cloned().collect();
        let baselines = BaselineSet::new(benign, 3).unwrap();
        let samples: Vec<_> = data.train.iter().filter(|s| s.label == 1).cloned().collect();
        let vectorizer = Vectorizer::new(&spec, 5);
        let model = Model::seeded(
            spec.max_rows,
            spec.embedding_dim,
            vec![
                LayerSpec::Conv1d {
                    in_channels: spec.embedding_dim,
                    out_channels: 6,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::GlobalMaxPool,
                LayerSpec::Dense { input: 6, output: 1 },
                LayerSpec::SigmoidHead,
            ],
            seed,
        )
        .unwrap();
        Fix {
            vectorizer,
            baselines,
            samples,
            model,
        }
    }

    #[test]
    fn da_is_finite_and_deterministic_on_ties() {
        let f = fix(61);
        let x_v = f.vectorizer.vectorize_sample(&f.samples[0]);
        let zeros = Matrix::zeros(x_v.matrix.rows(), x_v.matrix.cols());
        let a = da_k(&f.model, &x_v.matrix, &zeros, 10).unwrap();
        let b = da_k(&f.model, &x_v.matrix, &zeros, 10).unwrap();
        assert!(a.is_finite());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn da_matches_direct_remasking_oracle() {
        let f = fix(63);
        let x_v = f.vectorizer.vectorize_sample(&f.samples[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let e_v = Matrix::from_vec(
            x_v.matrix.rows(),
            x_v.matrix.cols(),
            (0..x_v.matrix.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let k = 17;
        let got = da_k(&f.model, &x_v.matrix, &e_v, k).unwrap();
        // Oracle: sort all cells by score, zero the top k, forward.
        let mut cells: Vec<((usize, usize), f64)> = (0..e_v.rows())
            .flat_map(|r| (0..e_v.cols()).map(move |c| ((r, c), 0.0)))
            .map(|((r, c), _)| ((r, c), e_v.get(r, c)))
            .collect();
        cells.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut nulled = x_v.matrix.clone();
        for &((r, c), _) in cells.iter().take(k) {
            nulled.set(r, c, 0.0);
        }
        let want = f.model.prob(&nulled).unwrap();
        assert_eq!(got.to_bits(), want.to_bits());
    }

    #[test]
    fn da_on_ignored_cells_returns_original_prediction() {
        // Model reads only the first dense input cell; nullifying others
        // leaves the prediction unchanged.
        let model = Model::from_parts(
            1,
            3,
            vec![
                LayerSpec::Dense { input: 3, output: 1 },
                LayerSpec::SigmoidHead,
            ],
            vec![
                crate::net::LayerParams {
                    weights: vec![1.0, 0.0, 0.0],
                    bias: vec![0.0],
                },
                crate::net::LayerParams { weights: vec![], bias: vec![] },
            ],
            vec![false, false],
        )
        .unwrap();
        let x = Matrix::from_vec(1, 3, vec![0.8, 0.5, -0.7]);
        // Score the ignored cells highest.
        let e = Matrix::from_vec(1, 3, vec![0.0, 1.0, 0.9]);
        let da = da_k(&model, &x, &e, 2).unwrap();
        assert_eq!(da.to_bits(), model.prob(&x).unwrap().to_bits());
    }

    #[test]
    fn mpd_zero_when_model_ignores_masked_components() {
        // Constant model: drop is exactly zero.
        let f = fix(65);
        let mut constant = f.model.clone();
        let n_layers = constant.layers().len();
        let _ = n_layers;
        // Zero out the dense layer so the output is constant.
        let mut params = constant.params().to_vec();
        for p in params.iter_mut() {
            for w in p.weights.iter_mut() {
                *w = 0.0;
            }
            for b in p.bias.iter_mut() {
                *b = 0.0;
            }
        }
        constant = Model::from_parts(
            constant.input_shape().0,
            constant.input_shape().1,
            constant.layers().to_vec(),
            params,
            constant.frozen().to_vec(),
        )
        .unwrap();
        let sample = &f.samples[0];
        let x_v = f.vectorizer.vectorize_sample(sample);
        let indicator = ic_indicator(sample, &f.vectorizer);
        let ctx = MaskContext {
            x_v: &x_v,
            indicator: &indicator,
            baselines: &f.baselines,
            vectorizer: &f.vectorizer,
            mask_seed: 7,
        };
        let scores: Vec<f64> = (0..indicator.len()).map(|i| i as f64).collect();
        let drop = mpd_k(&constant, &ctx, &scores, 2).unwrap();
        assert_eq!(drop, 0.0);
    }

    #[test]
    fn mpd_with_full_k_equals_all_masked_drop_for_any_scores() {
        let f = fix(67);
        let sample = &f.samples[2];
        let x_v = f.vectorizer.vectorize_sample(sample);
        let indicator = ic_indicator(sample, &f.vectorizer);
        let ctx = MaskContext {
            x_v: &x_v,
            indicator: &indicator,
            baselines: &f.baselines,
            vectorizer: &f.vectorizer,
            mask_seed: 9,
        };
        let n = indicator.len();
        let all = crate::ic::Roi::all_ics(&indicator);
        let masked = ctx.masked(&all).unwrap();
        let expect =
            f.model.prob(&x_v.matrix).unwrap() - f.model.prob(&masked.matrix).unwrap();
        for scores in [
            (0..n).map(|i| i as f64).collect::<Vec<_>>(),
            (0..n).map(|i| -(i as f64)).collect::<Vec<_>>(),
            vec![0.25; n],
        ] {
            let drop = mpd_k(&f.model, &ctx, &scores, n).unwrap();
            assert_eq!(drop.to_bits(), expect.to_bits());
        }
    }

    #[test]
    fn global_fidelity_filters_small_samples_and_matches_recomputation() {
        let f = fix(69);
        let mut items = Vec::new();
        let prepared: Vec<_> = f
            .samples
            .iter()
            .map(|s| {
                let x_v = f.vectorizer.vectorize_sample(s);
                let ind = ic_indicator(s, &f.vectorizer);
                (s.id.clone(), x_v, ind)
            })
            .collect();
        for (id, x_v, ind) in &prepared {
            let scores: Vec<f64> = (0..ind.len()).map(|i| (i % 3) as f64).collect();
            items.push((
                id.clone(),
                MaskContext {
                    x_v,
                    indicator: ind,
                    baselines: &f.baselines,
                    vectorizer: &f.vectorizer,
                    mask_seed: 11,
                },
                scores,
            ));
        }
        let k = 5;
        let report = global_fidelity(&f.model, "test", &items, k).unwrap();
        let expected_included = items.iter().filter(|(_, c, _)| c.ic_count() > k).count();
        assert_eq!(report.per_sample.len(), expected_included);
        assert_eq!(report.filtered, items.len() - expected_included);
        for (id, value) in &report.per_sample {
            let (_, ctx, scores) = items.iter().find(|(i, _, _)| i == id).unwrap();
            let again = mpd_k(&f.model, ctx, scores, k).unwrap();
            assert_eq!(value.to_bits(), again.to_bits());
        }
        // No-data flag when k exceeds every component count.
        let report = global_fidelity(&f.model, "test", &items, 1000).unwrap();
        assert!(report.per_sample.is_empty());
        assert!(report.mean.is_nan());
    }

    #[test]
    fn intersection_size_basics() {
        let a = vec![0.9, 0.8, 0.1, 0.0];
        assert_eq!(intersection_size(&a, &a, 2).unwrap(), 1.0);
        let b = vec![0.0, 0.1, 0.8, 0.9];
        assert_eq!(intersection_size(&a, &b, 2).unwrap(), 0.0);
    }

    #[test]
    fn amp_on_single_pair_equals_masked_prediction() {
        let f = fix(71);
        let sample = &f.samples[0];
        let x_v = f.vectorizer.vectorize_sample(sample);
        let indicator = ic_indicator(sample, &f.vectorizer);
        let ctx = MaskContext {
            x_v: &x_v,
            indicator: &indicator,
            baselines: &f.baselines,
            vectorizer: &f.vectorizer,
            mask_seed: 13,
        };
        let scores: Vec<f64> = (0..indicator.len()).map(|i| i as f64).collect();
        let attribution = ICAttribution {
            scores: scores.clone(),
            explainer: ExplainerId::Gradients,
            forward_passes: 1,
        };
        let p = 40.0;
        let roi = select_roi(&scores, RoiMode::TopPercentile(p)).unwrap();
        let masked = ctx.masked(&roi).unwrap();
        let expect = f.model.prob(&masked.matrix).unwrap();
        let ctx2 = MaskContext {
            x_v: &x_v,
            indicator: &indicator,
            baselines: &f.baselines,
            vectorizer: &f.vectorizer,
            mask_seed: 13,
        };
        let got = amp(&f.model, &[(ctx2, vec![attribution])], p).unwrap();
        assert_eq!(got.to_bits(), expect.to_bits());
    }

    #[test]
    fn roc_auc_perfect_and_constant() {
        let pairs = vec![(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
        assert_eq!(roc_auc(&pairs).unwrap().auc, 1.0);
        let pairs = vec![(0.5, true), (0.5, false), (0.5, true), (0.5, false)];
        assert_eq!(roc_auc(&pairs).unwrap().auc, 0.5);
        assert!(roc_auc(&[(0.5, true)]).is_err());
    }

    #[test]
    fn roc_auc_matches_concordance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..100 {
            let n = rng.random_range(4..40usize);
            let pairs: Vec<(f64, bool)> = (0..n)
                .map(|_| {
                    // Coarse grid forces plenty of ties.
                    let score = (rng.random_range(0..5) as f64) / 4.0;
                    (score, rng.random_bool(0.5))
                })
                .collect();
            let positives = pairs.iter().filter(|(_, t)| *t).count();
            if positives == 0 || positives == pairs.len() {
                continue;
            }
            let got = roc_auc(&pairs).unwrap().auc;
            // Mann-Whitney pairwise concordance with half credit for ties.
            let mut concordant = 0.0;
            let mut total = 0.0;
            for (sp, tp) in &pairs {
                if !tp {
                    continue;
                }
                for (sn, tn) in &pairs {
                    if *tn {
                        continue;
                    }
                    total += 1.0;
                    if sp > sn {
                        concordant += 1.0;
                    } else if sp == sn {
                        concordant += 0.5;
                    }
                }
            }
            assert!((got - concordant / total).abs() < 1e-9);
        }
    }

    #[test]
    fn localization_excludes_unscorable_samples() {
        let samples = vec![
            ("a".to_string(), vec![0.9, 0.1, 0.2], vec![true, false, false]),
            ("b".to_string(), vec![0.9, 0.8], vec![true, true]),
        ];
        let report = localization_auc(&samples);
        assert_eq!(report.per_sample.len(), 1);
        assert_eq!(report.excluded, 1);
        assert_eq!(report.mean, 1.0);
    }
}
