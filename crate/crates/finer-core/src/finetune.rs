//! Explanation-guided model updating. Each batch is augmented from the
//! current model state: the surrogate explainer picks per-sample regions
//! of interest, true positives contribute a sanitized (ROI masked) and a
//! variant (complement masked) copy, false positives contribute both as
//! counter examples. The model then takes a step on the weighted
//! multi-set cross entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{explain_ic, ExplainSettings, ExplainerId, ICAttribution, MaskContext};
use crate::ic::{ic_indicator, mask_sample, select_roi, BaselineSet, ICIndicator, Roi, RoiMode};
use crate::matrix::Matrix;
use crate::metrics::amp;
use crate::net::{accuracy, LabeledSet, LayerParams, Model};
use crate::seeds::derive_seed;
use crate::task::{ProblemSample, VectorRep, Vectorizer};

/// A training sample with its precomputed representation and indicator.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub sample: ProblemSample,
    pub x_v: VectorRep,
    pub indicator: ICIndicator,
}

impl TrainItem {
    pub fn prepare(sample: ProblemSample, vectorizer: &Vectorizer) -> TrainItem {
        let x_v = vectorizer.vectorize_sample(&sample);
        let indicator = ic_indicator(&sample, vectorizer);
        TrainItem {
            sample,
            x_v,
            indicator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugKind {
    /// ROI masked in a true positive; target 0.
    Sanitized,
    /// Complement of the ROI masked in a true positive; target 1.
    Variant,
    /// ROI masked in a false positive; target 0.
    CounterRoi,
    /// Complement of the ROI masked in a false positive; target 0.
    CounterNonRoi,
}

/// One augmented input with provenance back to its origin.
#[derive(Debug, Clone)]
pub struct AugSample {
    pub matrix: Matrix,
    pub origin_id: String,
    pub origin_label: u8,
    pub kind: AugKind,
    pub roi: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct AugmentedBatch {
    pub sanitized: Vec<AugSample>,
    pub variant: Vec<AugSample>,
    pub counter: Vec<AugSample>,
    /// True when the batch had no true negatives and the global benign
    /// pool stood in as the masking baseline.
    pub used_global_pool: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lambda: (f64, f64, f64),
    /// Surrogate ROI percentile (minimum one component is always kept).
    pub roi_percentile: f64,
    pub surrogate: ExplainerId,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    /// Per-layer freeze flags; `None` leaves the model's flags as-is.
    pub freeze: Option<Vec<bool>>,
    /// Early stop once the validation AMP's relative change stays below
    /// `plateau_rel_tol` for this many consecutive epochs; 0 disables.
    pub plateau_window: usize,
    pub plateau_rel_tol: f64,
    /// Cheap explainer set and sample cap for the per-epoch AMP probe.
    pub probe_explainers: Vec<ExplainerId>,
    pub probe_max_samples: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lambda: (1.0, 1.0, 1.0),
            roi_percentile: 25.0,
            surrogate: ExplainerId::Gradients,
            epochs: 16,
            learning_rate: 0.02,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
            freeze: None,
            plateau_window: 3,
            plateau_rel_tol: 0.01,
            probe_explainers: vec![ExplainerId::Gradients, ExplainerId::Deeplift],
            probe_max_samples: 32,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        let (l1, l2, l3) = self.lambda;
        if ![l1, l2, l3].iter().all(|l| l.is_finite() && *l >= 0.0) {
            return Err(Error::config("lambdas must be finite and >= 0"));
        }
        if !(self.roi_percentile > 0.0 && self.roi_percentile <= 100.0) {
            return Err(Error::config("roi percentile must be in (0, 100]"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Per-epoch diagnostics emitted by [`finetune`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_amp: f64,
}

fn complement_roi(roi: &Roi, total: usize) -> Roi {
    match roi {
        Roi::Ics(set) => Roi::ics((0..total).filter(|i| !set.contains(i))),
        Roi::Cells(_) => unreachable!("surrogate ROIs are component level"),
    }
}

fn roi_indices(roi: &Roi) -> Vec<usize> {
    match roi {
        Roi::Ics(set) => set.iter().copied().collect(),
        Roi::Cells(_) => unreachable!(),
    }
}

/// Builds the three augmentation sets for one batch from the current
/// model state. Baselines come from the batch's true negatives, falling
/// back to `global_pool` when there are none.
pub fn augment_batch(
    model: &Model,
    batch: &[&TrainItem],
    global_pool: &BaselineSet,
    vectorizer: &Vectorizer,
    settings: &ExplainSettings,
    cfg: &FinetuneConfig,
) -> Result<AugmentedBatch> {
    if batch.is_empty() {
        return Err(Error::data("cannot augment an empty batch"));
    }
    let predictions: Vec<u8> = batch
        .iter()
        .map(|item| model.predict_label(&item.x_v.matrix))
        .collect::<Result<_>>()?;

    let true_negatives: Vec<ProblemSample> = batch
        .iter()
        .zip(&predictions)
        .filter(|(item, &pred)| pred == 0 && item.sample.label == 0)
        .map(|(item, _)| item.sample.clone())
        .collect();
    let (baselines, used_global_pool) = if true_negatives.is_empty() {
        log::debug!("batch has no true negatives; masking from the global benign pool");
        (None, true)
    } else {
        (
            Some(BaselineSet::new(
                true_negatives,
                derive_seed(cfg.seed, "batch-baselines"),
            )?),
            false,
        )
    };
    let pool = baselines.as_ref().unwrap_or(global_pool);
    let mask_seed = derive_seed(cfg.seed, "augment-mask");

    let mut out = AugmentedBatch {
        used_global_pool,
        ..AugmentedBatch::default()
    };
    for (item, &pred) in batch.iter().zip(&predictions) {
        if pred == 0 || item.indicator.is_empty() {
            continue;
        }
        let ctx = MaskContext {
            x_v: &item.x_v,
            indicator: &item.indicator,
            baselines: pool,
            vectorizer,
            mask_seed,
        };
        let surrogate_seed = derive_seed(cfg.seed, &format!("surrogate/{}", item.sample.id));
        let attribution = explain_ic(cfg.surrogate, model, &ctx, settings, surrogate_seed)?;
        let roi = select_roi(
            &attribution.scores,
            RoiMode::TopPercentile(cfg.roi_percentile),
        )?;
        let complement = complement_roi(&roi, item.indicator.len());

        let vectorize_masked = |region: &Roi| -> Result<Matrix> {
            let masked = mask_sample(&item.sample, region, &item.indicator, pool, mask_seed)?;
            Ok(vectorizer.vectorize_sample(&masked).matrix)
        };
        let roi_masked = vectorize_masked(&roi)?;
        let complement_masked = vectorize_masked(&complement)?;

        if item.sample.label == 1 {
            out.sanitized.push(AugSample {
                matrix: roi_masked,
                origin_id: item.sample.id.clone(),
                origin_label: 1,
                kind: AugKind::Sanitized,
                roi: roi_indices(&roi),
            });
            out.variant.push(AugSample {
                matrix: complement_masked,
                origin_id: item.sample.id.clone(),
                origin_label: 1,
                kind: AugKind::Variant,
                roi: roi_indices(&roi),
            });
        } else {
            out.counter.push(AugSample {
                matrix: roi_masked,
                origin_id: item.sample.id.clone(),
                origin_label: 0,
                kind: AugKind::CounterRoi,
                roi: roi_indices(&roi),
            });
            out.counter.push(AugSample {
                matrix: complement_masked,
                origin_id: item.sample.id.clone(),
                origin_label: 0,
                kind: AugKind::CounterNonRoi,
                roi: roi_indices(&roi),
            });
        }
    }
    Ok(out)
}

/// The four loss components: classification on the originals plus the
/// three augmentation terms (before the lambda weighting).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl LossBreakdown {
    pub fn total(&self, lambda: (f64, f64, f64)) -> f64 {
        self.l0 + lambda.0 * self.l1 + lambda.1 * self.l2 + lambda.2 * self.l3
    }
}

fn mean_cross_entropy(model: &Model, inputs: &[(&Matrix, f64)]) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (x, y) in inputs {
        total += crate::net::binary_cross_entropy(model.prob(x)?, *y);
    }
    Ok(total / inputs.len() as f64)
}

/// Loss of one batch with its augmented sets; empty sets contribute 0.
pub fn multitask_loss(
    model: &Model,
    batch: &[(&Matrix, f64)],
    aug: &AugmentedBatch,
    lambda: (f64, f64, f64),
) -> Result<LossBreakdown> {
    fn collect(set: &[AugSample], target: f64) -> Vec<(&Matrix, f64)> {
        set.iter().map(|s| (&s.matrix, target)).collect()
    }
    let breakdown = LossBreakdown {
        l0: mean_cross_entropy(model, batch)?,
        l1: mean_cross_entropy(model, &collect(&aug.sanitized, 0.0))?,
        l2: mean_cross_entropy(model, &collect(&aug.variant, 1.0))?,
        l3: mean_cross_entropy(model, &collect(&aug.counter, 0.0))?,
    };
    if !breakdown.total(lambda).is_finite() {
        return Err(Error::runtime("non-finite multitask loss"));
    }
    Ok(breakdown)
}

struct GradAccumulator {
    grads: Vec<LayerParams>,
}

impl GradAccumulator {
    fn new(model: &Model) -> Self {
        GradAccumulator {
            grads: model.params().iter().map(LayerParams::zeros_like).collect(),
        }
    }

    /// Adds the mean-CE gradient of a set scaled by `weight`; returns the
    /// unweighted mean loss.
    fn add_set(&mut self, model: &Model, set: &[(&Matrix, f64)], weight: f64) -> Result<f64> {
        if set.is_empty() || weight == 0.0 {
            return Ok(0.0);
        }
        let scale = weight / set.len() as f64;
        let mut loss = 0.0;
        for (x, y) in set {
            let (l, g) = crate::net::example_grads(model, x, *y)?;
            loss += l / set.len() as f64;
            crate::net::accumulate_grads(&mut self.grads, &g, scale);
        }
        Ok(loss)
    }
}

/// Validation AMP probe: cheap explainers on a capped number of
/// predicted-risk samples.
fn validation_amp(
    model: &Model,
    items: &[TrainItem],
    pool: &BaselineSet,
    vectorizer: &Vectorizer,
    settings: &ExplainSettings,
    cfg: &FinetuneConfig,
) -> Result<f64> {
    let mask_seed = derive_seed(cfg.seed, "amp-mask");
    let mut prepared = Vec::new();
    for item in items {
        if prepared.len() >= cfg.probe_max_samples {
            break;
        }
        if item.indicator.is_empty() || model.predict_label(&item.x_v.matrix)? == 0 {
            continue;
        }
        let ctx = MaskContext {
            x_v: &item.x_v,
            indicator: &item.indicator,
            baselines: pool,
            vectorizer,
            mask_seed,
        };
        let mut attributions: Vec<ICAttribution> = Vec::new();
        for &id in &cfg.probe_explainers {
            let seed = derive_seed(cfg.seed, &format!("amp/{id}/{}", item.sample.id));
            attributions.push(explain_ic(id, model, &ctx, settings, seed)?);
        }
        prepared.push((ctx, attributions));
    }
    if prepared.is_empty() {
        return Ok(f64::NAN);
    }
    amp(model, &prepared, cfg.roi_percentile)
}

fn labeled_set(items: &[TrainItem]) -> LabeledSet {
    LabeledSet {
        inputs: items.iter().map(|i| i.x_v.matrix.clone()).collect(),
        labels: items.iter().map(|i| i.sample.label).collect(),
    }
}

/// Runs the explanation-guided update. Augmentation is recomputed for
/// every batch from the model state at that step. Returns the updated
/// model and the per-epoch diagnostics.
pub fn finetune(
    model: &Model,
    train: &[TrainItem],
    validation: &[TrainItem],
    global_pool: &BaselineSet,
    vectorizer: &Vectorizer,
    settings: &ExplainSettings,
    cfg: &FinetuneConfig,
) -> Result<(Model, Vec<EpochRow>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::data("finetune needs training samples"));
    }
    let mut model = model.clone();
    if let Some(freeze) = &cfg.freeze {
        model.set_frozen(freeze.clone())?;
    }

    let train_set = labeled_set(train);
    let val_set = labeled_set(validation);
    let (l1w, l2w, l3w) = cfg.lambda;
    let augmentation_active = l1w > 0.0 || l2w > 0.0 || l3w > 0.0;

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
    let mut momentum = crate::net::Momentum::new(&model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rows: Vec<EpochRow> = Vec::new();
    let mut amp_history: Vec<f64> = Vec::new();

    for epoch in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut epoch_losses = LossBreakdown { l0: 0.0, l1: 0.0, l2: 0.0, l3: 0.0 };
        let mut batches = 0usize;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &train[i]).collect();
            let aug = if augmentation_active {
                augment_batch(&model, &batch, global_pool, vectorizer, settings, cfg)?
            } else {
                AugmentedBatch::default()
            };

            let originals: Vec<(&Matrix, f64)> = batch
                .iter()
                .map(|item| (&item.x_v.matrix, f64::from(item.sample.label)))
                .collect();
            let san: Vec<(&Matrix, f64)> =
                aug.sanitized.iter().map(|s| (&s.matrix, 0.0)).collect();
            let var: Vec<(&Matrix, f64)> =
                aug.variant.iter().map(|s| (&s.matrix, 1.0)).collect();
            let cou: Vec<(&Matrix, f64)> =
                aug.counter.iter().map(|s| (&s.matrix, 0.0)).collect();

            let mut acc = GradAccumulator::new(&model);
            let l0 = acc.add_set(&model, &originals, 1.0)?;
            let l1 = acc.add_set(&model, &san, l1w)?;
            let l2 = acc.add_set(&model, &var, l2w)?;
            let l3 = acc.add_set(&model, &cou, l3w)?;
            let total = l0 + l1w * l1 + l2w * l2 + l3w * l3;
            if !total.is_finite() {
                return Err(Error::runtime(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_index}"
                )));
            }
            epoch_losses.l0 += l0;
            epoch_losses.l1 += l1;
            epoch_losses.l2 += l2;
            epoch_losses.l3 += l3;
            batches += 1;

            let update = momentum.step(&acc.grads, cfg.learning_rate, cfg.momentum);
            model.apply_update(&update);
        }

        let inv = 1.0 / batches.max(1) as f64;
        let val_amp = if validation.is_empty() {
            f64::NAN
        } else {
            validation_amp(&model, validation, global_pool, vectorizer, settings, cfg)?
        };
        rows.push(EpochRow {
            epoch,
            l0: epoch_losses.l0 * inv,
            l1: epoch_losses.l1 * inv,
            l2: epoch_losses.l2 * inv,
            l3: epoch_losses.l3 * inv,
            train_acc: accuracy(&model, &train_set)?,
            val_acc: if val_set.is_empty() {
                f64::NAN
            } else {
                accuracy(&model, &val_set)?
            },
            val_amp,
        });

        if val_amp.is_finite() {
            amp_history.push(val_amp);
        }
        if cfg.plateau_window > 0 && amp_history.len() > cfg.plateau_window {
            let recent = &amp_history[amp_history.len() - cfg.plateau_window - 1..];
            let plateaued = recent.windows(2).all(|w| {
                let denom = w[0].abs().max(1e-9);
                ((w[1] - w[0]) / denom).abs() < cfg.plateau_rel_tol
            });
            if plateaued {
                log::info!("validation AMP plateaued after epoch {epoch}; stopping");
                break;
            }
        }
    }

    Ok((model, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{fit, LayerSpec, TrainConfig};
    use crate::task::{generate_dataset, motif_pools, scan_malicious_ics, TaskSpec};

    struct Fix {
        vectorizer: Vectorizer,
        pool: BaselineSet,
        train: Vec<TrainItem>,
        model: Model,
        spec: TaskSpec,
        data_seed: u64,
    }

    fn fix(seed: u64) -> Fix {
        let spec = TaskSpec {
            train_benign: 40,
            train_risk: 40,
            test_benign: 8,
            test_risk: 8,
            ics_per_sample: (4, 8),
            max_rows: 96,
            ..TaskSpec::default()
        };
        let data = generate_dataset(&spec, seed).unwrap();
        let vectorizer = Vectorizer::new(&spec, 5);
        let benign: Vec<ProblemSample> =
            data.train.iter().filter(|s| s.label == 0).cloned().collect();
        let pool = BaselineSet::new(benign, 3).unwrap();
        let train: Vec<TrainItem> = data
            .train
            .iter()
            .map(|s| TrainItem::prepare(s.clone(), &vectorizer))
            .collect();
        let model = Model::seeded(
            spec.max_rows,
            spec.embedding_dim,
            vec![
                LayerSpec::Conv1d {
                    in_channels: spec.embedding_dim,
                    out_channels: 8,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::GlobalMaxPool,
                LayerSpec::Dense { input: 8, output: 1 },
                LayerSpec::SigmoidHead,
            ],
            seed,
        )
        .unwrap();
        Fix {
            vectorizer,
            pool,
            train,
            model,
            spec,
            data_seed: seed,
        }
    }

    fn trained_fix(seed: u64) -> Fix {
        let mut f = fix(seed);
        let set = labeled_set(&f.train);
        f.model = fit(
            &f.model,
            &set,
            &TrainConfig {
                learning_rate: 0.1,
                batch_size: 16,
                max_epochs: 10,
                seed: seed + 1,
                momentum: 0.9,
                target_train_accuracy: None,
            },
            &[],
        )
        .unwrap();
        f
    }

    #[test]
    fn augmentation_respects_the_set_predicates() {
        let f = trained_fix(81);
        let cfg = FinetuneConfig {
            seed: 7,
            roi_percentile: 25.0,
            ..FinetuneConfig::default()
        };
        let settings = ExplainSettings::default();
        let batch: Vec<&TrainItem> = f.train.iter().collect();
        let aug =
            augment_batch(&f.model, &batch, &f.pool, &f.vectorizer, &settings, &cfg).unwrap();

        assert!(!aug.sanitized.is_empty());
        assert_eq!(aug.sanitized.len(), aug.variant.len());
        for s in aug.sanitized.iter().chain(&aug.variant) {
            // Sanitized/variant origins are true positives.
            assert_eq!(s.origin_label, 1);
            let item = f.train.iter().find(|i| i.sample.id == s.origin_id).unwrap();
            assert_eq!(f.model.predict_label(&item.x_v.matrix).unwrap(), 1);
        }
        for s in &aug.counter {
            assert_eq!(s.origin_label, 0);
            let item = f.train.iter().find(|i| i.sample.id == s.origin_id).unwrap();
            assert_eq!(f.model.predict_label(&item.x_v.matrix).unwrap(), 1);
        }
        // Counter examples come in ROI/non-ROI pairs.
        assert_eq!(aug.counter.len() % 2, 0);
    }

    #[test]
    fn batch_without_positives_gives_empty_sets() {
        let f = fix(83);
        // An untrained model biased to zero: force the dense bias very low.
        let mut params = f.model.params().to_vec();
        let last = params.len() - 2;
        params[last].bias[0] = -50.0;
        for w in params[last].weights.iter_mut() {
            *w = 0.0;
        }
        let negative = Model::from_parts(
            f.model.input_shape().0,
            f.model.input_shape().1,
            f.model.layers().to_vec(),
            params,
            f.model.frozen().to_vec(),
        )
        .unwrap();
        let cfg = FinetuneConfig { seed: 5, ..FinetuneConfig::default() };
        let batch: Vec<&TrainItem> = f.train.iter().take(10).collect();
        let aug = augment_batch(
            &negative,
            &batch,
            &f.pool,
            &f.vectorizer,
            &ExplainSettings::default(),
            &cfg,
        )
        .unwrap();
        assert!(aug.sanitized.is_empty());
        assert!(aug.variant.is_empty());
        assert!(aug.counter.is_empty());
    }

    #[test]
    fn sanitized_members_lose_their_roi_motifs_and_keep_the_rest() {
        let f = trained_fix(85);
        let cfg = FinetuneConfig {
            seed: 11,
            roi_percentile: 40.0,
            ..FinetuneConfig::default()
        };
        let settings = ExplainSettings::default();
        let pools = motif_pools(&f.spec, f.data_seed);
        let batch: Vec<&TrainItem> = f.train.iter().collect();
        let aug =
            augment_batch(&f.model, &batch, &f.pool, &f.vectorizer, &settings, &cfg).unwrap();
        let mask_seed = derive_seed(cfg.seed, "augment-mask");
        // Rebuild the masking pool augment_batch used: the batch's true
        // negatives under the derived baseline seed.
        let tns: Vec<ProblemSample> = batch
            .iter()
            .filter(|i| {
                i.sample.label == 0 && f.model.predict_label(&i.x_v.matrix).unwrap() == 0
            })
            .map(|i| i.sample.clone())
            .collect();
        assert!(!tns.is_empty());
        let tn_pool = BaselineSet::new(tns, derive_seed(cfg.seed, "batch-baselines")).unwrap();
        for s in &aug.sanitized {
            let item = f.train.iter().find(|i| i.sample.id == s.origin_id).unwrap();
            // Locality: rows outside the masked components are unchanged.
            let roi_set: std::collections::BTreeSet<usize> = s.roi.iter().copied().collect();
            let masked = mask_sample(
                &item.sample,
                &Roi::Ics(roi_set.clone()),
                &item.indicator,
                &tn_pool,
                mask_seed,
            )
            .unwrap();
            let revec = f.vectorizer.vectorize_sample(&masked);
            assert_eq!(revec.matrix, s.matrix);
            // Scan oracle: no motif survives inside the masked components.
            let found = scan_malicious_ics(&masked, &pools);
            for ic in &found {
                let valid_idx = item
                    .indicator
                    .ics
                    .iter()
                    .position(|d| d.original_index == *ic);
                if let Some(v) = valid_idx {
                    assert!(!roi_set.contains(&v), "motif survived inside the ROI");
                }
            }
        }
    }

    #[test]
    fn multitask_loss_reduces_to_plain_ce() {
        let f = trained_fix(87);
        let batch: Vec<(&Matrix, f64)> = f
            .train
            .iter()
            .take(6)
            .map(|i| (&i.x_v.matrix, f64::from(i.sample.label)))
            .collect();
        let empty = AugmentedBatch::default();
        let b = multitask_loss(&f.model, &batch, &empty, (1.0, 1.0, 1.0)).unwrap();
        assert_eq!(b.l1, 0.0);
        assert_eq!(b.l2, 0.0);
        assert_eq!(b.l3, 0.0);
        let plain = mean_cross_entropy(&f.model, &batch).unwrap();
        assert_eq!(b.l0.to_bits(), plain.to_bits());
        assert_eq!(b.total((0.0, 0.0, 0.0)).to_bits(), plain.to_bits());
    }

    #[test]
    fn hand_computed_cross_entropy_matches() {
        let f = trained_fix(89);
        let batch: Vec<(&Matrix, f64)> = f
            .train
            .iter()
            .take(2)
            .map(|i| (&i.x_v.matrix, f64::from(i.sample.label)))
            .collect();
        let b = multitask_loss(&f.model, &batch, &AugmentedBatch::default(), (1.0, 1.0, 1.0))
            .unwrap();
        let mut expect = 0.0;
        for (x, y) in &batch {
            let p: f64 = f.model.prob(x).unwrap().clamp(1e-12, 1.0 - 1e-12);
            expect += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()) / batch.len() as f64;
        }
        assert!((b.l0 - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_lambdas_reduce_to_plain_continued_training() {
        let f = trained_fix(91);
        let cfg = FinetuneConfig {
            lambda: (0.0, 0.0, 0.0),
            epochs: 4,
            learning_rate: 0.05,
            batch_size: 16,
            momentum: 0.9,
            seed: 33,
            plateau_window: 0,
            ..FinetuneConfig::default()
        };
        let (tuned, rows) = finetune(
            &f.model,
            &f.train,
            &[],
            &f.pool,
            &f.vectorizer,
            &ExplainSettings::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        let plain = fit(
            &f.model,
            &labeled_set(&f.train),
            &TrainConfig {
                learning_rate: 0.05,
                batch_size: 16,
                max_epochs: 4,
                seed: 33,
                momentum: 0.9,
                target_train_accuracy: None,
            },
            &[],
        )
        .unwrap();
        for (a, b) in tuned.params().iter().zip(plain.params()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.bias.iter().zip(&b.bias) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn finetune_is_deterministic_given_seed() {
        let f = trained_fix(93);
        let cfg = FinetuneConfig {
            epochs: 2,
            batch_size: 16,
            seed: 21,
            probe_max_samples: 4,
            ..FinetuneConfig::default()
        };
        let run = || {
            finetune(
                &f.model,
                &f.train,
                &f.train[..12],
                &f.pool,
                &f.vectorizer,
                &ExplainSettings::default(),
                &cfg,
            )
            .unwrap()
        };
        let (a, rows_a) = run();
        let (b, rows_b) = run();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa, pb);
        }
        assert_eq!(rows_a.len(), rows_b.len());
        for (ra, rb) in rows_a.iter().zip(&rows_b) {
            assert_eq!(ra.l0.to_bits(), rb.l0.to_bits());
            assert_eq!(ra.val_amp.to_bits(), rb.val_amp.to_bits());
        }
    }
}
