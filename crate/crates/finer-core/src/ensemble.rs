//! Task-aware ensemble explanation: run a scenario's explainer set on
//! one predicted-risk sample, weight each attribution by its own local
//! prediction drop, and combine the normalized attributions into a
//! single IC-level explanation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{explain_ic, ExplainSettings, ExplainerId, MaskContext};
use crate::ic::{select_roi, BaselineSet, ICIndicator, Roi, RoiMode};
use crate::metrics::mpd_k;
use crate::net::Model;
use crate::seeds::derive_seed;
use crate::task::{VectorRep, Vectorizer};

/// Explainer subsets matching the knowledge scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    BlackBox,
    LowCost,
    Unlimited,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::BlackBox, Scenario::LowCost, Scenario::Unlimited];

    pub fn explainers(&self) -> &'static [ExplainerId] {
        match self {
            Scenario::BlackBox => &[ExplainerId::Lime, ExplainerId::Lemna, ExplainerId::Shapley],
            Scenario::LowCost => &[
                ExplainerId::Gradients,
                ExplainerId::Ig,
                ExplainerId::Deeplift,
            ],
            Scenario::Unlimited => &ExplainerId::ALL,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::BlackBox => "black-box",
            Scenario::LowCost => "low-cost",
            Scenario::Unlimited => "unlimited",
        }
    }

    pub fn parse(s: &str) -> Result<Scenario> {
        Self::ALL
            .iter()
            .copied()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown scenario '{s}'")))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shifts the minimum to zero and divides by the sum, mapping any
/// attribution onto a probability simplex; a constant attribution
/// becomes uniform. Rank order of distinct scores is preserved.
pub fn normalize_attribution(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::data("cannot normalize an empty attribution"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("attribution contains non-finite scores"));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = scores.iter().map(|v| v - min).collect();
    let sum: f64 = shifted.iter().sum();
    if sum <= 0.0 {
        return Ok(vec![1.0 / scores.len() as f64; scores.len()]);
    }
    Ok(shifted.iter().map(|v| v / sum).collect())
}

/// Clips negative weights to zero and normalizes to sum one; if nothing
/// positive remains the weights fall back to uniform.
pub fn normalize_weights(weights: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = weights.iter().map(|&w| w.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return vec![1.0 / weights.len() as f64; weights.len()];
    }
    clipped.iter().map(|w| w / sum).collect()
}

/// How the ensemble assigns explainer weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Local fidelity weighting: each explainer's weight is its own
    /// prediction drop at the requested workload.
    MpdLocal,
    /// The published baseline: normalized attributions summed with
    /// uniform weights.
    Uniform,
}

/// One explainer's share of an ensemble explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerResult {
    pub id: ExplainerId,
    pub raw_scores: Vec<f64>,
    pub normalized: Vec<f64>,
    pub weight: f64,
    pub forward_passes: u64,
    /// This explainer's own prediction drop at the record's k, under the
    /// evaluation masking seed.
    pub mpd: f64,
}

/// The domain-space explanation of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainExplanation {
    pub sample_id: String,
    pub scenario: Scenario,
    pub weighting: Weighting,
    pub k: usize,
    pub per_explainer: Vec<ExplainerResult>,
    pub final_scores: Vec<f64>,
    /// Selected component indices (ascending) and their names.
    pub roi: Vec<usize>,
    pub roi_names: Vec<String>,
    /// Prediction drop of the final explanation at k.
    pub mpd: f64,
    /// Set when no explanation applies (the sample is not predicted as
    /// risk); all score vectors are empty in that case.
    pub reason: Option<String>,
}

/// Everything an ensemble run needs besides the sample itself.
pub struct EnsembleEnv<'a> {
    pub model: &'a Model,
    pub baselines: &'a BaselineSet,
    pub vectorizer: &'a Vectorizer,
    pub settings: &'a ExplainSettings,
    /// Masking stream for the explainers themselves.
    pub mask_seed: u64,
    /// Dedicated masking stream for weight evaluation, isolated from the
    /// explainer streams.
    pub weight_mask_seed: u64,
    /// Masking stream for reported fidelity values.
    pub eval_mask_seed: u64,
    pub explain_seed: u64,
}

impl EnsembleEnv<'_> {
    fn ctx<'b>(&'b self, x_v: &'b VectorRep, indicator: &'b ICIndicator, seed: u64) -> MaskContext<'b> {
        MaskContext {
            x_v,
            indicator,
            baselines: self.baselines,
            vectorizer: self.vectorizer,
            mask_seed: seed,
        }
    }
}

fn empty_explanation(
    sample_id: &str,
    scenario: Scenario,
    weighting: Weighting,
    k: usize,
    reason: &str,
) -> DomainExplanation {
    DomainExplanation {
        sample_id: sample_id.to_string(),
        scenario,
        weighting,
        k,
        per_explainer: Vec::new(),
        final_scores: Vec::new(),
        roi: Vec::new(),
        roi_names: Vec::new(),
        mpd: 0.0,
        reason: Some(reason.to_string()),
    }
}

/// Locally weighted ensemble explanation for one sample. Samples the
/// model does not flag as risk get the empty explanation with a reason
/// code instead of an error.
pub fn explain_ensemble(
    env: &EnsembleEnv<'_>,
    sample_id: &str,
    x_v: &VectorRep,
    indicator: &ICIndicator,
    scenario: Scenario,
    k: usize,
    weighting: Weighting,
) -> Result<DomainExplanation> {
    if k == 0 {
        return Err(Error::config("workload k must be >= 1"));
    }
    if env.model.predict_label(&x_v.matrix)? == 0 {
        return Ok(empty_explanation(
            sample_id,
            scenario,
            weighting,
            k,
            "not-predicted-risk",
        ));
    }
    if indicator.is_empty() {
        return Ok(empty_explanation(
            sample_id,
            scenario,
            weighting,
            k,
            "no-explainable-components",
        ));
    }

    let explain_ctx = env.ctx(x_v, indicator, env.mask_seed);
    let eval_ctx = env.ctx(x_v, indicator, env.eval_mask_seed);

    let ids = scenario.explainers();
    let mut raw_weights = Vec::with_capacity(ids.len());
    let mut results = Vec::with_capacity(ids.len());
    for &id in ids {
        let seed = derive_seed(env.explain_seed, &format!("{id}/{sample_id}"));
        let attribution = explain_ic(id, env.model, &explain_ctx, env.settings, seed)?;
        let weight = match weighting {
            Weighting::MpdLocal => {
                let weight_ctx = env.ctx(x_v, indicator, env.weight_mask_seed);
                mpd_k(env.model, &weight_ctx, &attribution.scores, k)?
            }
            Weighting::Uniform => 1.0,
        };
        raw_weights.push(weight);
        let normalized = normalize_attribution(&attribution.scores)?;
        let mpd = mpd_k(env.model, &eval_ctx, &attribution.scores, k)?;
        results.push(ExplainerResult {
            id,
            raw_scores: attribution.scores,
            normalized,
            weight,
            forward_passes: attribution.forward_passes,
            mpd,
        });
    }

    let weights = match weighting {
        Weighting::MpdLocal => normalize_weights(&raw_weights),
        Weighting::Uniform => vec![1.0 / ids.len() as f64; ids.len()],
    };
    for (result, &w) in results.iter_mut().zip(&weights) {
        result.weight = w;
    }

    let dims = indicator.len();
    let mut final_scores = vec![0.0; dims];
    for (result, &w) in results.iter().zip(&weights) {
        for (acc, &v) in final_scores.iter_mut().zip(&result.normalized) {
            *acc += w * v;
        }
    }

    let roi = match select_roi(&final_scores, RoiMode::TopK(k))? {
        Roi::Ics(set) => set.into_iter().collect::<Vec<_>>(),
        Roi::Cells(_) => unreachable!(),
    };
    let roi_names = roi
        .iter()
        .map(|&i| indicator.ics[i].name.clone())
        .collect();
    let mpd = mpd_k(env.model, &eval_ctx, &final_scores, k)?;

    Ok(DomainExplanation {
        sample_id: sample_id.to_string(),
        scenario,
        weighting,
        k,
        per_explainer: results,
        final_scores,
        roi,
        roi_names,
        mpd,
        reason: None,
    })
}

/// The published baseline: same pipeline with uniform weights.
pub fn naive_ensemble(
    env: &EnsembleEnv<'_>,
    sample_id: &str,
    x_v: &VectorRep,
    indicator: &ICIndicator,
    scenario: Scenario,
    k: usize,
) -> Result<DomainExplanation> {
    explain_ensemble(env, sample_id, x_v, indicator, scenario, k, Weighting::Uniform)
}
