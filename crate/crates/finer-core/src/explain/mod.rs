//! Feature-attribution explainers with IC-level domain adjustment.
//!
//! Gradient-family methods (gradients, integrated gradients, DeepLIFT)
//! attribute per matrix cell and are aggregated onto ICs afterwards;
//! perturbation methods (LIME, LEMNA, Shapley) sample or enumerate
//! directly over ICs, masking the off components with benign baseline
//! content. Perturbation methods only see a probability oracle — the
//! type system keeps middle-layer activations out of their reach.

mod deeplift;
mod gradients;
mod ig;
mod lemna;
mod lime;
mod shapley;

pub use deeplift::deeplift_explain;
pub use gradients::gradients_explain;
pub use ig::ig_explain;
pub use lemna::{lemna_explain, tv1d_prox, LemnaOutcome};
pub use lime::lime_explain;
pub use shapley::{shapley_explain, ShapleyBudget};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ic::{mask_vector, BaselineSet, ICIndicator, Roi};
use crate::matrix::Matrix;
use crate::net::Model;
use crate::task::{VectorRep, Vectorizer};

/// Identifiers used in configs, CLI flags, and output records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainerId {
    Gradients,
    Ig,
    Deeplift,
    Lime,
    Lemna,
    Shapley,
}

impl ExplainerId {
    pub const ALL: [ExplainerId; 6] = [
        ExplainerId::Gradients,
        ExplainerId::Ig,
        ExplainerId::Deeplift,
        ExplainerId::Lime,
        ExplainerId::Lemna,
        ExplainerId::Shapley,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExplainerId::Gradients => "gradients",
            ExplainerId::Ig => "ig",
            ExplainerId::Deeplift => "deeplift",
            ExplainerId::Lime => "lime",
            ExplainerId::Lemna => "lemna",
            ExplainerId::Shapley => "shapley",
        }
    }

    pub fn parse(s: &str) -> Result<ExplainerId> {
        Self::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown explainer id '{s}'")))
    }

    /// True for the perturbation methods that need no model internals.
    pub fn is_black_box(&self) -> bool {
        matches!(
            self,
            ExplainerId::Lime | ExplainerId::Lemna | ExplainerId::Shapley
        )
    }
}

impl std::fmt::Display for ExplainerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-cell importance scores, same shape as the model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub values: Matrix,
}

/// Per-IC importance scores plus cost accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct ICAttribution {
    pub scores: Vec<f64>,
    pub explainer: ExplainerId,
    pub forward_passes: u64,
}

impl ICAttribution {
    pub fn is_finite(&self) -> bool {
        self.scores.iter().all(|v| v.is_finite())
    }
}

/// Probability oracle: the only model access perturbation explainers get.
pub trait ProbModel {
    fn prob(&self, x: &Matrix) -> Result<f64>;
}

impl ProbModel for Model {
    fn prob(&self, x: &Matrix) -> Result<f64> {
        Model::prob(self, x)
    }
}

/// Counts oracle queries; wraps any [`ProbModel`].
pub struct CountingProbe<'a, P: ProbModel + ?Sized> {
    inner: &'a P,
    count: AtomicU64,
}

impl<'a, P: ProbModel + ?Sized> CountingProbe<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        CountingProbe {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<P: ProbModel + ?Sized> ProbModel for CountingProbe<'_, P> {
    fn prob(&self, x: &Matrix) -> Result<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.prob(x)
    }
}

/// Everything needed to mask one sample: its vector representation, the
/// IC indicator, the baseline pool, the embedding, and the masking seed.
pub struct MaskContext<'a> {
    pub x_v: &'a VectorRep,
    pub indicator: &'a ICIndicator,
    pub baselines: &'a BaselineSet,
    pub vectorizer: &'a Vectorizer,
    pub mask_seed: u64,
}

impl MaskContext<'_> {
    pub fn ic_count(&self) -> usize {
        self.indicator.len()
    }

    pub fn masked(&self, roi: &Roi) -> Result<VectorRep> {
        mask_vector(
            self.x_v,
            roi,
            self.indicator,
            self.baselines,
            self.vectorizer,
            self.mask_seed,
        )
    }

    /// The all-components-masked input used as the gradient-family
    /// baseline: the natural "absence of risk" reference.
    pub fn baseline_input(&self) -> Result<VectorRep> {
        self.masked(&Roi::all_ics(self.indicator))
    }
}

/// Precomputed per-IC replacement rows for fast on/off pattern masking.
/// Replacements agree bit-for-bit with [`mask_vector`] under the same
/// seed.
pub struct PatternMasker<'a> {
    ctx: &'a MaskContext<'a>,
    blocks: Vec<Vec<Vec<f64>>>,
}

impl<'a> PatternMasker<'a> {
    pub fn new(ctx: &'a MaskContext<'a>) -> PatternMasker<'a> {
        let blocks = ctx
            .indicator
            .ics
            .iter()
            .map(|desc| {
                let tokens =
                    ctx.baselines
                        .replacement(&desc.tokens, desc.row_len, ctx.mask_seed);
                tokens
                    .iter()
                    .map(|&t| ctx.vectorizer.embedding_row(t).to_vec())
                    .collect()
            })
            .collect();
        PatternMasker { ctx, blocks }
    }

    /// Input with every IC marked `false` replaced by baseline content.
    pub fn masked(&self, on: &[bool]) -> Matrix {
        let mut out = self.ctx.x_v.matrix.clone();
        for (idx, &keep) in on.iter().enumerate() {
            if keep {
                continue;
            }
            let desc = &self.ctx.indicator.ics[idx];
            for (offset, row) in self.blocks[idx].iter().enumerate() {
                out.row_mut(desc.row_start + offset).copy_from_slice(row);
            }
        }
        out
    }
}

/// Aggregates per-cell attribution onto ICs: the L1 norm of the cells
/// each component owns.
pub fn ic_aggregate(attribution: &Attribution, indicator: &ICIndicator) -> Vec<f64> {
    let (rows, cols) = indicator.shape();
    assert_eq!(
        attribution.values.shape(),
        (rows, cols),
        "attribution shape must match the indicator"
    );
    let mut scores = vec![0.0; indicator.len()];
    for r in 0..rows {
        for c in 0..cols {
            let idx = indicator.cell(r, c);
            if idx >= 0 {
                scores[idx as usize] += attribution.values.get(r, c).abs();
            }
        }
    }
    scores
}

/// Tunables for the individual explainers; defaults mirror common
/// toolbox settings at desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSettings {
    pub ig_steps: usize,
    pub lime_neighbors: usize,
    /// Kernel width factor: width = factor * sqrt(|ICs|).
    pub lime_kernel_factor: f64,
    pub ridge: f64,
    pub lemna_neighbors: usize,
    pub lemna_mixtures: usize,
    pub lemna_penalty: f64,
    pub lemna_max_iters: usize,
    pub lemna_tol: f64,
    pub shapley_exact_cap: usize,
    pub shapley_permutations: usize,
    /// Probability that a neighbor pattern switches an IC off.
    pub neighbor_off_prob: f64,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            ig_steps: 64,
            lime_neighbors: 300,
            lime_kernel_factor: 0.75,
            ridge: 1e-3,
            lemna_neighbors: 300,
            lemna_mixtures: 3,
            lemna_penalty: 1e-2,
            lemna_max_iters: 200,
            lemna_tol: 1e-5,
            shapley_exact_cap: 12,
            shapley_permutations: 200,
            neighbor_off_prob: 0.5,
        }
    }
}

/// Query phase of a feature-level LIME run: cell-wise on/off patterns
/// with zero nullification, one oracle call per neighbor. Returns the
/// oracle-call count. The surrogate fit over `rows*cols` coefficients is
/// deliberately not attempted here; this exists to measure the
/// perturbation cost of skipping the IC adjustment.
pub fn feature_level_lime_queries<P: ProbModel + ?Sized>(
    probe: &P,
    x_v: &Matrix,
    n_neighbors: usize,
    off_prob: f64,
    seed: u64,
) -> Result<u64> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cells = x_v.len();
    let mut count = 0u64;
    for neighbor in 0..n_neighbors {
        let mut masked = x_v.clone();
        if neighbor > 0 {
            for v in masked.as_mut_slice() {
                if rng.random_bool(off_prob) {
                    *v = 0.0;
                }
            }
        }
        let _ = probe.prob(&masked)?;
        count += 1;
    }
    debug_assert!(cells > 0);
    Ok(count)
}

/// Guard for feature-level exact Shapley: the coalition count is
/// `2^cells`, which must fit the forward budget. Errs with the required
/// count when it does not.
pub fn feature_level_shapley_guard(cells: usize, max_forwards: u64) -> Result<u64> {
    if cells >= 63 {
        return Err(Error::config(format!(
            "feature-level exact Shapley over {cells} cells needs 2^{cells} forward passes; \
             infeasible"
        )));
    }
    let required = 1u64 << cells;
    if required > max_forwards {
        return Err(Error::config(format!(
            "feature-level exact Shapley over {cells} cells needs {required} forward passes, \
             budget is {max_forwards}; infeasible"
        )));
    }
    Ok(required)
}

/// Runs one explainer and returns its IC attribution: black-box methods
/// operate on ICs directly, gradient-family attributions are aggregated
/// with [`ic_aggregate`].
pub fn explain_ic(
    id: ExplainerId,
    model: &Model,
    ctx: &MaskContext<'_>,
    settings: &ExplainSettings,
    seed: u64,
) -> Result<ICAttribution> {
    if ctx.ic_count() == 0 {
        return Err(Error::data("sample has no explainable components"));
    }
    let attribution = match id {
        ExplainerId::Gradients => {
            let e_v = gradients_explain(model, &ctx.x_v.matrix)?;
            ICAttribution {
                scores: ic_aggregate(&e_v, ctx.indicator),
                explainer: id,
                forward_passes: 1,
            }
        }
        ExplainerId::Ig => {
            let b_v = ctx.baseline_input()?;
            let e_v = ig_explain(model, &ctx.x_v.matrix, &b_v.matrix, settings.ig_steps)?;
            ICAttribution {
                scores: ic_aggregate(&e_v, ctx.indicator),
                explainer: id,
                forward_passes: settings.ig_steps as u64,
            }
        }
        ExplainerId::Deeplift => {
            let b_v = ctx.baseline_input()?;
            let e_v = deeplift_explain(model, &ctx.x_v.matrix, &b_v.matrix)?;
            ICAttribution {
                scores: ic_aggregate(&e_v, ctx.indicator),
                explainer: id,
                forward_passes: 2,
            }
        }
        ExplainerId::Lime => {
            let probe = CountingProbe::new(model as &dyn ProbModel);
            lime_explain(&probe, ctx, settings.lime_neighbors, settings, seed)?
        }
        ExplainerId::Lemna => {
            let probe = CountingProbe::new(model as &dyn ProbModel);
            lemna_explain(
                &probe,
                ctx,
                settings.lemna_neighbors,
                settings.lemna_mixtures,
                settings,
                seed,
            )?
            .attribution
        }
        ExplainerId::Shapley => {
            let probe = CountingProbe::new(model as &dyn ProbModel);
            let budget = if ctx.ic_count() <= settings.shapley_exact_cap {
                ShapleyBudget::Exact
            } else {
                ShapleyBudget::Sampled {
                    permutations: settings.shapley_permutations,
                }
            };
            shapley_explain(&probe, ctx, budget, settings, seed)?
        }
    };
    if !attribution.is_finite() {
        return Err(Error::runtime(format!(
            "{id} produced non-finite attribution scores"
        )));
    }
    Ok(attribution)
}
