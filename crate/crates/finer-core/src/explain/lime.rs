//! LIME adjusted to the IC level: binary on/off neighborhoods over
//! components, benign-content masking for the off components, and a
//! proximity-weighted linear surrogate whose coefficients become the
//! attribution.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::explain::{
    ExplainSettings, ExplainerId, ICAttribution, MaskContext, PatternMasker, ProbModel,
};
use crate::matrix::solve_linear;

/// Binary on/off patterns over the components. The first pattern is the
/// unperturbed instance, so its oracle query is part of the budget.
pub(crate) fn neighborhood_patterns(
    count: usize,
    dims: usize,
    off_prob: f64,
    seed: u64,
) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patterns = Vec::with_capacity(count);
    patterns.push(vec![true; dims]);
    while patterns.len() < count {
        let p: Vec<bool> = (0..dims).map(|_| !rng.random_bool(off_prob)).collect();
        patterns.push(p);
    }
    patterns
}

/// Exponential kernel over the Hamming distance to the unperturbed
/// pattern; width scales with sqrt of the dimension.
pub(crate) fn kernel_weights(patterns: &[Vec<bool>], factor: f64) -> Vec<f64> {
    let dims = patterns.first().map_or(0, Vec::len);
    let width = factor * (dims as f64).sqrt();
    patterns
        .iter()
        .map(|p| {
            let d = p.iter().filter(|&&on| !on).count() as f64;
            (-(d * d) / (width * width)).exp()
        })
        .collect()
}

/// Weighted least squares with an intercept column; falls back to ridge
/// regularization when the normal equations are singular. Returns the
/// `dims + 1` coefficients, intercept first.
pub(crate) fn weighted_least_squares(
    patterns: &[Vec<bool>],
    targets: &[f64],
    weights: &[f64],
    ridge: f64,
) -> Result<Vec<f64>> {
    let dims = patterns.first().map_or(0, Vec::len);
    let cols = dims + 1;
    let feature = |p: &Vec<bool>, j: usize| -> f64 {
        if j == 0 {
            1.0
        } else {
            f64::from(p[j - 1])
        }
    };
    let mut normal = vec![vec![0.0; cols]; cols];
    let mut rhs = vec![0.0; cols];
    for ((p, &y), &w) in patterns.iter().zip(targets).zip(weights) {
        for a in 0..cols {
            let fa = feature(p, a);
            if fa == 0.0 {
                continue;
            }
            rhs[a] += w * fa * y;
            for b in a..cols {
                normal[a][b] += w * fa * feature(p, b);
            }
        }
    }
    for a in 0..cols {
        for b in 0..a {
            normal[a][b] = normal[b][a];
        }
    }
    if let Some(solution) = solve_linear(&normal, &rhs, 1e-12) {
        return Ok(solution);
    }
    for (i, row) in normal.iter_mut().enumerate() {
        row[i] += ridge;
    }
    solve_linear(&normal, &rhs, 1e-15)
        .ok_or_else(|| Error::runtime("surrogate normal equations are singular even with ridge"))
}

pub fn lime_explain<P: ProbModel + ?Sized>(
    probe: &P,
    ctx: &MaskContext<'_>,
    n_neighbors: usize,
    settings: &ExplainSettings,
    seed: u64,
) -> Result<ICAttribution> {
    let dims = ctx.ic_count();
    if n_neighbors < dims + 1 {
        return Err(Error::config(format!(
            "lime needs at least {} neighbors for {dims} components",
            dims + 1
        )));
    }
    let patterns = neighborhood_patterns(n_neighbors, dims, settings.neighbor_off_prob, seed);
    let masker = PatternMasker::new(ctx);
    let mut targets = Vec::with_capacity(n_neighbors);
    for pattern in &patterns {
        targets.push(probe.prob(&masker.masked(pattern))?);
    }
    let weights = kernel_weights(&patterns, settings.lime_kernel_factor);
    let coefficients = weighted_least_squares(&patterns, &targets, &weights, settings.ridge)?;
    Ok(ICAttribution {
        scores: coefficients[1..].to_vec(),
        explainer: ExplainerId::Lime,
        forward_passes: n_neighbors as u64,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::explain::CountingProbe;
    use crate::ic::{ic_indicator, BaselineSet};
    use crate::matrix::Matrix;
    use crate::task::{generate_dataset, TaskSpec, Vectorizer};

    pub(crate) struct Fixture {
        #[allow(dead_code)]
        pub spec: TaskSpec,
        pub vectorizer: Vectorizer,
        pub baselines: BaselineSet,
        pub sample: crate::task::ProblemSample,
    }

    pub(crate) fn fixture(seed: u64) -> Fixture {
        let spec = TaskSpec {
            train_benign: 20,
            train_risk: 12,
            test_benign: 2,
            test_risk: 2,
            ics_per_sample: (4, 6),
            ..TaskSpec::default()
        };
        let data = generate_dataset(&spec, seed).unwrap();
        let benign: Vec<_> = data.train.iter().filter(|s| s.label == 0).cloned().collect();
        let baselines = BaselineSet::new(benign, 3).unwrap();
        let sample = data
            .train
            .iter()
            .find(|s| s.label == 1)
            .cloned()
            .unwrap();
        let vectorizer = Vectorizer::new(&spec, 5);
        Fixture {
            spec,
            vectorizer,
            baselines,
            sample,
        }
    }

    /// Oracle that scores each component by whether its rows still match
    /// the original content: an additive model over "IC present" bits.
    pub(crate) struct AdditivePresenceModel {
        pub original: Matrix,
        pub spans: Vec<(usize, usize)>,
        pub weights: Vec<f64>,
        pub bias: f64,
    }

    impl ProbModel for AdditivePresenceModel {
        fn prob(&self, x: &Matrix) -> crate::error::Result<f64> {
            let mut z = self.bias;
            for (j, &(start, len)) in self.spans.iter().enumerate() {
                let present = (start..start + len)
                    .all(|r| x.row(r) == self.original.row(r));
                if present {
                    z += self.weights[j];
                }
            }
            Ok(z)
        }
    }

    struct ConstantModel(f64);
    impl ProbModel for ConstantModel {
        fn prob(&self, _: &Matrix) -> crate::error::Result<f64> {
            Ok(self.0)
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn constant_model_gets_zero_coefficients() {
        let f = fixture(31);
        let x_v = f.vectorizer.vectorize_sample(&f.sample);
        let indicator = ic_indicator(&f.sample, &f.vectorizer);
        let ctx = MaskContext {
            x_v: &x_v,
            indicator: &indicator,
            baselines: &f.baselines,
            vectorizer: &f.vectorizer,
            mask_seed: 9,
        };
        let model = ConstantModel(0.42);
        let e = lime_explain(&model, &ctx, 64, &ExplainSettings::default(), 1).unwrap();
        assert!(e.scores.iter().all(|c| c.abs() < 1e-6));
    }

    #[test]
    fn recovers_planted_additive_weights() {
        let f = fixture(33);
        let x_v = f.vectorizer.vectorize_sample(&f.sample);
        let indicator = ic_indicator(&f.sample, &f.vectorizer);
        let ctx = MaskContext {
            x_v: &x_v,
            indicator: &indicator,
            baselines: &f.baselines,
            vectorizer: &f.vectorizer,
            mask_seed: 9,
        };
        let spans: Vec<(usize, usize)> = indicator
            .ics
            .iter()
            .map(|d| (d.row_start, d.row_len))
            .collect();
        let weights: Vec<f64> = (0..spans.len()).map(|j| 0.05 + 0.03 * j as f64).collect();
        let model = AdditivePresenceModel {
            original: x_v.matrix.clone(),
            spans,
            weights: weights.clone(),
            bias: 0.1,
        };
        let e = lime_explain(&model, &ctx, 400, &ExplainSettings::default(), 2).unwrap();
        assert!(
            pearson(&e.scores, &weights) >= 0.99,
            "pearson {} for {:?} vs {:?}",
            pearson(&e.scores, &weights),
            e.scores,
            weights
        );
    }

    #[test]
    fn forward_counter_equals_neighbor_count() {
        let f = fixture(35);
        let x_v = f.vectorizer.vectorize_sample(&f.sample);
        let indicator = ic_indicator(&f.sample, &f.vectorizer);
        let ctx = MaskContext {
            x_v: &x_v,
            indicator: &indicator,
            baselines: &f.baselines,
            vectorizer: &f.vectorizer,
            mask_seed: 9,
        };
        let model = ConstantModel(0.5);
        let probe = CountingProbe::new(&model as &dyn ProbModel);
        let e = lime_explain(&probe, &ctx, 77, &ExplainSettings::default(), 3).unwrap();
        assert_eq!(probe.count(), 77);
        assert_eq!(e.forward_passes, 77);
    }

    #[test]
    fn rejects_too_few_neighbors() {
        let f = fixture(37);
        let x_v = f.vectorizer.vectorize_sample(&f.sample);
        let indicator = ic_indicator(&f.sample, &f.vectorizer);
        let ctx = MaskContext {
            x_v: &x_v,
            indicator: &indicator,
            baselines: &f.baselines,
            vectorizer: &f.vectorizer,
            mask_seed: 9,
        };
        let model = ConstantModel(0.5);
        assert!(lime_explain(&model, &ctx, indicator.len(), &ExplainSettings::default(), 3).is_err());
    }
}
