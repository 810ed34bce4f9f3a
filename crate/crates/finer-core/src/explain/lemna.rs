//! LEMNA adjusted to the IC level: the same on/off neighborhood as LIME,
//! fitted with a mixture of linear regressions by EM where each M-step
//! pushes the component coefficients through a fused-lasso proximal
//! operator (1-D total variation). The attribution comes from the
//! component most responsible for the unperturbed instance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::explain::lime::{kernel_weights, neighborhood_patterns, weighted_least_squares};
use crate::explain::{ExplainSettings, ExplainerId, ICAttribution, MaskContext, PatternMasker, ProbModel};

#[derive(Debug, Clone)]
pub struct LemnaOutcome {
    pub attribution: ICAttribution,
    pub converged: bool,
    pub iterations: usize,
}

/// Proximal operator of `lambda * total-variation` for a 1-D signal
/// (Condat's direct algorithm). Exact up to floating point.
pub fn tv1d_prox(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 || lambda <= 0.0 {
        return y.to_vec();
    }
    let mut x = vec![0.0; n];
    let (mut k, mut k0, mut kminus, mut kplus) = (0usize, 0usize, 0usize, 0usize);
    let mut vmin = y[0] - lambda;
    let mut vmax = y[0] + lambda;
    let mut umin = lambda;
    let mut umax = -lambda;
    loop {
        while k == n - 1 {
            if umin < 0.0 {
                // The last segment must jump down.
                loop {
                    x[k0] = vmin;
                    k0 += 1;
                    if k0 > kminus {
                        break;
                    }
                }
                k = k0;
                kminus = k;
                vmin = y[k];
                umin = lambda;
                umax = vmin + lambda - vmax;
            } else if umax > 0.0 {
                // The last segment must jump up.
                loop {
                    x[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                k = k0;
                kplus = k;
                vmax = y[k];
                umax = -lambda;
                umin = vmax - lambda - vmin;
            } else {
                // Flat tail.
                vmin += umin / (k - k0 + 1) as f64;
                loop {
                    x[k0] = vmin;
                    k0 += 1;
                    if k0 > k {
                        break;
                    }
                }
                return x;
            }
        }
        if y[k + 1] + umin < vmin - lambda {
            // A downward jump is certain.
            loop {
                x[k0] = vmin;
                k0 += 1;
                if k0 > kminus {
                    break;
                }
            }
            k = k0;
            kminus = k;
            kplus = k;
            vmin = y[k];
            vmax = y[k] + 2.0 * lambda;
            umin = lambda;
            umax = -lambda;
        } else if y[k + 1] + umax > vmax + lambda {
            // An upward jump is certain.
            loop {
                x[k0] = vmax;
                k0 += 1;
                if k0 > kplus {
                    break;
                }
            }
            k = k0;
            kminus = k;
            kplus = k;
            vmax = y[k];
            vmin = y[k] - 2.0 * lambda;
            umin = lambda;
            umax = -lambda;
        } else {
            // Extend the current segment.
            k += 1;
            umin += y[k] - vmin;
            umax += y[k] - vmax;
            if umin >= lambda {
                vmin += (umin - lambda) / (k - k0 + 1) as f64;
                umin = lambda;
                kminus = k;
            }
            if umax <= -lambda {
                vmax += (umax + lambda) / (k - k0 + 1) as f64;
                umax = -lambda;
                kplus = k;
            }
        }
    }
}

fn gaussian_log_pdf(residual: f64, sigma2: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * sigma2).ln() + residual * residual / sigma2)
}

struct Component {
    /// Intercept-first coefficients.
    beta: Vec<f64>,
    sigma2: f64,
    pi: f64,
}

fn predict(beta: &[f64], pattern: &[bool]) -> f64 {
    beta[0]
        + pattern
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(j, _)| beta[j + 1])
            .sum::<f64>()
}

pub fn lemna_explain<P: ProbModel + ?Sized>(
    probe: &P,
    ctx: &MaskContext<'_>,
    n_neighbors: usize,
    mixtures: usize,
    settings: &ExplainSettings,
    seed: u64,
) -> Result<LemnaOutcome> {
    let dims = ctx.ic_count();
    if n_neighbors < dims + 1 {
        return Err(Error::config(format!(
            "lemna needs at least {} neighbors for {dims} components",
            dims + 1
        )));
    }
    if mixtures == 0 {
        return Err(Error::config("lemna needs at least one mixture component"));
    }

    let patterns = neighborhood_patterns(n_neighbors, dims, settings.neighbor_off_prob, seed);
    let masker = PatternMasker::new(ctx);
    let mut targets = Vec::with_capacity(n_neighbors);
    for pattern in &patterns {
        targets.push(probe.prob(&masker.masked(pattern))?);
    }
    let sample_weights = kernel_weights(&patterns, settings.lime_kernel_factor);
    let total_weight: f64 = sample_weights.iter().sum();

    // Random responsibilities initialize the EM; normalized per sample.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1e3a);
    let mut resp = vec![vec![0.0; mixtures]; n_neighbors];
    for row in resp.iter_mut() {
        let mut sum = 0.0;
        for r in row.iter_mut() {
            *r = rng.random_range(0.05..1.0);
            sum += *r;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
    }

    let mut components: Vec<Component> = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..settings.lemna_max_iters {
        iterations = iter + 1;
        // M-step: weighted least squares per component, fused-lasso
        // proximal step on the coefficient sequence (intercept excluded).
        components = (0..mixtures)
            .map(|kcomp| {
                let u: Vec<f64> = sample_weights
                    .iter()
                    .zip(&resp)
                    .map(|(&w, r)| w * r[kcomp])
                    .collect();
                let u_sum: f64 = u.iter().sum();
                let mut beta = if u_sum > 1e-12 {
                    weighted_least_squares(&patterns, &targets, &u, settings.ridge)?
                } else {
                    vec![0.0; dims + 1]
                };
                if settings.lemna_penalty > 0.0 {
                    let smoothed = tv1d_prox(&beta[1..], settings.lemna_penalty);
                    beta[1..].copy_from_slice(&smoothed);
                }
                let mut sq = 0.0;
                for ((p, &y), &ui) in patterns.iter().zip(&targets).zip(&u) {
                    let res = y - predict(&beta, p);
                    sq += ui * res * res;
                }
                let sigma2 = if u_sum > 1e-12 { (sq / u_sum).max(1e-9) } else { 1e-9 };
                Ok(Component {
                    beta,
                    sigma2,
                    pi: (u_sum / total_weight).max(1e-12),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        // E-step and weighted log-likelihood via log-sum-exp.
        let mut ll = 0.0;
        for (i, (p, &y)) in patterns.iter().zip(&targets).enumerate() {
            let logs: Vec<f64> = components
                .iter()
                .map(|c| c.pi.ln() + gaussian_log_pdf(y - predict(&c.beta, p), c.sigma2))
                .collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logs.iter().map(|l| (l - max).exp()).sum();
            let log_norm = max + sum_exp.ln();
            for (kcomp, l) in logs.iter().enumerate() {
                resp[i][kcomp] = (l - log_norm).exp();
            }
            ll += sample_weights[i] * log_norm;
        }

        if (ll - prev_ll).abs() < settings.lemna_tol {
            converged = true;
            break;
        }
        prev_ll = ll;
    }

    // Attribution from the component owning the unperturbed instance
    // (pattern 0 is all-on by construction).
    let best = (0..mixtures)
        .max_by(|&a, &b| resp[0][a].total_cmp(&resp[0][b]))
        .unwrap();
    Ok(LemnaOutcome {
        attribution: ICAttribution {
            scores: components[best].beta[1..].to_vec(),
            explainer: ExplainerId::Lemna,
            forward_passes: n_neighbors as u64,
        },
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::lime::lime_explain;
    use crate::explain::lime::tests::{fixture, AdditivePresenceModel};
    use crate::ic::ic_indicator;
    use crate::matrix::Matrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Certifies prox optimality via the KKT conditions of the strictly
    /// convex fused-lasso objective: partial residual sums stay within
    /// [-lambda, lambda], hit the boundary at jumps, and vanish overall.
    fn assert_prox_optimal(y: &[f64], x: &[f64], lambda: f64) {
        let n = y.len();
        let mut s = 0.0;
        for j in 0..n {
            s += y[j] - x[j];
            if j + 1 < n {
                assert!(
                    s.abs() <= lambda + 1e-9,
                    "partial sum {s} exceeds lambda {lambda} at {j}"
                );
                let jump = x[j + 1] - x[j];
                if jump.abs() > 1e-9 {
                    let expect = -lambda * jump.signum();
                    assert!(
                        (s - expect).abs() <= 1e-9,
                        "jump at {j} requires boundary sum {expect}, got {s}"
                    );
                }
            } else {
                assert!(s.abs() <= 1e-9, "residuals must sum to zero, got {s}");
            }
        }
    }

    #[test]
    fn tv_prox_satisfies_optimality_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..200 {
            let n = rng.random_range(1..25usize);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lambda = rng.random_range(0.01..1.5);
            let x = tv1d_prox(&y, lambda);
            assert_eq!(x.len(), n, "case {case}");
            assert_prox_optimal(&y, &x, lambda);
        }
    }

    #[test]
    fn tv_prox_flattens_fully_at_large_lambda() {
        let y = vec![1.0, -2.0, 3.0, 0.5];
        let x = tv1d_prox(&y, 100.0);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        for v in x {
            assert!((v - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn single_mixture_zero_penalty_reduces_to_lime() {
        let f = fixture(41);
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
        let weights: Vec<f64> = (0..spans.len()).map(|j| 0.1 * (j as f64 + 1.0)).collect();
        let model = AdditivePresenceModel {
            original: x_v.matrix.clone(),
            spans,
            weights,
            bias: 0.05,
        };
        let mut settings = ExplainSettings {
            lemna_penalty: 0.0,
            ..ExplainSettings::default()
        };
        settings.lime_neighbors = 200;
        settings.lemna_neighbors = 200;
        let lime = lime_explain(&model, &ctx, 200, &settings, 55).unwrap();
        let lemna = lemna_explain(&model, &ctx, 200, 1, &settings, 55).unwrap();
        assert!(lemna.converged);
        for (a, b) in lemna.attribution.scores.iter().zip(&lime.scores) {
            assert!((a - b).abs() < 1e-3, "lemna {a} vs lime {b}");
        }
    }

    struct ConstantModel(f64);
    impl ProbModel for ConstantModel {
        fn prob(&self, _: &Matrix) -> crate::error::Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn constant_model_gets_zero_coefficients() {
        let f = fixture(43);
        let x_v = f.vectorizer.vectorize_sample(&f.sample);
        let indicator = ic_indicator(&f.sample, &f.vectorizer);
        let ctx = MaskContext {
            x_v: &x_v,
            indicator: &indicator,
            baselines: &f.baselines,
            vectorizer: &f.vectorizer,
            mask_seed: 9,
        };
        let model = ConstantModel(0.3);
        let out =
            lemna_explain(&model, &ctx, 64, 3, &ExplainSettings::default(), 5).unwrap();
        assert!(out.attribution.scores.iter().all(|c| c.abs() < 1e-6));
    }

    #[test]
    fn stronger_penalty_shrinks_adjacent_differences() {
        let f = fixture(45);
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
        let weights: Vec<f64> = (0..spans.len())
            .map(|j| if j % 2 == 0 { 0.4 } else { -0.2 })
            .collect();
        let model = AdditivePresenceModel {
            original: x_v.matrix.clone(),
            spans,
            weights,
            bias: 0.0,
        };
        let tv = |scores: &[f64]| -> f64 {
            scores.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
        };
        let mut prev = f64::INFINITY;
        for &penalty in &[0.0, 0.05, 0.2, 1.0] {
            let settings = ExplainSettings {
                lemna_penalty: penalty,
                ..ExplainSettings::default()
            };
            let out = lemna_explain(&model, &ctx, 200, 1, &settings, 66).unwrap();
            let cur = tv(&out.attribution.scores);
            assert!(
                cur <= prev + 1e-9,
                "tv did not shrink: {cur} after {prev} at penalty {penalty}"
            );
            prev = cur;
        }
    }
}
