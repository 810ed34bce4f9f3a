//! Supervised training with momentum SGD and a weighted multi-set
//! cross-entropy objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{LayerParams, Model};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Momentum coefficient in `[0, 1)`.
    pub momentum: f64,
    /// Stop at the end of the first epoch whose training accuracy
    /// reaches this value; `None` always runs `max_epochs`.
    pub target_train_accuracy: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Inputs with binary labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub inputs: Vec<Matrix>,
    pub labels: Vec<u8>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// An auxiliary set with a weight and a uniform target label; contributes
/// `weight * mean-CE(set -> target)` to each optimization step.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub inputs: Vec<Matrix>,
    pub target: u8,
    pub weight: f64,
}

pub fn binary_cross_entropy(p: f64, y: f64) -> f64 {
    let eps = 1e-12;
    let p = p.clamp(eps, 1.0 - eps);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Momentum buffers, one per layer.
pub(crate) struct Momentum {
    velocity: Vec<LayerParams>,
}

impl Momentum {
    pub(crate) fn new(model: &Model) -> Self {
        Momentum {
            velocity: model.params().iter().map(LayerParams::zeros_like).collect(),
        }
    }

    /// Folds fresh gradients into the velocity and returns the update to
    /// subtract from the parameters.
    pub(crate) fn step(
        &mut self,
        grads: &[LayerParams],
        lr: f64,
        momentum: f64,
    ) -> Vec<LayerParams> {
        for (v, g) in self.velocity.iter_mut().zip(grads) {
            for (vw, gw) in v.weights.iter_mut().zip(&g.weights) {
                *vw = momentum * *vw + gw;
            }
            for (vb, gb) in v.bias.iter_mut().zip(&g.bias) {
                *vb = momentum * *vb + gb;
            }
        }
        self.velocity
            .iter()
            .map(|v| LayerParams {
                weights: v.weights.iter().map(|w| lr * w).collect(),
                bias: v.bias.iter().map(|b| lr * b).collect(),
            })
            .collect()
    }
}

pub(crate) fn accumulate_grads(into: &mut [LayerParams], from: &[LayerParams], scale: f64) {
    for (acc, g) in into.iter_mut().zip(from) {
        for (a, w) in acc.weights.iter_mut().zip(&g.weights) {
            *a += scale * w;
        }
        for (a, b) in acc.bias.iter_mut().zip(&g.bias) {
            *a += scale * b;
        }
    }
}

/// Loss and gradient of one labeled example; the head gradient for
/// sigmoid + cross entropy is `p - y`.
pub(crate) fn example_grads(
    model: &Model,
    x: &Matrix,
    y: f64,
) -> Result<(f64, Vec<LayerParams>)> {
    let trace = model.forward(x)?;
    let p = trace.output;
    let (_, grads) = model.backward_from_head(x, &trace, p - y);
    Ok((binary_cross_entropy(p, y), grads))
}

/// Trains `model` on `data` with optional auxiliary loss terms. Only
/// unfrozen layers change. Deterministic given the seed.
pub fn fit(
    model: &Model,
    data: &LabeledSet,
    cfg: &TrainConfig,
    loss_terms: &[LossTerm],
) -> Result<Model> {
    cfg.validate()?;
    if data.inputs.len() != data.labels.len() {
        return Err(Error::data("labels must match inputs"));
    }
    if data.is_empty() {
        return Err(Error::data("training set is empty"));
    }

    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut momentum = Momentum::new(&model);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: Vec<LayerParams> =
                model.params().iter().map(LayerParams::zeros_like).collect();
            let mut loss = 0.0;
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let (l, g) = example_grads(&model, &data.inputs[i], f64::from(data.labels[i]))?;
                loss += l * inv;
                accumulate_grads(&mut grads, &g, inv);
            }
            for term in loss_terms {
                if term.inputs.is_empty() || term.weight == 0.0 {
                    continue;
                }
                let inv = term.weight / term.inputs.len() as f64;
                for x in &term.inputs {
                    let (l, g) = example_grads(&model, x, f64::from(term.target))?;
                    loss += l * inv;
                    accumulate_grads(&mut grads, &g, inv);
                }
            }
            if !loss.is_finite() {
                return Err(Error::runtime(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_index}"
                )));
            }
            let update = momentum.step(&grads, cfg.learning_rate, cfg.momentum);
            model.apply_update(&update);
        }
        if let Some(target) = cfg.target_train_accuracy {
            if accuracy(&model, data)? >= target {
                break;
            }
        }
    }
    Ok(model)
}

/// Fraction of correct hard labels.
pub fn accuracy(model: &Model, data: &LabeledSet) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        if model.predict_label(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LayerSpec;

    fn toy_config(seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.5,
            batch_size: 8,
            max_epochs: epochs,
            seed,
            momentum: 0.9,
            target_train_accuracy: None,
        }
    }

    fn separable_set() -> LabeledSet {
        // Two clusters around (-1,-1) and (1,1), 40 points each.
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let jitter = (i as f64) * 0.01;
            inputs.push(Matrix::from_vec(1, 2, vec![-1.0 - jitter, -1.0 + jitter]));
            labels.push(0);
            inputs.push(Matrix::from_vec(1, 2, vec![1.0 + jitter, 1.0 - jitter]));
            labels.push(1);
        }
        LabeledSet { inputs, labels }
    }

    fn mlp_2d(seed: u64) -> Model {
        Model::seeded(
            1,
            2,
            vec![
                LayerSpec::Dense { input: 2, output: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 4, output: 1 },
                LayerSpec::SigmoidHead,
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn separable_set_reaches_full_accuracy() {
        let model = mlp_2d(1);
        let data = separable_set();
        let trained = fit(&model, &data, &toy_config(2, 200), &[]).unwrap();
        assert_eq!(accuracy(&trained, &data).unwrap(), 1.0);
    }

    #[test]
    fn all_frozen_leaves_params_bit_identical() {
        let mut model = mlp_2d(3);
        model.set_frozen(vec![true; 4]).unwrap();
        let data = separable_set();
        let trained = fit(&model, &data, &toy_config(2, 3), &[]).unwrap();
        for (a, b) in model.params().iter().zip(trained.params()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.bias.iter().zip(&b.bias) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn frozen_layer_is_never_updated() {
        let mut model = mlp_2d(4);
        model.set_frozen(vec![true, false, false, false]).unwrap();
        let before = model.params()[0].clone();
        let trained = fit(&model, &separable_set(), &toy_config(5, 5), &[]).unwrap();
        assert_eq!(trained.params()[0], before);
        assert_ne!(trained.params()[2], model.params()[2]);
    }

    #[test]
    fn zero_weight_term_matches_training_without_it() {
        let model = mlp_2d(6);
        let data = separable_set();
        let aux = LossTerm {
            inputs: vec![Matrix::from_vec(1, 2, vec![0.3, -0.4])],
            target: 1,
            weight: 0.0,
        };
        let plain = fit(&model, &data, &toy_config(7, 10), &[]).unwrap();
        let with_term = fit(&model, &data, &toy_config(7, 10), &[aux]).unwrap();
        assert_eq!(plain.params(), with_term.params());
    }

    #[test]
    fn identical_seeds_give_bit_identical_trajectories() {
        let model = mlp_2d(8);
        let data = separable_set();
        let a = fit(&model, &data, &toy_config(9, 12), &[]).unwrap();
        let b = fit(&model, &data, &toy_config(9, 12), &[]).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            for (x, y) in pa.weights.iter().zip(&pb.weights) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
