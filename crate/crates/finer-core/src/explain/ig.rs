//! Integrated gradients: midpoint-rule Riemann sum of input gradients
//! along the straight path from the baseline to the input, scaled by
//! the input-baseline difference. Exactly `steps` gradient evaluations.

use crate::error::{Error, Result};
use crate::explain::Attribution;
use crate::matrix::Matrix;
use crate::net::Model;

pub fn ig_explain(model: &Model, x_v: &Matrix, b_v: &Matrix, steps: usize) -> Result<Attribution> {
    if steps == 0 {
        return Err(Error::config("integrated gradients needs steps >= 1"));
    }
    if x_v.shape() != b_v.shape() {
        return Err(Error::data(format!(
            "baseline shape {:?} does not match input shape {:?}",
            b_v.shape(),
            x_v.shape()
        )));
    }
    let mut accumulated = Matrix::zeros(x_v.rows(), x_v.cols());
    for step in 0..steps {
        let alpha = (step as f64 + 0.5) / steps as f64;
        let point = b_v.zip_map(x_v, |b, x| b + alpha * (x - b));
        let gradient = model.input_gradient(&point)?;
        for (acc, g) in accumulated.as_mut_slice().iter_mut().zip(gradient.as_slice()) {
            *acc += g;
        }
    }
    let inv = 1.0 / steps as f64;
    Ok(Attribution {
        values: x_v.zip_map(b_v, |x, b| x - b).zip_map(&accumulated, |d, g| d * g * inv),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LayerSpec;

    fn nonlinear_net(seed: u64) -> Model {
        Model::seeded(
            4,
            2,
            vec![
                LayerSpec::Conv1d {
                    in_channels: 2,
                    out_channels: 4,
                    kernel: 2,
                },
                LayerSpec::Relu,
                LayerSpec::GlobalMaxPool,
                LayerSpec::Dense { input: 4, output: 1 },
                LayerSpec::SigmoidHead,
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn identical_input_and_baseline_give_zero() {
        let model = nonlinear_net(1);
        let x = Matrix::from_vec(4, 2, vec![0.5; 8]);
        let e = ig_explain(&model, &x, &x, 16).unwrap();
        assert!(e.values.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn completeness_on_linear_model() {
        let model = Model::seeded(
            1,
            6,
            vec![
                LayerSpec::Dense { input: 6, output: 1 },
                LayerSpec::SigmoidHead,
            ],
            3,
        )
        .unwrap();
        let x = Matrix::from_vec(1, 6, vec![0.9, -0.4, 1.3, 0.2, -1.1, 0.6]);
        let b = Matrix::zeros(1, 6);
        let e = ig_explain(&model, &x, &b, 64).unwrap();
        let delta = model.prob(&x).unwrap() - model.prob(&b).unwrap();
        assert!((e.values.sum() - delta).abs() < 1e-3);
    }

    #[test]
    fn completeness_error_shrinks_with_steps() {
        let model = nonlinear_net(5);
        let x = Matrix::from_vec(4, 2, vec![0.7, -0.9, 1.4, 0.3, -0.6, 1.0, 0.2, -1.2]);
        let b = Matrix::from_vec(4, 2, vec![-0.2, 0.1, 0.0, -0.4, 0.5, -0.1, 0.3, 0.2]);
        let delta = model.prob(&x).unwrap() - model.prob(&b).unwrap();
        let errs: Vec<f64> = [16, 64, 256]
            .iter()
            .map(|&s| {
                let e = ig_explain(&model, &x, &b, s).unwrap();
                (e.values.sum() - delta).abs()
            })
            .collect();
        assert!(errs[1] < errs[0], "error did not shrink 16->64: {errs:?}");
        assert!(errs[2] < errs[1], "error did not shrink 64->256: {errs:?}");
        assert!(errs[1] <= 5e-3);
    }
}
