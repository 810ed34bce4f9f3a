//! Plain gradient attribution in the gradient-times-input variant: on
//! embedded tokens the raw gradient scores directions rather than
//! tokens, so the input factor keeps IC aggregation meaningful.

use crate::error::Result;
use crate::explain::Attribution;
use crate::matrix::Matrix;
use crate::net::Model;

pub fn gradients_explain(model: &Model, x_v: &Matrix) -> Result<Attribution> {
    let gradient = model.input_gradient(x_v)?;
    Ok(Attribution {
        values: gradient.zip_map(x_v, |g, x| g * x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{sigmoid, LayerSpec};

    #[test]
    fn zero_input_has_zero_attribution() {
        let model = Model::seeded(
            1,
            4,
            vec![
                LayerSpec::Dense { input: 4, output: 1 },
                LayerSpec::SigmoidHead,
            ],
            1,
        )
        .unwrap();
        let e = gradients_explain(&model, &Matrix::zeros(1, 4)).unwrap();
        assert!(e.values.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_model_matches_closed_form() {
        let model = Model::from_parts(
            1,
            3,
            vec![
                LayerSpec::Dense { input: 3, output: 1 },
                LayerSpec::SigmoidHead,
            ],
            vec![
                crate::net::LayerParams {
                    weights: vec![0.5, -1.0, 0.25],
                    bias: vec![0.1],
                },
                crate::net::LayerParams { weights: vec![], bias: vec![] },
            ],
            vec![false, false],
        )
        .unwrap();
        let x = Matrix::from_vec(1, 3, vec![2.0, 1.0, -4.0]);
        let z = 0.5 * 2.0 - 1.0 * 1.0 + 0.25 * -4.0 + 0.1;
        let p = sigmoid(z);
        let e = gradients_explain(&model, &x).unwrap();
        let w = [0.5, -1.0, 0.25];
        for i in 0..3 {
            let expect = p * (1.0 - p) * w[i] * x.get(0, i);
            assert!((e.values.get(0, i) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_finite_difference_gradient_times_input() {
        let model = Model::seeded(
            3,
            2,
            vec![
                LayerSpec::Conv1d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 2,
                },
                LayerSpec::Relu,
                LayerSpec::GlobalMaxPool,
                LayerSpec::Dense { input: 3, output: 1 },
                LayerSpec::SigmoidHead,
            ],
            7,
        )
        .unwrap();
        let x = Matrix::from_vec(3, 2, vec![0.3, -0.8, 1.2, 0.4, -0.5, 0.7]);
        let e = gradients_explain(&model, &x).unwrap();
        let step = 1e-4;
        let mut probe = x.clone();
        for r in 0..3 {
            for c in 0..2 {
                let orig = probe.get(r, c);
                probe.set(r, c, orig + step);
                let hi = model.prob(&probe).unwrap();
                probe.set(r, c, orig - step);
                let lo = model.prob(&probe).unwrap();
                probe.set(r, c, orig);
                let fd = (hi - lo) / (2.0 * step) * orig;
                let got = e.values.get(r, c);
                let scale = fd.abs().max(got.abs()).max(1e-6);
                assert!((fd - got).abs() / scale < 1e-4);
            }
        }
    }
}
