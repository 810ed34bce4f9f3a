//! DeepLIFT with the Rescale rule, propagated in *contribution* form:
//! each layer receives the contributions of its outputs to the output
//! delta and redistributes them onto its inputs, so the
//! summation-to-delta identity holds at every layer by construction.
//! Costs exactly two forward traces (input and baseline) plus one
//! layer-wise backward walk.
//!
//! Per-layer rules:
//! - linear layers (dense, conv1d) split an output's contribution across
//!   its inputs proportionally to `w * delta_in`,
//! - elementwise layers (relu) pass contributions through unchanged,
//! - global max pooling routes a column's contribution to the input
//!   argmax (of the input trace for positive deltas, of the baseline
//!   trace for negative ones), which always lands on a cell with a
//!   nonzero delta and a bounded ratio.

use crate::error::{Error, Result};
use crate::explain::Attribution;
use crate::matrix::Matrix;
use crate::net::{LayerSpec, Model};

pub fn deeplift_explain(model: &Model, x_v: &Matrix, b_v: &Matrix) -> Result<Attribution> {
    if x_v.shape() != b_v.shape() {
        return Err(Error::data(format!(
            "baseline shape {:?} does not match input shape {:?}",
            b_v.shape(),
            x_v.shape()
        )));
    }
    let trace_x = model.forward(x_v)?;
    let trace_b = model.forward(b_v)?;
    let layers = model.layers();
    let n = layers.len();

    // Contribution of the pre-sigmoid scalar equals the probability delta.
    let mut contrib = Matrix::from_vec(1, 1, vec![trace_x.output - trace_b.output]);

    for i in (0..n - 1).rev() {
        let (in_x, in_b) = if i == 0 {
            (x_v, b_v)
        } else {
            (&trace_x.activations[i - 1], &trace_b.activations[i - 1])
        };
        contrib = match layers[i] {
            LayerSpec::Dense { input, output } => {
                let w = &model.params()[i].weights;
                let dx: Vec<f64> = in_x
                    .as_slice()
                    .iter()
                    .zip(in_b.as_slice())
                    .map(|(a, b)| a - b)
                    .collect();
                let mut c_in = vec![0.0; input];
                for o in 0..output {
                    let c = contrib.get(0, o);
                    if c == 0.0 {
                        continue;
                    }
                    let row = &w[o * input..(o + 1) * input];
                    let dz: f64 = row.iter().zip(&dx).map(|(w, d)| w * d).sum();
                    if dz == 0.0 {
                        debug_assert!(c.abs() < 1e-9, "contribution on a zero-delta unit");
                        continue;
                    }
                    let scale = c / dz;
                    for (ci, (wi, di)) in c_in.iter_mut().zip(row.iter().zip(&dx)) {
                        *ci += scale * wi * di;
                    }
                }
                Matrix::from_vec(in_x.rows(), in_x.cols(), c_in)
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let w = &model.params()[i].weights;
                let mut c_in = Matrix::zeros(in_x.rows(), in_x.cols());
                for t in 0..contrib.rows() {
                    for o in 0..out_channels {
                        let c = contrib.get(t, o);
                        if c == 0.0 {
                            continue;
                        }
                        let mut dz = 0.0;
                        for k in 0..kernel {
                            let wbase = (o * kernel + k) * in_channels;
                            let rx = in_x.row(t + k);
                            let rb = in_b.row(t + k);
                            for ch in 0..in_channels {
                                dz += w[wbase + ch] * (rx[ch] - rb[ch]);
                            }
                        }
                        if dz == 0.0 {
                            debug_assert!(c.abs() < 1e-9, "contribution on a zero-delta unit");
                            continue;
                        }
                        let scale = c / dz;
                        for k in 0..kernel {
                            let wbase = (o * kernel + k) * in_channels;
                            let rx = in_x.row(t + k);
                            let rb = in_b.row(t + k);
                            let out_row = c_in.row_mut(t + k);
                            for ch in 0..in_channels {
                                out_row[ch] += scale * w[wbase + ch] * (rx[ch] - rb[ch]);
                            }
                        }
                    }
                }
                c_in
            }
            LayerSpec::Relu => contrib,
            LayerSpec::GlobalMaxPool => {
                let mut c_in = Matrix::zeros(in_x.rows(), in_x.cols());
                for col in 0..in_x.cols() {
                    let c = contrib.get(0, col);
                    if c == 0.0 {
                        continue;
                    }
                    let max_x = trace_x.activations[i].get(0, col);
                    let max_b = trace_b.activations[i].get(0, col);
                    let delta = max_x - max_b;
                    if delta == 0.0 {
                        debug_assert!(c.abs() < 1e-9, "contribution on a zero-delta column");
                        continue;
                    }
                    let source = if delta > 0.0 { in_x } else { in_b };
                    let target = if delta > 0.0 { max_x } else { max_b };
                    let row = (0..in_x.rows())
                        .find(|&r| source.get(r, col) == target)
                        .expect("pooled maximum must exist");
                    c_in.set(row, col, c);
                }
                c_in
            }
            LayerSpec::SigmoidHead => unreachable!("head handled analytically"),
        };
    }
    Ok(Attribution { values: contrib })
}
