//! Checkpoint serialization: a single self-describing JSON document with
//! a format version, layer specs, freeze flags, and full-precision
//! decimal parameter arrays. The decimal encoding round-trips `f64`
//! exactly, so load∘save is the identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{LayerParams, LayerSpec, Model};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    input_rows: usize,
    input_cols: usize,
    layers: Vec<LayerSpec>,
    frozen: Vec<bool>,
    params: Vec<LayerParams>,
}

pub fn save_checkpoint(model: &Model) -> Vec<u8> {
    let doc = CheckpointDoc {
        format_version: CHECKPOINT_VERSION,
        input_rows: model.input_shape().0,
        input_cols: model.input_shape().1,
        layers: model.layers().to_vec(),
        frozen: model.frozen().to_vec(),
        params: model.params().to_vec(),
    };
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("checkpoint serialization");
    bytes.push(b'\n');
    bytes
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Model> {
    let doc: CheckpointDoc = serde_json::from_slice(bytes)
        .map_err(|e| Error::data(format!("malformed checkpoint: {e}")))?;
    if doc.format_version != CHECKPOINT_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            doc.format_version
        )));
    }
    Model::from_parts(
        doc.input_rows,
        doc.input_cols,
        doc.layers,
        doc.params,
        doc.frozen,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn sample_model() -> Model {
        Model::seeded(
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
            42,
        )
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = sample_model();
        let first = save_checkpoint(&model);
        let reloaded = load_checkpoint(&first).unwrap();
        let second = save_checkpoint(&reloaded);
        assert_eq!(first, second);
    }

    #[test]
    fn round_trip_preserves_params_exactly() {
        let model = sample_model();
        let reloaded = load_checkpoint(&save_checkpoint(&model)).unwrap();
        for (a, b) in model.params().iter().zip(reloaded.params()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(model.layers(), reloaded.layers());
        assert_eq!(model.frozen(), reloaded.frozen());
    }

    #[test]
    fn round_trip_preserves_predictions() {
        let model = sample_model();
        let reloaded = load_checkpoint(&save_checkpoint(&model)).unwrap();
        let x = Matrix::from_vec(3, 2, vec![0.4, -0.2, 1.1, 0.0, -0.6, 0.9]);
        assert_eq!(
            model.prob(&x).unwrap().to_bits(),
            reloaded.prob(&x).unwrap().to_bits()
        );
    }

    #[test]
    fn truncated_input_is_rejected() {
        let bytes = save_checkpoint(&sample_model());
        let truncated = &bytes[..bytes.len() / 2];
        match load_checkpoint(truncated) {
            Err(Error::Data(msg)) => assert!(msg.contains("malformed")),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut text = String::from_utf8(save_checkpoint(&sample_model())).unwrap();
        text = text.replace("\"format_version\": 1", "\"format_version\": 99");
        match load_checkpoint(text.as_bytes()) {
            Err(Error::Data(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
