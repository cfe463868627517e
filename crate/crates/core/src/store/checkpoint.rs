//! JSON checkpoints of the compressed state.
//!
//! Gradients are not stored. The dense half parameters are rebuilt on load
//! by casting and expanding the compressed single parameters.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ModelState;
use crate::error::{Error, Result};
use crate::pruner::PrunedIndexSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointLayer {
    pub layer_id: String,
    pub shape: Vec<usize>,
    pub indices: Vec<u32>,
    pub theta32: Vec<f32>,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub layers: Vec<CheckpointLayer>,
    /// Adam step counter, needed for bias correction on resume.
    #[serde(default)]
    pub step: u32,
}

impl Checkpoint {
    pub fn from_state(state: &ModelState) -> Self {
        let layers = state
            .layers
            .iter()
            .map(|l| {
                let c = &l.compressed;
                CheckpointLayer {
                    layer_id: l.layer_id().to_string(),
                    shape: l.shape.clone(),
                    indices: c.ind.indices().to_vec(),
                    theta32: c.theta32.clone(),
                    adam_m: c.adam_m.clone(),
                    adam_v: c.adam_v.clone(),
                }
            })
            .collect();
        Self {
            layers,
            step: state.adam_step,
        }
    }

    pub fn into_state(self) -> Result<ModelState> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in self.layers {
            let dense_len = l.shape.iter().product();
            let ind = Arc::new(PrunedIndexSet::new(l.layer_id, dense_len, l.indices)?);
            if l.adam_m.len() != ind.len() || l.adam_v.len() != ind.len() {
                return Err(Error::Dimension(format!(
                    "checkpoint layer {}: moment lengths differ from {} indices",
                    ind.layer_id(),
                    ind.len()
                )));
            }
            let mut layer = ModelState::layer(l.shape, ind, l.theta32)?;
            layer.compressed.adam_m = l.adam_m;
            layer.compressed.adam_v = l.adam_v;
            layers.push(layer);
        }
        Ok(ModelState {
            layers,
            adam_step: self.step,
            ..Default::default()
        })
    }
}

pub fn save_checkpoint(state: &ModelState) -> Result<String> {
    Ok(serde_json::to_string(&Checkpoint::from_state(state))?)
}

pub fn load_checkpoint(json: &str) -> Result<ModelState> {
    serde_json::from_str::<Checkpoint>(json)?.into_state()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn roundtrip_restores_half_params() {
        let dense = Tensor::from_f32(&[2, 3], vec![0.1, -0.2, 0.3, 1e-5, 7.0, -1.5]).unwrap();
        let ind = Arc::new(PrunedIndexSet::new("w0", 6, vec![0, 2, 4, 5]).unwrap());
        let mut state = ModelState::from_dense(vec![(dense, ind)]).unwrap();
        state.layers[0].compressed.adam_m[1] = 0.25;
        state.adam_step = 3;
        let json = save_checkpoint(&state).unwrap();
        let back = load_checkpoint(&json).unwrap();
        back.check_invariants().unwrap();
        assert!(back.layers()[0]
            .theta16()
            .bits_eq(state.layers()[0].theta16()));
        assert_eq!(
            back.layers()[0].compressed().adam_m(),
            state.layers()[0].compressed().adam_m()
        );
        assert_eq!(back.adam_step(), 3);
        assert_eq!(save_checkpoint(&back).unwrap(), json);
    }

    #[test]
    fn rejects_inconsistent_layers() {
        let bad = r#"{"layers":[{"layer_id":"w","shape":[2],"indices":[0,1],"theta32":[1.0],"adam_m":[0,0],"adam_v":[0,0]}]}"#;
        assert!(load_checkpoint(bad).is_err());
        let extra = r#"{"layers":[],"bogus":1}"#;
        assert!(load_checkpoint(extra).is_err());
    }
}
