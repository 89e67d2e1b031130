//! Recurrent steering network: a dense input layer, three stacked LSTM layers
//! and a linear readout, trained by behavior cloning.

mod checkpoint;
mod gradcheck;
mod lstm;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use lstm::{backward, backward_accumulate, forward, forward_sequence, Dense, LstmLayer, LstmParams};
pub use train::{mean_squared_error, train, train_from, Optimizer, TrainConfig};

use crate::cogmap::CognitiveMap;
use crate::percept::PerceptionVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INPUT_DIM: usize = 23;
pub const DENSE_DIM: usize = 16;
pub const HIDDEN_DIM: usize = 64;
pub const LSTM_LAYERS: usize = 3;
pub const SEQ_LEN: usize = 20;
/// Steering saturation applied to the network output (rad).
pub const STEER_SATURATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuroError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T, E = NeuroError> = std::result::Result<T, E>;

/// Per-feature input scaling, stored with the weights so inference sees the
/// same inputs as training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub image_w: f64,
    pub image_h: f64,
    /// Meters per unit for metric distances.
    pub distance_scale: f64,
    /// m/s per unit.
    pub speed_scale: f64,
    /// Meters per unit for `D_o`.
    pub offset_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            image_w: 320.0,
            image_h: 240.0,
            distance_scale: 10.0,
            speed_scale: 30.0,
            offset_scale: 3.5,
        }
    }
}

impl Normalization {
    fn vector(&self, v: &PerceptionVector, out: &mut [f64]) {
        if !v.lane_present {
            out[..5].fill(0.0);
            return;
        }
        out[0] = v.p_l_t / self.image_w;
        out[1] = v.p_l_b / self.image_w;
        out[2] = v.p_r_t / self.image_w;
        out[3] = v.p_r_b / self.image_w;
        // A clear lane maps to row 0, the top of the image.
        out[4] = v.p_o.unwrap_or(0.0) / self.image_h;
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        [
            self.image_w,
            self.image_h,
            self.distance_scale,
            self.speed_scale,
            self.offset_scale,
        ]
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
    }
}

/// Network input for one tick. Layout: `Xm(5) Xl(5) Xr(5) intention(4)
/// speed yaw_rate prev_steering D_o`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatMap(pub [f64; INPUT_DIM]);

impl FlatMap {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub fn flatten(map: &CognitiveMap, norm: &Normalization) -> FlatMap {
    let mut v = [0.0; INPUT_DIM];
    norm.vector(&map.xm, &mut v[0..5]);
    norm.vector(&map.xl, &mut v[5..10]);
    norm.vector(&map.xr, &mut v[10..15]);
    v[15..19].copy_from_slice(&map.intention.one_hot());
    v[19] = map.vstate.speed / norm.speed_scale;
    v[20] = map.vstate.yaw_rate;
    v[21] = map.vstate.prev_steering;
    v[22] = map.d_o / norm.offset_scale;
    FlatMap(v)
}

/// A window of consecutive maps and the steering command at its last tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub maps: Vec<FlatMap>,
    pub target: f64,
}

impl Sequence {
    pub fn new(maps: Vec<FlatMap>, target: f64) -> Result<Self> {
        if maps.len() != SEQ_LEN {
            return Err(NeuroError::ShapeMismatch(format!(
                "sequence has {} maps, expected {SEQ_LEN}",
                maps.len()
            )));
        }
        Ok(Self { maps, target })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cogmap::{build_map, DrivingIntention, VehicleStateRecord};

    #[test]
    fn flatten_layout_has_23_entries() {
        let pv = PerceptionVector {
            lane_present: true,
            p_l_t: 320.0,
            p_l_b: 0.0,
            p_r_t: 160.0,
            p_r_b: 640.0,
            p_o: Some(144.0),
        };
        let map = build_map(
            pv,
            PerceptionVector::ABSENT,
            pv,
            DrivingIntention::StayInLane,
            VehicleStateRecord {
                speed: 40.0 / 3.6,
                yaw_rate: 0.01,
                prev_steering: -0.02,
            },
            0.0,
        );
        let f = flatten(&map, &Normalization::default());
        assert_eq!(f.0.len(), 23);
        assert_eq!(&f.0[0..5], &[1.0, 0.0, 0.5, 2.0, 0.6]);
        assert_eq!(&f.0[5..10], &[0.0; 5]);
        assert_eq!(&f.0[15..19], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.0[15..19].iter().sum::<f64>(), 1.0);
        assert!((f.0[19] - 40.0 / 3.6 / 30.0).abs() < 1e-15);
        assert_eq!(f.0[21], -0.02);
        assert!(f.is_finite());
    }

    #[test]
    fn sequence_length_enforced() {
        assert!(Sequence::new(vec![FlatMap([0.0; INPUT_DIM]); 19], 0.0).is_err());
        assert!(Sequence::new(vec![FlatMap([0.0; INPUT_DIM]); SEQ_LEN], 0.0).is_ok());
    }
}
