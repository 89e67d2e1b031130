use super::lstm::{backward_accumulate, forward, LstmParams};
use super::{NeuroError, Result, Sequence};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Gradients are summed over fixed chunks of this many samples, then the
/// chunk sums are added in chunk order. The result does not depend on the
/// number of worker threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub optimizer: Optimizer,
    /// Epoch MSE above this value is treated as divergence, as is any
    /// non-finite loss.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 50,
            batch: 32,
            seed: 0,
            clip_norm: Some(1.0),
            optimizer: Optimizer::Sgd,
            divergence_threshold: 1e4,
        }
    }
}

/// Mean of `(forward - target)^2` over the dataset.
pub fn mean_squared_error(params: &LstmParams, data: &[Sequence]) -> Result<f64> {
    if data.is_empty() {
        return Err(NeuroError::EmptyDataset);
    }
    let mut sum = 0.0;
    for s in data {
        let e = forward(params, &s.maps)? - s.target;
        sum += e * e;
    }
    Ok(sum / data.len() as f64)
}

/// Trains from `LstmParams::init(cfg.seed)`.
pub fn train(data: &[Sequence], cfg: &TrainConfig) -> Result<(LstmParams, Vec<f64>)> {
    train_from(LstmParams::init(cfg.seed), data, cfg)
}

/// Minibatch training from `params`. Returns the trained parameters and the
/// mean squared error of each epoch, accumulated over the batches before
/// each update.
pub fn train_from(mut params: LstmParams, data: &[Sequence], cfg: &TrainConfig) -> Result<(LstmParams, Vec<f64>)> {
    if data.is_empty() {
        return Err(NeuroError::EmptyDataset);
    }
    params.check()?;
    let batch = cfg.batch.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut state = OptState::new(cfg.optimizer);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sq_sum = 0.0;
        for idx in order.chunks(batch) {
            let (mut grad, sq) = batch_gradient(&params, data, idx)?;
            sq_sum += sq;
            grad.scale(1.0 / idx.len() as f64);
            if let Some(c) = cfg.clip_norm {
                let norm = grad.squared_norm().sqrt();
                if norm > c {
                    grad.scale(c / norm);
                }
            }
            state.update(&mut params, &grad, cfg.lr);
        }
        let mse = sq_sum / data.len() as f64;
        curve.push(mse);
        if !mse.is_finite() || mse > cfg.divergence_threshold || !params.squared_norm().is_finite() {
            return Err(NeuroError::DivergenceDetected { epoch, loss: mse });
        }
    }
    Ok((params, curve))
}

/// Summed gradient of `0.5 * e^2` and summed `e^2` over the indexed samples.
fn batch_gradient(params: &LstmParams, data: &[Sequence], idx: &[usize]) -> Result<(LstmParams, f64)> {
    let chunk = |c: &[usize]| -> Result<(LstmParams, f64)> {
        let mut g = LstmParams::zeros();
        let mut sq = 0.0;
        for &i in c {
            let s = &data[i];
            let out = backward_accumulate(params, &s.maps, s.target, &mut g)?;
            sq += (out - s.target) * (out - s.target);
        }
        Ok((g, sq))
    };

    #[cfg(feature = "parallel")]
    let parts: Vec<Result<(LstmParams, f64)>> = {
        use rayon::prelude::*;
        idx.par_chunks(CHUNK).map(chunk).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<(LstmParams, f64)>> = idx.chunks(CHUNK).map(chunk).collect();

    let mut iter = parts.into_iter();
    let (mut total, mut sq) = iter.next().expect("non-empty batch")?;
    for part in iter {
        let (g, s) = part?;
        total.add_assign(&g);
        sq += s;
    }
    Ok((total, sq))
}

// One instance per training run; boxing the moments buys nothing.
#[allow(clippy::large_enum_variant)]
enum OptState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        m: LstmParams,
        v: LstmParams,
        t: i32,
    },
}

impl OptState {
    fn new(opt: Optimizer) -> Self {
        match opt {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam { beta1, beta2, epsilon } => OptState::Adam {
                beta1,
                beta2,
                epsilon,
                m: LstmParams::zeros(),
                v: LstmParams::zeros(),
                t: 0,
            },
        }
    }

    fn update(&mut self, params: &mut LstmParams, grad: &LstmParams, lr: f64) {
        match self {
            OptState::Sgd => params.zip_apply(grad, |p, g| *p -= lr * g),
            OptState::Adam {
                beta1,
                beta2,
                epsilon,
                m,
                v,
                t,
            } => {
                *t += 1;
                let (b1, b2, e) = (*beta1, *beta2, *epsilon);
                m.zip_apply(grad, |m, g| *m = b1 * *m + (1.0 - b1) * g);
                v.zip_apply(grad, |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
                let c1 = 1.0 - b1.powi(*t);
                let c2 = 1.0 - b2.powi(*t);
                let step = lr * c2.sqrt() / c1;
                let e_hat = e * c2.sqrt();
                for (((_, p), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(m.tensors()).zip(v.tensors()) {
                    for ((p, m), v) in p.iter_mut().zip(m).zip(v) {
                        *p -= step * m / (v.sqrt() + e_hat);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::{FlatMap, INPUT_DIM, SEQ_LEN};
    use rand::Rng;

    fn constant_data(c: f64, n: usize) -> Vec<Sequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n)
            .map(|_| {
                let mut v = [0.0; INPUT_DIM];
                v.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
                Sequence::new(vec![FlatMap(v); SEQ_LEN], c).unwrap()
            })
            .collect()
    }

    #[test]
    fn empty_dataset_rejected() {
        assert_eq!(
            train(&[], &TrainConfig::default()).unwrap_err(),
            NeuroError::EmptyDataset
        );
        assert_eq!(
            mean_squared_error(&LstmParams::zeros(), &[]).unwrap_err(),
            NeuroError::EmptyDataset
        );
    }

    #[test]
    fn fits_a_constant_target() {
        let data = constant_data(0.2, 8);
        let cfg = TrainConfig {
            lr: 3e-3,
            epochs: 200,
            batch: 8,
            seed: 3,
            optimizer: Optimizer::ADAM,
            ..TrainConfig::default()
        };
        let (params, curve) = train(&data, &cfg).unwrap();
        assert!(curve.last().unwrap() < &curve[0]);
        let mse = mean_squared_error(&params, &data).unwrap();
        assert!(mse < 1e-6, "{mse}");
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let data = constant_data(0.2, 8);
        let cfg = TrainConfig {
            lr: 1e3,
            epochs: 20,
            batch: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&data, &cfg), Err(NeuroError::DivergenceDetected { .. })));
    }

    #[test]
    fn training_is_deterministic_and_pure() {
        let data = constant_data(-0.1, 20);
        let cfg = TrainConfig {
            epochs: 3,
            batch: 16,
            optimizer: Optimizer::ADAM,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let init = LstmParams::init(cfg.seed);
        let a = train_from(init.clone(), &data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(init, LstmParams::init(cfg.seed));
    }
}
