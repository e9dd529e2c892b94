use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ModelWeights, Params};
use crate::error::{Error, Result};
use crate::preprocess::SampleSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 32,
            learning_rate: 1e-3,
            dropout: 0.2,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be >= 0 and clip norm > 0".into()));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state for one parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Params,
    v: Params,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(like: &Params, cfg: &TrainConfig) -> Self {
        let zeros = Params::zeros(like.shape());
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
        }
    }

    pub fn update(&mut self, params: &mut Params, grad: &Params) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors =
            params.tensors_mut().into_iter().zip(grad.tensors()).zip(self.m.tensors_mut()).zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Mean absolute error of the model on an already-scaled sample set.
pub fn evaluate_mae(w: &ModelWeights, samples: &SampleSet) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (x, y) in samples.inputs.iter().zip(&samples.targets) {
        total += (w.predict(x)? - y).abs();
    }
    Ok(total / samples.len() as f64)
}

/// Mini-batch training on scaled samples. Returns the updated weights and
/// the inference-mode training MAE after each epoch.
pub fn train(w: &ModelWeights, samples: &SampleSet, cfg: &TrainConfig) -> Result<(ModelWeights, Vec<f64>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = w.clone();
    let mut opt = Adam::new(&model.params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| samples.inputs[i].as_slice()).collect();
            let ys: Vec<f64> = batch.iter().map(|&i| samples.targets[i]).collect();
            let (_, mut grad) = model.loss_and_grad(&xs, &ys, Some((cfg.dropout, &mut rng)))?;
            let norm = grad.l2_norm();
            if norm > cfg.clip_norm {
                grad.scale(cfg.clip_norm / norm);
            }
            opt.update(&mut model.params, &grad);
        }
        curve.push(evaluate_mae(&model, samples)?);
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelShape;
    use rand::Rng;

    fn constant_target_set(n: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SampleSet {
            inputs: (0..n).map(|_| (0..10).map(|_| rng.gen_range(0.0..1.0)).collect()).collect(),
            targets: vec![0.5; n],
            history: 5,
            horizon: 1,
            input_dim: 2,
        }
    }

    #[test]
    fn constant_target_is_learned() {
        let set = constant_target_set(1024, 1);
        let w = ModelWeights::new(ModelShape::new(2, 8), 1);
        let (_, curve) = train(&w, &set, &TrainConfig::default()).unwrap();
        assert_eq!(curve.len(), 25);
        assert!(*curve.last().unwrap() < 0.02, "curve {curve:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let set = constant_target_set(64, 2);
        let w = ModelWeights::new(ModelShape::new(2, 4), 3);
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let (a, ca) = train(&w, &set, &cfg).unwrap();
        let (b, cb) = train(&w, &set, &cfg).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let set = constant_target_set(64, 2);
        let w = ModelWeights::new(ModelShape::new(2, 4), 3);
        let cfg = TrainConfig { epochs: 4, learning_rate: 0.0, ..Default::default() };
        let (out, curve) = train(&w, &set, &cfg).unwrap();
        assert_eq!(out, w);
        assert!(curve.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let set = constant_target_set(4, 2);
        let w = ModelWeights::new(ModelShape::new(2, 4), 3);
        for cfg in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(matches!(train(&w, &set, &cfg), Err(Error::InvalidConfig(_))));
        }
    }
}
