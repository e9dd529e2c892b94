use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{LstmParams, LstmTrace};
use crate::error::{Error, Result};
use crate::preprocess::Scaler;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub hidden: usize,
    pub w: Vec<f64>,
    /// Single output bias, kept as a slice for uniform tensor handling.
    pub b: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(hidden: usize) -> Self {
        Self { hidden, w: vec![0.0; hidden], b: vec![0.0] }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Which side of the split the output layer belongs to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenseOwnership {
    #[default]
    Local,
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl ModelShape {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        Self { input_dim, hidden1: hidden, hidden2: hidden }
    }
}

impl Default for ModelShape {
    fn default() -> Self {
        Self::new(6, 128)
    }
}

pub const LAYER_NAMES: [&str; 8] =
    ["lstm1.wx", "lstm1.wh", "lstm1.b", "lstm2.wx", "lstm2.wh", "lstm2.b", "dense.w", "dense.b"];

/// Parameter tensors of the fixed topology
/// `LSTM -> dropout -> LSTM (last step) -> dropout -> dense(1)`.
/// Used both for weights and for their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub lstm1: LstmParams,
    pub lstm2: LstmParams,
    pub dense: DenseParams,
}

impl Params {
    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            lstm1: LstmParams::zeros(shape.input_dim, shape.hidden1),
            lstm2: LstmParams::zeros(shape.hidden1, shape.hidden2),
            dense: DenseParams::zeros(shape.hidden2),
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape { input_dim: self.lstm1.input, hidden1: self.lstm1.hidden, hidden2: self.lstm2.hidden }
    }

    /// Tensors in [`LAYER_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            &self.lstm1.wx,
            &self.lstm1.wh,
            &self.lstm1.b,
            &self.lstm2.wx,
            &self.lstm2.wh,
            &self.lstm2.b,
            &self.dense.w,
            &self.dense.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.lstm1.wx,
            &mut self.lstm1.wh,
            &mut self.lstm1.b,
            &mut self.lstm2.wx,
            &mut self.lstm2.wh,
            &mut self.lstm2.b,
            &mut self.dense.w,
            &mut self.dense.b,
        ]
    }

    pub fn tensor_dims(&self) -> [Vec<usize>; 8] {
        let (l1, l2) = (&self.lstm1, &self.lstm2);
        [
            vec![4 * l1.hidden, l1.input],
            vec![4 * l1.hidden, l1.hidden],
            vec![4 * l1.hidden],
            vec![4 * l2.hidden, l2.input],
            vec![4 * l2.hidden, l2.hidden],
            vec![4 * l2.hidden],
            vec![self.dense.hidden, 1],
            vec![1],
        ]
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Full model state: parameters, the input scaler shipped with them, and
/// the global/local ownership of the dense head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub params: Params,
    pub scaler: Option<Scaler>,
    pub dense_ownership: DenseOwnership,
}

/// Activations from one forward pass, including the dropout masks used.
pub(crate) struct ForwardCache {
    steps: usize,
    tr1: LstmTrace,
    mask1: Option<Vec<f64>>,
    x2: Vec<f64>,
    tr2: LstmTrace,
    mask2: Option<Vec<f64>>,
    head_in: Vec<f64>,
    pub output: f64,
}

fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

impl ModelWeights {
    /// Freshly initialized model, deterministic in `seed`.
    pub fn new(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm1 = LstmParams::init(shape.input_dim, shape.hidden1, &mut rng);
        let lstm2 = LstmParams::init(shape.hidden1, shape.hidden2, &mut rng);
        let bound = 1.0 / (shape.hidden2 as f64).sqrt();
        let mut dense = DenseParams::zeros(shape.hidden2);
        dense.w.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        Self { params: Params { lstm1, lstm2, dense }, scaler: None, dense_ownership: DenseOwnership::Local }
    }

    pub fn zeros(shape: ModelShape) -> Self {
        Self { params: Params::zeros(shape), scaler: None, dense_ownership: DenseOwnership::Local }
    }

    pub fn shape(&self) -> ModelShape {
        self.params.shape()
    }

    /// Parameter counts per layer: `[lstm1, lstm2, dense]`.
    pub fn count_params(&self) -> [usize; 3] {
        [self.params.lstm1.param_count(), self.params.lstm2.param_count(), self.params.dense.param_count()]
    }

    /// Names of the tensors aggregated by the server.
    pub fn global_layer_names(&self) -> &'static [&'static str] {
        match self.dense_ownership {
            DenseOwnership::Local => &LAYER_NAMES[..3],
            DenseOwnership::Global => &["lstm1.wx", "lstm1.wh", "lstm1.b", "dense.w", "dense.b"],
        }
    }

    /// Names of the tensors that never leave the client.
    pub fn local_layer_names(&self) -> &'static [&'static str] {
        match self.dense_ownership {
            DenseOwnership::Local => &LAYER_NAMES[3..],
            DenseOwnership::Global => &LAYER_NAMES[3..6],
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<usize> {
        let n = self.params.lstm1.input;
        if x.is_empty() || !x.len().is_multiple_of(n) {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} is not a whole number of {n}-channel steps",
                x.len()
            )));
        }
        Ok(x.len() / n)
    }

    pub(crate) fn forward_cached<R: Rng>(&self, x: &[f64], dropout: Option<(f64, &mut R)>) -> Result<ForwardCache> {
        let steps = self.check_input(x)?;
        let p = &self.params;
        let (h1, h2) = (p.lstm1.hidden, p.lstm2.hidden);
        let tr1 = p.lstm1.forward(x, steps);
        let (mask1, mask2, x2, tr2, head_in);
        match dropout {
            Some((rate, rng)) if rate > 0.0 => {
                let m1 = dropout_mask(steps * h1, rate, rng);
                let xin: Vec<f64> = tr1.h.iter().zip(&m1).map(|(a, b)| a * b).collect();
                let t2 = p.lstm2.forward(&xin, steps);
                let m2 = dropout_mask(h2, rate, rng);
                let last = &t2.h[(steps - 1) * h2..];
                head_in = last.iter().zip(&m2).map(|(a, b)| a * b).collect::<Vec<_>>();
                mask1 = Some(m1);
                mask2 = Some(m2);
                x2 = xin;
                tr2 = t2;
            }
            _ => {
                let t2 = p.lstm2.forward(&tr1.h, steps);
                head_in = t2.h[(steps - 1) * h2..].to_vec();
                mask1 = None;
                mask2 = None;
                x2 = tr1.h.clone();
                tr2 = t2;
            }
        }
        let output = p.dense.b[0] + head_in.iter().zip(&p.dense.w).map(|(a, b)| a * b).sum::<f64>();
        Ok(ForwardCache { steps, tr1, mask1, x2, tr2, mask2, head_in, output })
    }

    /// Prediction for one `steps × input_dim` window, in the scaled domain.
    /// Dropout is active only when `training` is set.
    pub fn forward<R: Rng>(&self, x: &[f64], training: bool, rng: &mut R, dropout: f64) -> Result<f64> {
        let d = if training { Some((dropout, rng)) } else { None };
        Ok(self.forward_cached(x, d)?.output)
    }

    /// Inference-mode prediction.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_cached::<ChaCha8Rng>(x, None)?.output)
    }

    /// Prediction in Mbps from a raw (unscaled) input window, using the
    /// scaler carried by the model. Without a scaler the network sees the
    /// raw values.
    pub fn predict_mbps(&self, x_raw: &[f64]) -> Result<f64> {
        match &self.scaler {
            Some(sc) => {
                let mut x = x_raw.to_vec();
                sc.scale_input(&mut x);
                Ok(sc.unscale_target(self.predict(&x)?))
            }
            None => self.predict(x_raw),
        }
    }

    /// Accumulates `scale * d(output)/d(params)` into `grad`.
    pub(crate) fn backprop(&self, x: &[f64], cache: &ForwardCache, scale: f64, grad: &mut Params) {
        let p = &self.params;
        let (h1, h2) = (p.lstm1.hidden, p.lstm2.hidden);
        let steps = cache.steps;
        grad.dense.b[0] += scale;
        let mut dlast = vec![0.0; h2];
        for k in 0..h2 {
            grad.dense.w[k] += scale * cache.head_in[k];
            dlast[k] = scale * p.dense.w[k] * cache.mask2.as_ref().map_or(1.0, |m| m[k]);
        }
        let mut dh2 = vec![0.0; steps * h2];
        dh2[(steps - 1) * h2..].copy_from_slice(&dlast);
        let mut dx2 = vec![0.0; steps * h1];
        p.lstm2.backward(&cache.x2, &cache.tr2, &dh2, &mut grad.lstm2, Some(&mut dx2));
        if let Some(m1) = &cache.mask1 {
            dx2.iter_mut().zip(m1).for_each(|(d, m)| *d *= m);
        }
        p.lstm1.backward(x, &cache.tr1, &dx2, &mut grad.lstm1, None);
    }

    /// Mean absolute error over a batch and its gradient with respect to
    /// every parameter. The subgradient of `|r|` at `r = 0` is taken as 0.
    pub fn loss_and_grad<R: Rng>(
        &self,
        inputs: &[&[f64]],
        targets: &[f64],
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<(f64, Params)> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch { left: inputs.len(), right: targets.len() });
        }
        let mut grad = Params::zeros(self.shape());
        if inputs.is_empty() {
            return Ok((0.0, grad));
        }
        let inv = 1.0 / inputs.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in inputs.iter().zip(targets) {
            let d = dropout.as_mut().map(|(rate, rng)| (*rate, &mut **rng));
            let cache = self.forward_cached(x, d)?;
            let r = cache.output - y;
            loss += r.abs() * inv;
            let sign = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            if sign != 0.0 {
                self.backprop(x, &cache, sign * inv, &mut grad);
            }
        }
        Ok((loss, grad))
    }
}

/// Gradient of the batch-mean MAE, inference mode (no dropout).
pub fn backward(w: &ModelWeights, inputs: &[&[f64]], targets: &[f64]) -> Result<Params> {
    Ok(w.loss_and_grad::<ChaCha8Rng>(inputs, targets, None)?.1)
}

pub fn mae_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: target.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_matches_reference_summary() {
        let w = ModelWeights::zeros(ModelShape::default());
        assert_eq!(w.count_params(), [69_120, 131_584, 129]);
        assert_eq!(w.count_params().iter().sum::<usize>(), 200_833);
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        for own in [DenseOwnership::Local, DenseOwnership::Global] {
            let mut w = ModelWeights::zeros(ModelShape::new(2, 3));
            w.dense_ownership = own;
            let mut all: Vec<&str> = w.global_layer_names().to_vec();
            all.extend(w.local_layer_names());
            all.sort_unstable();
            let mut expected = LAYER_NAMES.to_vec();
            expected.sort_unstable();
            assert_eq!(all, expected);
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let w = ModelWeights::zeros(ModelShape::new(6, 8));
        assert_eq!(w.predict(&[0.3; 30]).unwrap(), 0.0);
    }

    #[test]
    fn inference_is_bit_identical() {
        let w = ModelWeights::new(ModelShape::new(6, 8), 3);
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(w.predict(&x).unwrap().to_bits(), w.predict(&x).unwrap().to_bits());
    }

    #[test]
    fn bad_input_length_is_shape_mismatch() {
        let w = ModelWeights::new(ModelShape::new(6, 4), 1);
        assert!(matches!(w.predict(&[0.0; 7]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(w.predict(&[]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae_loss(&[0.0], &[3.0]).unwrap(), 3.0);
        assert_eq!(mae_loss(&[1.0, 4.0], &[2.0, 2.0]).unwrap(), 1.5);
        assert!(matches!(mae_loss(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let w = ModelWeights::new(ModelShape::new(2, 4), 5);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let y = w.predict(&x).unwrap();
        let g = backward(&w, &[&x], &[y]).unwrap();
        assert_eq!(g.l2_norm(), 0.0);
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let w = ModelWeights::new(ModelShape::new(2, 4), 5);
        let a = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let b = [0.9, -0.2, 0.0, 0.4, 0.1, 0.3];
        let g1 = backward(&w, &[&a, &b], &[2.0, -2.0]).unwrap();
        let g2 = backward(&w, &[&a, &b, &a, &b], &[2.0, -2.0, 2.0, -2.0]).unwrap();
        for (x, y) in g1.tensors().iter().flat_map(|t| t.iter()).zip(g2.tensors().iter().flat_map(|t| t.iter())) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn dropout_mean_matches_inference_output() {
        let w = ModelWeights::new(ModelShape::new(3, 16), 11);
        let x: Vec<f64> = (0..15).map(|i| 0.5 + 0.3 * (i as f64).cos()).collect();
        let reference = w.predict(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mean = (0..n).map(|_| w.forward(&x, true, &mut rng, 0.2).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - reference).abs() <= 0.02 * reference.abs(), "mean {mean} vs {reference}");
    }

    /// Central differences on the inference-mode batch MAE. Targets sit far
    /// from the outputs so no residual crosses the kink at zero.
    fn finite_difference_check(seed: u64) -> (usize, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = ModelWeights::new(ModelShape::new(2, 4), seed);
        for t in w.params.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let ys: Vec<f64> =
            xs.iter().enumerate().map(|(i, x)| w.predict(x).unwrap() + if i % 2 == 0 { 5.0 } else { -5.0 }).collect();
        // Every residual keeps its sign under a 1e-5 nudge, so the MAE is the
        // linear form below; differencing it directly avoids cancelling
        // against the large constant target offset.
        let signs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (w.predict(x).unwrap() - y).signum()).collect();
        let loss = |w: &ModelWeights| {
            xs.iter().zip(&signs).map(|(x, s)| s * w.predict(x).unwrap()).sum::<f64>() / xs.len() as f64
        };
        let analytic = backward(&w, &refs, &ys).unwrap();
        let eps = 1e-5;
        let (mut checked, mut worst) = (0, 0.0f64);
        for k in 0..8 {
            for j in 0..analytic.tensors()[k].len() {
                let a = analytic.tensors()[k][j];
                if a.abs() < 1e-8 {
                    continue;
                }
                let orig = w.params.tensors()[k][j];
                w.params.tensors_mut()[k][j] = orig + eps;
                let up = loss(&w);
                w.params.tensors_mut()[k][j] = orig - eps;
                let down = loss(&w);
                w.params.tensors_mut()[k][j] = orig;
                let numeric = (up - down) / (2.0 * eps);
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()));
                checked += 1;
            }
        }
        (checked, worst)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..50 {
            let (checked, worst) = finite_difference_check(seed);
            assert!(checked > 100);
            assert!(worst < 1e-4, "seed {seed}: worst relative error {worst}");
        }
    }
}
