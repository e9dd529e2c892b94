//! Deterministic synthetic traces.
//!
//! Three latent drivers (speed, signal, distance) follow bounded AR(1)
//! processes with unit stationary variance. Observed features are affine in
//! the drivers, and throughput at step `t` is driven by the features of step
//! `t - 1`, so the record history always carries predictive signal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureSchema, SourceTag, TraceDataset, TraceRecord};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Throughput as an affine map of the previous step's standardized drivers
/// `(speed, rsrp, distance)`, plus bounded uniform noise in `±noise`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearMap {
    pub intercept: f64,
    pub weights: [f64; 3],
    pub noise: f64,
    /// AR(1) coefficient of the drivers.
    pub persistence: f64,
}

impl LinearMap {
    pub fn new(intercept: f64, weights: [f64; 3]) -> Self {
        Self { intercept, weights, noise: 0.0, persistence: 0.5 }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_persistence(mut self, persistence: f64) -> Self {
        self.persistence = persistence;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regime {
    /// Slowly varying drivers, small noise.
    Smooth,
    /// Line-of-sight blockage episodes: throughput collapses for several
    /// seconds when the signal drops.
    Bursty,
    ClientLinear(LinearMap),
}

impl Regime {
    pub fn smooth_map() -> LinearMap {
        LinearMap::new(35.0, [2.0, 5.0, -3.0]).with_noise(0.5).with_persistence(0.95)
    }
}

struct Drivers {
    z: [f64; 3],
    phi: f64,
}

impl Drivers {
    fn new(rng: &mut ChaCha8Rng, phi: f64) -> Self {
        let mut d = Self { z: [0.0; 3], phi };
        // burn in towards the stationary distribution
        for _ in 0..50 {
            d.step(rng);
        }
        d
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) {
        let scale = (1.0 - self.phi * self.phi).sqrt();
        for z in self.z.iter_mut() {
            let u: f64 = rng.gen_range(-SQRT3..SQRT3);
            *z = self.phi * *z + scale * u;
        }
    }
}

fn speed_of(z: f64) -> f64 {
    (12.0 + 3.0 * z).max(0.0)
}

fn distance_of(z: f64) -> f64 {
    (200.0 + 50.0 * z).max(1.0)
}

/// Generates `length` one-second records. Identical seeds give identical
/// datasets; the client id is `synth-<seed>`.
pub fn synth_trace(seed: u64, length: usize, regime: Regime) -> TraceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = match regime {
        Regime::Smooth => linear(&mut rng, length, Regime::smooth_map()),
        Regime::ClientLinear(map) => linear(&mut rng, length, map),
        Regime::Bursty => bursty(&mut rng, length),
    };
    TraceDataset::new(format!("synth-{seed}"), SourceTag::Synth, FeatureSchema::default(), records)
        .expect("synthetic records satisfy dataset invariants")
}

fn data_state_step(rng: &mut ChaCha8Rng, state: f64) -> f64 {
    let flip: f64 = rng.gen();
    match state {
        s if s >= 1.0 && flip < 0.01 => 0.0,
        s if s < 1.0 && flip < 0.2 => 1.0,
        s => s,
    }
}

fn linear(rng: &mut ChaCha8Rng, length: usize, map: LinearMap) -> Vec<TraceRecord> {
    let mut drivers = Drivers::new(rng, map.persistence);
    let mut prev = drivers.z;
    let mut state = 1.0;
    let mut out = Vec::with_capacity(length);
    for t in 0..length {
        drivers.step(rng);
        let z = drivers.z;
        let noise: f64 = rng.gen_range(-1.0..=1.0) * map.noise;
        let handover = if rng.gen::<f64>() < 0.03 { 1.0 } else { 0.0 };
        state = data_state_step(rng, state);
        let signal: f64 = map.intercept + map.weights.iter().zip(prev).map(|(w, z)| w * z).sum::<f64>();
        out.push(TraceRecord {
            timestamp: t as f64,
            features: vec![speed_of(z[0]), -95.0 + 8.0 * z[1], handover, distance_of(z[2]), state],
            throughput: (signal + noise).max(0.0),
        });
        prev = z;
    }
    out
}

fn bursty(rng: &mut ChaCha8Rng, length: usize) -> Vec<TraceRecord> {
    let mut drivers = Drivers::new(rng, 0.7);
    let mut blocked = false;
    let mut prev_rsrp = -80.0;
    let mut state = 1.0;
    let mut out = Vec::with_capacity(length);
    for t in 0..length {
        drivers.step(rng);
        let z = drivers.z;
        let was_blocked = blocked;
        let p: f64 = rng.gen();
        blocked = if blocked { p >= 0.15 } else { p < 0.08 };
        let rsrp = -80.0 + 5.0 * z[1] - if blocked { 32.0 } else { 0.0 };
        let ho_p = if blocked != was_blocked { 0.3 } else { 0.02 };
        let handover = if rng.gen::<f64>() < ho_p { 1.0 } else { 0.0 };
        state = data_state_step(rng, state);
        let noise: f64 = rng.gen_range(-3.0..=3.0);
        let tput = 5.0 + 2.5 * (prev_rsrp + 105.0_f64).max(0.0) + noise;
        out.push(TraceRecord {
            timestamp: t as f64,
            features: vec![speed_of(z[0]), rsrp, handover, distance_of(z[2]), state],
            throughput: tput.max(0.0),
        });
        prev_rsrp = rsrp;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{DISTANCE_TO_CELL, RSRP, SPEED};

    #[test]
    fn same_seed_same_trace() {
        for regime in [Regime::Smooth, Regime::Bursty, Regime::ClientLinear(LinearMap::new(30.0, [1.0, 2.0, 3.0]))] {
            assert_eq!(synth_trace(1, 100, regime), synth_trace(1, 100, regime));
        }
    }

    #[test]
    fn different_seeds_differ() {
        assert_ne!(synth_trace(1, 100, Regime::Smooth).records(), synth_trace(2, 100, Regime::Smooth).records());
    }

    #[test]
    fn noiseless_linear_map_is_recoverable_by_least_squares() {
        use nalgebra::{DMatrix, DVector};
        let map = LinearMap::new(40.0, [4.0, -6.0, 2.5]);
        let ds = synth_trace(7, 300, Regime::ClientLinear(map));
        let speed = ds.column(SPEED).unwrap();
        let rsrp = ds.column(RSRP).unwrap();
        let dist = ds.column(DISTANCE_TO_CELL).unwrap();
        let y = ds.throughput();
        let n = y.len() - 1;
        // throughput[t] ~ 1 + features[t - 1]
        let a = DMatrix::from_fn(n, 4, |r, c| match c {
            0 => 1.0,
            1 => speed[r],
            2 => rsrp[r],
            _ => dist[r],
        });
        let b = DVector::from_iterator(n, y[1..].iter().copied());
        let coef = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        let resid = (&a * &coef - &b).amax();
        assert!(resid < 1e-9, "max residual {resid}");
        // speed = 12 + 3 z  =>  weight per m/s is 4 / 3
        assert!((coef[1] - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn bursty_trace_has_deep_fades() {
        let y = synth_trace(3, 600, Regime::Bursty).throughput();
        let low = y.iter().filter(|&&v| v < 15.0).count();
        let high = y.iter().filter(|&&v| v > 40.0).count();
        assert!(low > 30 && high > 200, "low={low} high={high}");
    }
}
