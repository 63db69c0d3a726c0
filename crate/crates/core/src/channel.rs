//! Block-fading multipath channel with an exponential power-delay profile.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::phy::N_SUBCARRIERS;

/// Multipath profile: `n_taps` Rayleigh taps with powers proportional to
/// `exp(-decay * l)`, normalized to unit total power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub n_taps: usize,
    pub decay: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            n_taps: 3,
            decay: 1.0,
        }
    }
}

impl ChannelConfig {
    /// Average power of each tap; sums to one.
    pub fn tap_powers(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.n_taps)
            .map(|l| (-self.decay * l as f64).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }

    /// Draws a fresh realization; call once per OFDM block.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, block_id: u64) -> ChannelRealization {
        let taps = self
            .tap_powers()
            .into_iter()
            .map(|p| complex_gaussian(rng, p))
            .collect();
        ChannelRealization::from_taps(taps, block_id)
    }
}

/// One block's channel: time-domain taps and their 64-point frequency response.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<Complex64>,
    pub freq_response: Vec<Complex64>,
    pub block_id: u64,
}

impl ChannelRealization {
    pub fn from_taps(taps: Vec<Complex64>, block_id: u64) -> Self {
        let freq_response = dft_of_taps(&taps, N_SUBCARRIERS);
        Self {
            taps,
            freq_response,
            block_id,
        }
    }

    /// `h = (1, 0, 0)`.
    pub fn identity() -> Self {
        Self::from_taps(
            vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
            0,
        )
    }

    /// Channel memory in samples (taps - 1).
    pub fn memory(&self) -> usize {
        self.taps.len().saturating_sub(1)
    }

    /// Per-subcarrier power gain `|H[k]|^2`.
    pub fn gains(&self) -> Vec<f64> {
        self.freq_response.iter().map(|h| h.norm_sqr()).collect()
    }

    /// Scales every tap (and hence `H`) by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self::from_taps(
            self.taps.iter().map(|h| h * factor).collect(),
            self.block_id,
        )
    }
}

/// Zero-padded `n`-point DFT of the taps, evaluated directly.
fn dft_of_taps(taps: &[Complex64], n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            taps.iter()
                .enumerate()
                .map(|(l, h)| {
                    let phase = -2.0 * std::f64::consts::PI * (k * l) as f64 / n as f64;
                    h * Complex64::from_polar(1.0, phase)
                })
                .sum()
        })
        .collect()
}

/// Additive noise level relative to unit average transmit symbol energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
}

impl NoiseSpec {
    pub fn new(snr_db: f64) -> Self {
        Self { snr_db }
    }

    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
        }
    }

    /// Noise variance per complex sample.
    pub fn variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }
}

/// Draws `CN(0, variance)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Convolves `signal` with the taps (truncated to the input length) and adds
/// circularly-symmetric Gaussian noise. A noiseless spec consumes no randomness.
pub fn apply<R: Rng + ?Sized>(
    signal: &[Complex64],
    ch: &ChannelRealization,
    noise: NoiseSpec,
    rng: &mut R,
) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = (0..signal.len())
        .map(|n| {
            ch.taps
                .iter()
                .enumerate()
                .take(n + 1)
                .map(|(l, h)| h * signal[n - l])
                .sum()
        })
        .collect();
    if !noise.is_noiseless() {
        let var = noise.variance();
        for y in &mut out {
            *y += complex_gaussian(rng, var);
        }
    }
    out
}
