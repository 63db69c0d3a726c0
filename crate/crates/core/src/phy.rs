//! 16-QAM OFDM physical layer: Gray mapping, block assembly with a pilot
//! row, cyclic prefix, least-squares channel estimation and zero-forcing
//! equalization.
//!
//! Numerology: 8 OFDM symbols x 64 subcarriers per block, symbol 0 is the
//! pilot, a 16-sample cyclic prefix per symbol, 640 time samples per block.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::importance::AllocationPlan;

pub const N_SUBCARRIERS: usize = 64;
pub const N_SYMBOLS: usize = 8;
pub const DATA_ROWS: usize = N_SYMBOLS - 1;
pub const CP_LEN: usize = 16;
pub const DATA_SLOTS: usize = DATA_ROWS * N_SUBCARRIERS;
pub const BITS_PER_SYMBOL: usize = 4;
pub const SAMPLES_PER_BLOCK: usize = N_SYMBOLS * (N_SUBCARRIERS + CP_LEN);

/// Bits carried on every pilot subcarrier (a corner point).
pub const PILOT_BITS: [u8; 4] = [1, 0, 1, 0];
/// Bits of the filler symbol in unused data slots.
pub const PAD_BITS: [u8; 4] = [0, 0, 0, 0];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PhyError {
    #[error("bit count {0} is not a multiple of 4")]
    BadLength(usize),
    #[error("{0} data symbols exceed the {DATA_SLOTS} slots of one block")]
    Overflow(usize),
    #[error("allocation plan is not a permutation of the {DATA_SLOTS} data slots")]
    InvalidPlan,
    #[error("expected {expected} time samples, got {got}")]
    BadSampleCount { expected: usize, got: usize },
}

/// Gray-coded amplitude levels for a 2-bit pair: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
fn gray_level(b0: u8, b1: u8) -> f64 {
    match (b0 & 1, b1 & 1) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

fn slice_level(x: f64) -> (u8, u8) {
    // Decision thresholds at -2, 0, +2 on the unnormalized axis.
    if x < -2.0 {
        (0, 0)
    } else if x < 0.0 {
        (0, 1)
    } else if x < 2.0 {
        (1, 1)
    } else {
        (1, 0)
    }
}

fn norm() -> f64 {
    10f64.sqrt()
}

/// A constellation point with the bits it carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QamSymbol {
    pub value: Complex64,
    pub source_bits: [u8; 4],
}

/// Constellation point for one 4-bit group: the first two bits pick the
/// in-phase level, the last two the quadrature level, scaled by 1/sqrt(10).
pub fn qam_point(bits: [u8; 4]) -> Complex64 {
    Complex64::new(gray_level(bits[0], bits[1]), gray_level(bits[2], bits[3])) / norm()
}

/// All 16 points indexed by the 4-bit label read MSB first.
pub fn constellation() -> [Complex64; 16] {
    std::array::from_fn(|label| qam_point(label_bits(label as u8)))
}

pub(crate) fn label_bits(label: u8) -> [u8; 4] {
    [
        (label >> 3) & 1,
        (label >> 2) & 1,
        (label >> 1) & 1,
        label & 1,
    ]
}

pub fn map_16qam(bits: &[u8]) -> Result<Vec<QamSymbol>, PhyError> {
    if !bits.len().is_multiple_of(BITS_PER_SYMBOL) {
        return Err(PhyError::BadLength(bits.len()));
    }
    Ok(bits
        .chunks_exact(BITS_PER_SYMBOL)
        .map(|c| {
            let source_bits = [c[0], c[1], c[2], c[3]];
            QamSymbol {
                value: qam_point(source_bits),
                source_bits,
            }
        })
        .collect())
}

/// Nearest-point hard decision for a single received value.
pub fn demap_symbol(y: Complex64) -> [u8; 4] {
    let (i0, i1) = slice_level(y.re * norm());
    let (q0, q1) = slice_level(y.im * norm());
    [i0, i1, q0, q1]
}

pub fn demap_16qam(symbols: &[Complex64]) -> Vec<u8> {
    symbols.iter().flat_map(|&y| demap_symbol(y)).collect()
}

/// 8 x 64 grid, row-major, row 0 the pilot.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmBlock {
    pub grid: Vec<Complex64>,
}

impl OfdmBlock {
    pub fn zeros() -> Self {
        Self {
            grid: vec![Complex64::new(0.0, 0.0); N_SYMBOLS * N_SUBCARRIERS],
        }
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.grid[r * N_SUBCARRIERS..(r + 1) * N_SUBCARRIERS]
    }

    pub fn pilot_row(&self) -> &[Complex64] {
        self.row(0)
    }

    /// Value in data slot `slot` (row `1 + slot / 64`, subcarrier `slot % 64`).
    pub fn data_slot(&self, slot: usize) -> Complex64 {
        self.grid[N_SUBCARRIERS + slot]
    }
}

/// Known pilot symbol sequence.
pub fn pilot_sequence() -> Vec<Complex64> {
    vec![qam_point(PILOT_BITS); N_SUBCARRIERS]
}

/// Subcarrier index of a data slot.
pub fn slot_subcarrier(slot: usize) -> usize {
    slot % N_SUBCARRIERS
}

/// Places data symbol `i` in slot `plan[i]`, fills the rest with PAD and writes the pilot.
pub fn assemble_block(data: &[Complex64], plan: &AllocationPlan) -> Result<OfdmBlock, PhyError> {
    if data.len() > DATA_SLOTS {
        return Err(PhyError::Overflow(data.len()));
    }
    if !plan.is_valid() {
        return Err(PhyError::InvalidPlan);
    }
    let mut block = OfdmBlock::zeros();
    let pilot = qam_point(PILOT_BITS);
    block.grid[..N_SUBCARRIERS].fill(pilot);
    let pad = qam_point(PAD_BITS);
    for (i, &slot) in plan.slots().iter().enumerate() {
        block.grid[N_SUBCARRIERS + slot] = data.get(i).copied().unwrap_or(pad);
    }
    Ok(block)
}

struct Transforms {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

thread_local! {
    static TRANSFORMS: RefCell<Option<Transforms>> = const { RefCell::new(None) };
}

fn with_transforms<T>(f: impl FnOnce(&Transforms) -> T) -> T {
    TRANSFORMS.with(|cell| {
        let mut slot = cell.borrow_mut();
        let t = slot.get_or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Transforms {
                forward: planner.plan_fft_forward(N_SUBCARRIERS),
                inverse: planner.plan_fft_inverse(N_SUBCARRIERS),
            }
        });
        f(t)
    })
}

/// Unitary IFFT per OFDM symbol with cyclic prefix prepended.
pub fn to_time(block: &OfdmBlock) -> Vec<Complex64> {
    let scale = 1.0 / (N_SUBCARRIERS as f64).sqrt();
    let mut out = Vec::with_capacity(SAMPLES_PER_BLOCK);
    with_transforms(|t| {
        let mut buf = vec![Complex64::new(0.0, 0.0); N_SUBCARRIERS];
        for r in 0..N_SYMBOLS {
            buf.copy_from_slice(block.row(r));
            t.inverse.process(&mut buf);
            buf.iter_mut().for_each(|x| *x *= scale);
            out.extend_from_slice(&buf[N_SUBCARRIERS - CP_LEN..]);
            out.extend_from_slice(&buf);
        }
    });
    out
}

/// Strips the cyclic prefixes and applies the unitary FFT per symbol.
pub fn from_time(samples: &[Complex64]) -> Result<OfdmBlock, PhyError> {
    if samples.len() != SAMPLES_PER_BLOCK {
        return Err(PhyError::BadSampleCount {
            expected: SAMPLES_PER_BLOCK,
            got: samples.len(),
        });
    }
    let scale = 1.0 / (N_SUBCARRIERS as f64).sqrt();
    let mut block = OfdmBlock::zeros();
    with_transforms(|t| {
        for (r, sym) in samples.chunks_exact(N_SUBCARRIERS + CP_LEN).enumerate() {
            let row = &mut block.grid[r * N_SUBCARRIERS..(r + 1) * N_SUBCARRIERS];
            row.copy_from_slice(&sym[CP_LEN..]);
            t.forward.process(row);
            row.iter_mut().for_each(|x| *x *= scale);
        }
    });
    Ok(block)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub h_hat: Vec<Complex64>,
    /// `|h_hat[k]|^2`.
    pub quality: Vec<f64>,
}

impl ChannelEstimate {
    pub fn from_response(h_hat: Vec<Complex64>) -> Self {
        let quality = h_hat.iter().map(|h| h.norm_sqr()).collect();
        Self { h_hat, quality }
    }
}

/// Least-squares estimate `Y[k] / X[k]` from the pilot row.
pub fn estimate_ls(received_pilot: &[Complex64], known_pilot: &[Complex64]) -> ChannelEstimate {
    ChannelEstimate::from_response(
        received_pilot
            .iter()
            .zip(known_pilot)
            .map(|(y, x)| y / x)
            .collect(),
    )
}

/// Zero-forcing equalization and hard demapping of the first `n_symbols`
/// data symbols, read back in original order through `plan`.
/// Returns the bits and the estimated gain of the slot each symbol rode on.
pub fn equalize_demap(
    rx: &OfdmBlock,
    est: &ChannelEstimate,
    plan: &AllocationPlan,
    n_symbols: usize,
) -> (Vec<u8>, Vec<f64>) {
    let mut bits = Vec::with_capacity(n_symbols * BITS_PER_SYMBOL);
    let mut gains = Vec::with_capacity(n_symbols);
    for &slot in plan.slots().iter().take(n_symbols) {
        let k = slot_subcarrier(slot);
        let x_hat = rx.data_slot(slot) / est.h_hat[k];
        bits.extend_from_slice(&demap_symbol(x_hat));
        gains.push(est.quality[k]);
    }
    (bits, gains)
}
