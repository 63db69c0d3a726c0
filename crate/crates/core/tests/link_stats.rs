//! Monte-Carlo checks on the physical layer.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semlink_core::channel::{self, ChannelConfig, ChannelRealization, NoiseSpec};
use semlink_core::importance::AllocationPlan;
use semlink_core::phy;

fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

fn symbols(bits: &[u8]) -> Vec<Complex64> {
    phy::map_16qam(bits)
        .unwrap()
        .iter()
        .map(|s| s.value)
        .collect()
}

/// Mean squared LS estimation error per subcarrier over `blocks` blocks.
fn estimate_mse(snr_db: f64, blocks: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ChannelConfig::default();
    let plan = AllocationPlan::identity();
    let mut total = 0.0;
    for b in 0..blocks {
        let ch = cfg.draw(&mut rng, b as u64);
        let block = phy::assemble_block(&[], &plan).unwrap();
        let rx = channel::apply(&phy::to_time(&block), &ch, NoiseSpec::new(snr_db), &mut rng);
        let grid = phy::from_time(&rx).unwrap();
        let est = phy::estimate_ls(grid.pilot_row(), &phy::pilot_sequence());
        total += est
            .h_hat
            .iter()
            .zip(&ch.freq_response)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / 64.0;
    }
    total / blocks as f64
}

/// Bit error rate with a full block of random data.
fn ber(snr_db: f64, blocks: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ChannelConfig::default();
    let plan = AllocationPlan::identity();
    let n_bits = phy::DATA_SLOTS * 4;
    let mut errors = 0usize;
    for b in 0..blocks {
        let bits = random_bits(&mut rng, n_bits);
        let ch = cfg.draw(&mut rng, b as u64);
        let block = phy::assemble_block(&symbols(&bits), &plan).unwrap();
        let rx = channel::apply(&phy::to_time(&block), &ch, NoiseSpec::new(snr_db), &mut rng);
        let grid = phy::from_time(&rx).unwrap();
        let est = phy::estimate_ls(grid.pilot_row(), &phy::pilot_sequence());
        let (out, _) = phy::equalize_demap(&grid, &est, &plan, phy::DATA_SLOTS);
        errors += out.iter().zip(&bits).filter(|(a, b)| a != b).count();
    }
    errors as f64 / (blocks * n_bits) as f64
}

#[test]
fn estimate_mse_falls_with_snr() {
    let low = estimate_mse(0.0, 10_000, 1);
    let high = estimate_mse(30.0, 10_000, 1);
    assert!(high < low, "{high} vs {low}");
    // LS error variance is sigma^2 / |pilot|^2 with |pilot|^2 = 1.8.
    assert!((low - 1.0 / 1.8).abs() < 0.02, "{low}");
}

#[test]
fn ber_falls_with_snr() {
    let low = ber(5.0, 10_000, 2);
    let high = ber(25.0, 10_000, 2);
    assert!(high < low, "{high} vs {low}");
}

#[test]
fn noiseless_chain_through_identity_channel_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let plan = AllocationPlan::random(&mut rng);
    for n in [0, 1, 120, phy::DATA_SLOTS] {
        let bits = random_bits(&mut rng, 4 * n);
        let block = phy::assemble_block(&symbols(&bits), &plan).unwrap();
        let rx = channel::apply(
            &phy::to_time(&block),
            &ChannelRealization::identity(),
            NoiseSpec::noiseless(),
            &mut rng,
        );
        let grid = phy::from_time(&rx).unwrap();
        let est = phy::estimate_ls(grid.pilot_row(), &phy::pilot_sequence());
        assert!(est.h_hat.iter().all(|h| (h - 1.0).norm() < 1e-12));
        let (out, _) = phy::equalize_demap(&grid, &est, &plan, n);
        assert_eq!(out, bits);
    }
}

#[test]
fn block_fading_draws() {
    let cfg = ChannelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = cfg.draw(&mut rng, 0);
    let b = cfg.draw(&mut rng, 1);
    assert_ne!(a.taps, b.taps);
    let mut again = ChaCha8Rng::seed_from_u64(4);
    assert_eq!(cfg.draw(&mut again, 0).taps, a.taps);
    assert_eq!(cfg.draw(&mut again, 1).taps, b.taps);
}
