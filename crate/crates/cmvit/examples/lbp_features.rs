//! Local binary pattern extraction: code plane and 256-bin histogram for a
//! smooth image versus a noisy one.
//!
//! ```bash
//! cargo run --example lbp_features
//! ```

use cmvit::lbp::{lbp_histogram, lbp_map, GrayImage, LBPConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn top_bins(hist: &[f64], n: usize) -> Vec<(usize, f64)> {
    let mut indexed: Vec<(usize, f64)> = hist.iter().cloned().enumerate().collect();
    indexed.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    indexed.truncate(n);
    indexed
}

fn main() {
    let cfg = LBPConfig::default();
    let size = 32usize;

    // smooth gradient: neighbor comparisons are monotone, few distinct codes
    let smooth = GrayImage::new(
        size,
        size,
        (0..size * size)
            .map(|i| ((i % size) * 4 + (i / size)) as u8)
            .collect(),
    )
    .unwrap();
    let map = lbp_map(&smooth, &cfg).unwrap();
    let hist = lbp_histogram(&map, true);
    println!("smooth gradient, top codes: {:?}", top_bins(&hist, 4));

    // speckle noise: codes spread across the full range
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noisy = GrayImage::new(size, size, (0..size * size).map(|_| rng.gen()).collect()).unwrap();
    let map = lbp_map(&noisy, &cfg).unwrap();
    let hist = lbp_histogram(&map, true);
    let nonzero = hist.iter().filter(|&&v| v > 0.0).count();
    println!("speckle noise, top codes: {:?}", top_bins(&hist, 4));
    println!("speckle noise occupies {nonzero}/256 histogram bins");

    // the histogram is a distribution either way
    assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}
