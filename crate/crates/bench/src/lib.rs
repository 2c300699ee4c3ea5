//! Fixtures shared by the benchmarks.

use segqual::classifier::Dataset;
use segqual::synth::{generate_image, SynthImage};
use segqual::SynthConfig;

/// A synthetic image of the given side length.
pub fn sample_image(size: usize) -> SynthImage {
    let cfg = SynthConfig {
        image_size: size,
        seed: 17,
        ..SynthConfig::default()
    };
    generate_image(&cfg, 0).expect("default config is valid")
}

/// `n` rows of `d` features with a nonlinear label, from a fixed LCG.
pub fn sample_dataset(n: usize, d: usize) -> Dataset {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = move || {
        state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| next()).collect();
        labels.push(row[0] * row[1] + 0.5 * row[2 % d] > 0.1 * next());
        values.extend(row);
    }
    Dataset::new(d, values, labels).expect("consistent shape")
}
