//! Deterministic synthetic digit-style dataset for self-tests and demo runs.
//!
//! Each class renders a fixed glyph of filled cells from a 3x4 grid onto a
//! 28x28 canvas, with random translation, per-image intensity, stroke
//! dropout, and background speckle, then quantizes to the u8 pixel levels an
//! IDX file carries. The ten glyph patterns differ pairwise in at least six
//! of the twelve cells, which keeps the classes cleanly learnable by the
//! built-in architectures while leaving them as vulnerable to gradient
//! attacks as handwritten-digit data.

use crate::dataset::LabeledDataset;
use crate::rng::{stream_seed, Prng};
use crate::tensor::Tensor;

const SIDE: usize = 28;

// Cell grid: 3 columns x 4 rows of 6x6 blocks, glyph box x 5..=22, y 2..=25.
const CELL: usize = 6;
const COLS: usize = 3;
const ROWS: usize = 4;
const ORIGIN_X: usize = 5;
const ORIGIN_Y: usize = 2;

/// Per-class cell masks, bit i = cell (row = i / 3, col = i % 3).
/// Pairwise Hamming distance is at least 6.
const CLASS_MASKS: [u16; 10] = [
    0b0011_1101_0011,
    0b1100_0010_0110,
    0b1010_0110_1101,
    0b0101_0001_1010,
    0b0011_1011_1100,
    0b1101_1100_0101,
    0b1110_0101_0000,
    0b0110_1110_1010,
    0b1100_1011_1001,
    0b0111_0010_0001,
];

/// Generates `n` labeled images with the given seed. Pixel values are exact
/// multiples of 1/255, so round-tripping through IDX files preserves them
/// bit-for-bit.
pub fn generate(n: usize, seed: u64) -> LabeledDataset {
    let mut label_rng = Prng::new(stream_seed(seed, 0));
    let mut geom_rng = Prng::new(stream_seed(seed, 1));
    let mut noise_rng = Prng::new(stream_seed(seed, 2));

    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    let mut canvas = [0.0f64; SIDE * SIDE];
    for _ in 0..n {
        let digit = label_rng.index(10);
        labels.push(digit as u8);
        canvas.fill(0.0);

        let dx = geom_rng.index(5) as isize - 2; // -2..=2
        let dy = geom_rng.index(5) as isize - 2; // -2..=2
        let intensity = geom_rng.uniform(0.8, 1.0);
        let mask = CLASS_MASKS[digit];
        for cell in 0..COLS * ROWS {
            if mask & (1 << cell) == 0 {
                continue;
            }
            let cx = ORIGIN_X + (cell % COLS) * CELL;
            let cy = ORIGIN_Y + (cell / COLS) * CELL;
            for y in cy..cy + CELL {
                for x in cx..cx + CELL {
                    let px = x as isize + dx;
                    let py = y as isize + dy;
                    if (0..SIDE as isize).contains(&px) && (0..SIDE as isize).contains(&py) {
                        // Light stroke dropout keeps the ink ragged.
                        if noise_rng.next_f64() > 0.05 {
                            canvas[py as usize * SIDE + px as usize] =
                                intensity * (0.85 + 0.15 * noise_rng.next_f64());
                        }
                    }
                }
            }
        }
        for v in canvas.iter_mut() {
            let noise = noise_rng.uniform(-0.04, 0.06);
            let p = (*v + noise).clamp(0.0, 1.0);
            data.push((p * 255.0).round() / 255.0);
        }
    }

    LabeledDataset {
        images: Tensor::new(vec![n, 1, SIDE, SIDE], data).expect("canvas size"),
        labels,
        provenance: format!("synthetic(n={n},seed={seed})"),
    }
}
