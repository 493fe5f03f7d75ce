//! Procedural 10-class digit dataset: 28x28 grayscale glyphs with randomized
//! placement, scale, shear, boldness and intensity. Used by the end-to-end
//! class-mode checks when no real IDX digit corpus is available on disk.

use mddae_core::data::Dataset;
use mddae_core::nets::{Mode, ValueRange};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FONT: [[&str; 7]; 10] = [
    [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "],
    ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    [" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "],
    ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    [" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "],
    ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "],
    [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    [" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "],
];

const SIZE: usize = 28;

fn cell_on(digit: usize, gx: f64, gy: f64, bold: f64) -> bool {
    // Sample the 5x7 glyph with a square stroke footprint of half-width
    // `bold` around each on-cell center.
    let rows = &FONT[digit];
    for (cy, row) in rows.iter().enumerate() {
        for (cx, ch) in row.bytes().enumerate() {
            if ch != b'#' {
                continue;
            }
            let (dx, dy) = (gx - (cx as f64 + 0.5), gy - (cy as f64 + 0.5));
            if dx.abs() <= bold && dy.abs() <= bold {
                return true;
            }
        }
    }
    false
}

fn render_digit(digit: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale: f64 = rng.random_range(2.6..3.4);
    let shear: f64 = rng.random_range(-0.25..0.25);
    let bold = rng.random_range(0.55..0.95);
    let intensity = rng.random_range(0.75..1.0);
    let glyph_w = 5.0 * scale + 7.0 * scale * shear.abs();
    let glyph_h = 7.0 * scale;
    let ox = rng.random_range(1.0..(SIZE as f64 - glyph_w - 1.0).max(1.5));
    let oy = rng.random_range(1.0..(SIZE as f64 - glyph_h - 1.0).max(1.5));

    let mut img = vec![0.0f64; SIZE * SIZE];
    for y in 0..SIZE {
        for x in 0..SIZE {
            // 2x2 subsamples for soft edges.
            let mut hits = 0;
            for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let px = x as f64 + sx;
                let py = y as f64 + sy;
                let gy = (py - oy) / scale;
                let gx = (px - ox - shear * (py - oy)) / scale;
                if (0.0..5.0).contains(&gx)
                    && (0.0..7.0).contains(&gy)
                    && cell_on(digit, gx, gy, bold)
                {
                    hits += 1;
                }
            }
            img[y * SIZE + x] = intensity * hits as f64 / 4.0;
        }
    }
    img
}

/// Deterministic digit dataset with balanced-in-expectation classes.
pub fn generate_digits(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n * SIZE * SIZE);
    let mut labels = vec![0.0; n * 10];
    for i in 0..n {
        let digit = rng.random_range(0..10usize);
        images.extend(render_digit(digit, &mut rng));
        labels[i * 10 + digit] = 1.0;
    }
    Dataset::new(
        images,
        n,
        1,
        SIZE,
        SIZE,
        labels,
        10,
        Mode::Class,
        ValueRange::Unit,
        None,
    )
    .expect("digit dataset construction")
}
