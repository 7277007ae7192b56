//! PGM/PPM images of curtains, reconstructions and column maxima.

use cloudvol_core::channels::N_CHANNELS;
use cloudvol_core::heights::LEVELS;
use cloudvol_core::norm::{is_valid, SENTINEL};

/// Binary grayscale image (P5).
pub fn pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height, "pgm size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

/// Binary RGB image (P6), `rgb` interleaved.
pub fn ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), 3 * width * height, "ppm size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Normalised value in [-1, 1] to a gray level; invalid cells are black.
pub fn gray(v: f32) -> u8 {
    if !is_valid(v) || !v.is_finite() {
        return 0;
    }
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 254.0 + 1.0).round() as u8
}

/// Target curtain above the predicted one, one image column per track
/// pixel, highest level at the top, with a one-pixel white divider.
/// Both inputs are `[column, 80]` normalised profiles of one variable.
pub fn curtain_strip(target: &[f32], pred: &[f32]) -> (usize, usize, Vec<u8>) {
    let n = target.len() / LEVELS;
    assert_eq!(pred.len(), target.len(), "curtain sizes");
    let h = 2 * LEVELS + 1;
    let mut img = vec![255u8; n * h];
    for c in 0..n {
        for l in 0..LEVELS {
            img[l * n + c] = gray(target[c * LEVELS + l]);
            img[(LEVELS + 1 + l) * n + c] = gray(pred[c * LEVELS + l]);
        }
    }
    (n, h, img)
}

/// Largest value over levels of a `[80, S, S]` normalised volume, as an
/// `S x S` gray image.
pub fn max_column(volume: &[f32], size: usize) -> Vec<u8> {
    let hw = size * size;
    (0..hw)
        .map(|p| {
            let m = (0..LEVELS)
                .map(|l| volume[l * hw + p])
                .filter(|v| v.is_finite() && *v != SENTINEL)
                .fold(f32::NEG_INFINITY, f32::max);
            if m.is_finite() {
                gray(m)
            } else {
                0
            }
        })
        .collect()
}

/// False-colour composite of an `[11, S, S]` image from three channels.
pub fn composite(image: &[f32], size: usize, channels: [usize; 3]) -> Vec<u8> {
    let hw = size * size;
    assert_eq!(image.len(), N_CHANNELS * hw, "image size");
    let mut out = Vec::with_capacity(3 * hw);
    for p in 0..hw {
        for &c in &channels {
            out.push(gray(image[c * hw + p]));
        }
    }
    out
}

/// Masked input, reconstruction and original side by side (RGB).
pub fn triptych(masked: &[f32], predicted: &[f32], original: &[f32], size: usize) -> (usize, usize, Vec<u8>) {
    let rgb = [0, 1, 2];
    let panels = [
        composite(masked, size, rgb),
        composite(predicted, size, rgb),
        composite(original, size, rgb),
    ];
    let w = 3 * size + 2;
    let mut img = vec![255u8; 3 * w * size];
    for (k, panel) in panels.iter().enumerate() {
        let x0 = k * (size + 1);
        for i in 0..size {
            let row = &panel[3 * i * size..3 * (i + 1) * size];
            img[3 * (i * w + x0)..3 * (i * w + x0 + size)].copy_from_slice(row);
        }
    }
    (w, size, img)
}
