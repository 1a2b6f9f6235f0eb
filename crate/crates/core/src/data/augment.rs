//! Training-time frame augmentation: random resize-crop plus horizontal
//! flip. Flips are skipped for videos the generator marked flip-unsafe
//! (direction-defined motion classes, where a mirror inverts the label).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::FrameTensor;

#[derive(Debug, Clone, Copy)]
pub struct AugmentOptions {
    pub enabled: bool,
    /// Lower bound of the crop scale (fraction of the side length).
    pub min_scale: f64,
    pub flip_prob: f64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            enabled: true,
            min_scale: 0.7,
            flip_prob: 0.5,
        }
    }
}

pub fn horizontal_flip(frame: &FrameTensor) -> FrameTensor {
    let (h, w, c) = frame.pixels.dim();
    let mut out = frame.pixels.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(y, x, ch)] = frame.pixels[(y, w - 1 - x, ch)];
            }
        }
    }
    FrameTensor { pixels: out }
}

/// Bilinear resample of the crop `[oy, oy+s) x [ox, ox+s)` back to the full
/// side length.
pub fn resize_crop(frame: &FrameTensor, oy: usize, ox: usize, s: usize) -> FrameTensor {
    let (h, w, c) = frame.pixels.dim();
    debug_assert!(oy + s <= h && ox + s <= w && s >= 1);
    let mut out = ndarray::Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        let sy = (y as f64 + 0.5) * s as f64 / h as f64 - 0.5 + oy as f64;
        let sy = sy.clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = sy - y0 as f64;
        for x in 0..w {
            let sx = (x as f64 + 0.5) * s as f64 / w as f64 - 0.5 + ox as f64;
            let sx = sx.clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = sx - x0 as f64;
            for ch in 0..c {
                let p00 = frame.pixels[(y0, x0, ch)] as f64;
                let p01 = frame.pixels[(y0, x1, ch)] as f64;
                let p10 = frame.pixels[(y1, x0, ch)] as f64;
                let p11 = frame.pixels[(y1, x1, ch)] as f64;
                let top = p00 * (1.0 - wx) + p01 * wx;
                let bot = p10 * (1.0 - wx) + p11 * wx;
                out[(y, x, ch)] = (top * (1.0 - wy) + bot * wy) as f32;
            }
        }
    }
    FrameTensor { pixels: out }
}

/// Apply random resize-crop and (when allowed) horizontal flip. The random
/// draws happen in a fixed order regardless of `flip_allowed`, so the
/// stream stays aligned across examples.
pub fn augment_frame(
    frame: &FrameTensor,
    flip_allowed: bool,
    opts: &AugmentOptions,
    rng: &mut ChaCha8Rng,
) -> FrameTensor {
    if !opts.enabled {
        return frame.clone();
    }
    let (h, _, _) = frame.pixels.dim();
    let scale: f64 = rng.random_range(opts.min_scale..=1.0);
    let s = ((h as f64 * scale).round() as usize).clamp(4, h);
    let oy = rng.random_range(0..=(h - s));
    let ox = rng.random_range(0..=(h - s));
    let flip_draw: f64 = rng.random_range(0.0..1.0);
    let cropped = resize_crop(frame, oy, ox, s);
    if flip_allowed && flip_draw < opts.flip_prob {
        horizontal_flip(&cropped)
    } else {
        cropped
    }
}
