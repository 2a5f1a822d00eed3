//! Procedural value-noise textures used for distractor images and
//! time-varying backgrounds.

use crate::rng::splitmix64;

fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f32 {
    let h = splitmix64(
        seed ^ splitmix64((x as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7))
            ^ splitmix64((y as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
            ^ splitmix64((z as u64).wrapping_mul(0xA076_1D64_78BD_642F)),
    );
    (h >> 40) as f32 / (1u64 << 24) as f32
}

#[inline]
fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
pub fn value_noise(seed: u64, x: f32, y: f32, z: i64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (tx, ty) = (smooth(x - x0), smooth(y - y0));
    let (xi, yi) = (x0 as i64, y0 as i64);
    let a = lattice(seed, xi, yi, z);
    let b = lattice(seed, xi + 1, yi, z);
    let c = lattice(seed, xi, yi + 1, z);
    let d = lattice(seed, xi + 1, yi + 1, z);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Fractal (multi-octave) noise in `[0, 1)`.
pub fn fractal_noise(seed: u64, x: f32, y: f32, z: i64, octaves: u32) -> f32 {
    let mut total = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0;
    for o in 0..octaves {
        total += amp * value_noise(seed.wrapping_add(o as u64), x * freq, y * freq, z);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    total / norm
}

/// Parameters of an RGB noise texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseTexture {
    pub seed: u64,
    /// Lattice cells across the image.
    pub scale: f32,
    pub octaves: u32,
}

impl NoiseTexture {
    /// Renders `[3, height, width]` unit-float values. `time` shifts the
    /// sampling window, so consecutive times give a drifting pattern.
    pub fn render(&self, height: usize, width: usize, time: f32) -> Vec<f32> {
        let mut out = vec![0.0; 3 * height * width];
        let hw = height * width;
        let drift = time * 0.35;
        for c in 0..3 {
            let seed = self.seed.wrapping_mul(31).wrapping_add(c as u64);
            for y in 0..height {
                for x in 0..width {
                    let u = x as f32 / width as f32 * self.scale + drift;
                    let v = y as f32 / height as f32 * self.scale + 0.5 * drift;
                    out[c * hw + y * width + x] = fractal_noise(seed, u, v, 0, self.octaves);
                }
            }
        }
        out
    }
}
