use rand::Rng;
use vmc_core::{ObservationBatch, ValueDomain};

use crate::{AugmentError, JitterParams};

/// Concrete jitter factors for one sample. Applied in the order
/// brightness, contrast, saturation, hue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterDraw {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Hue rotation in turns, within `[-0.5, 0.5]`.
    pub hue: f32,
}

impl JitterDraw {
    pub const IDENTITY: JitterDraw = JitterDraw { brightness: 1.0, contrast: 1.0, saturation: 1.0, hue: 0.0 };

    pub fn sample<R: Rng>(params: &JitterParams, rng: &mut R) -> Self {
        let mut factor = |m: f32| rng.random_range((1.0 - m).max(0.0)..=1.0 + m);
        let brightness = factor(params.brightness);
        let contrast = factor(params.contrast);
        let saturation = factor(params.saturation);
        let hue = rng.random_range(-params.hue..=params.hue);
        Self { brightness, contrast, saturation, hue }
    }
}

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

fn blend(x: f32, other: f32, factor: f32) -> f32 {
    (factor * x + (1.0 - factor) * other).clamp(0.0, 1.0)
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let maxc = r.max(g).max(b);
    let minc = r.min(g).min(b);
    let delta = maxc - minc;
    let s = if maxc > 0.0 { delta / maxc } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, maxc);
    }
    let rc = (maxc - r) / delta;
    let gc = (maxc - g) / delta;
    let bc = (maxc - b) / delta;
    let h = if r == maxc {
        bc - gc
    } else if g == maxc {
        2.0 + rc - bc
    } else {
        4.0 + gc - rc
    };
    ((h / 6.0).rem_euclid(1.0), s, maxc)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Jitters one RGB frame (planar, unit-float) in place.
fn jitter_frame(px: &mut [f32], plane: usize, d: &JitterDraw) {
    let (r, rest) = px.split_at_mut(plane);
    let (g, b) = rest.split_at_mut(plane);
    if d.brightness != 1.0 {
        for ch in [&mut *r, &mut *g, &mut *b] {
            ch.iter_mut().for_each(|v| *v = (*v * d.brightness).clamp(0.0, 1.0));
        }
    }
    if d.contrast != 1.0 {
        let mean = (0..plane).map(|k| LUMA[0] * r[k] + LUMA[1] * g[k] + LUMA[2] * b[k]).sum::<f32>() / plane as f32;
        for ch in [&mut *r, &mut *g, &mut *b] {
            ch.iter_mut().for_each(|v| *v = blend(*v, mean, d.contrast));
        }
    }
    if d.saturation != 1.0 {
        for k in 0..plane {
            let gray = LUMA[0] * r[k] + LUMA[1] * g[k] + LUMA[2] * b[k];
            r[k] = blend(r[k], gray, d.saturation);
            g[k] = blend(g[k], gray, d.saturation);
            b[k] = blend(b[k], gray, d.saturation);
        }
    }
    if d.hue != 0.0 {
        for k in 0..plane {
            let (h, s, v) = rgb_to_hsv(r[k], g[k], b[k]);
            let (nr, ng, nb) = hsv_to_rgb((h + d.hue).rem_euclid(1.0), s, v);
            r[k] = nr.clamp(0.0, 1.0);
            g[k] = ng.clamp(0.0, 1.0);
            b[k] = nb.clamp(0.0, 1.0);
        }
    }
}

/// Applies per-sample color jitter (one draw shared by all frames of a
/// sample). Frames must be RGB. Works in unit-float space and projects back
/// to the batch's value domain.
pub fn jitter(batch: &ObservationBatch, draws: &[JitterDraw]) -> Result<ObservationBatch, AugmentError> {
    let [n, _, h, w] = batch.shape();
    if batch.base_channels() != 3 {
        return Err(AugmentError::InvalidParameter(format!(
            "color jitter needs RGB frames, got {} channels",
            batch.base_channels()
        )));
    }
    if draws.len() != n {
        return Err(AugmentError::DrawMismatch(format!("{} jitter draws for {n} samples", draws.len())));
    }
    if let Some(bad) = draws.iter().find(|d| d.hue.abs() > 0.5) {
        return Err(AugmentError::InvalidParameter(format!("hue rotation {} exceeds 0.5", bad.hue)));
    }
    let domain = batch.domain();
    if draws.iter().all(|d| *d == JitterDraw::IDENTITY) {
        return Ok(batch.clone());
    }
    let scale = domain.max_value();
    let mut data: Vec<f32> = batch.data().iter().map(|v| v / scale).collect();
    let plane = h * w;
    let frame = 3 * plane;
    for (i, d) in draws.iter().enumerate() {
        let sample = &mut data[i * batch.sample_len()..(i + 1) * batch.sample_len()];
        for f in sample.chunks_mut(frame) {
            jitter_frame(f, plane, d);
        }
    }
    if domain == ValueDomain::Uint8 {
        data.iter_mut().for_each(|v| *v = domain.project(*v * scale));
    }
    Ok(batch.with_data(data, domain))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.0, 0.7, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-6 && (g - g2).abs() < 1e-6 && (b - b2).abs() < 1e-6);
        }
    }

    #[test]
    fn brightness_doubles_gray() {
        let b = ObservationBatch::new(vec![0.25; 3 * 4 * 4], [1, 3, 4, 4], ValueDomain::UnitFloat, 1).unwrap();
        let d = JitterDraw { brightness: 2.0, ..JitterDraw::IDENTITY };
        assert!(jitter(&b, &[d]).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_magnitudes_draw_identity() {
        let mut rng = rand::rng();
        for _ in 0..10 {
            assert_eq!(JitterDraw::sample(&JitterParams::zero(), &mut rng), JitterDraw::IDENTITY);
        }
    }
}
