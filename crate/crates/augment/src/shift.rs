use rand::Rng;
use vmc_core::{ObservationBatch, RngPolicy};

use crate::AugmentError;

/// Signed crop offset relative to the unshifted position. The equivalent
/// crop origin in the replicate-padded image is `(pad + dx, pad + dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShiftDraw {
    pub dx: i32,
    pub dy: i32,
}

/// Translates every frame of sample `i` by `offsets[i]`, extending the
/// image by replicating its border pixels.
pub fn shift(batch: &ObservationBatch, pad: usize, offsets: &[ShiftDraw]) -> Result<ObservationBatch, AugmentError> {
    let [n, _, h, w] = batch.shape();
    if 2 * pad > h.min(w) {
        return Err(AugmentError::InvalidPad { pad, height: h, width: w });
    }
    if offsets.len() != n {
        return Err(AugmentError::DrawMismatch(format!("{} offsets for {n} samples", offsets.len())));
    }
    let p = pad as i32;
    if let Some(bad) = offsets.iter().find(|o| o.dx.abs() > p || o.dy.abs() > p) {
        return Err(AugmentError::InvalidParameter(format!("offset {bad:?} exceeds pad {pad}")));
    }
    if pad == 0 {
        return Ok(batch.clone());
    }
    let src = batch.data();
    let plane = h * w;
    let planes_per_sample = batch.shape()[1];
    let mut out = vec![0.0; src.len()];
    let col_idx = |dx: i32| -> Vec<usize> { (0..w).map(|x| (x as i32 + dx).clamp(0, w as i32 - 1) as usize).collect() };
    for (i, o) in offsets.iter().enumerate() {
        let cols = col_idx(o.dx);
        for c in 0..planes_per_sample {
            let base = (i * planes_per_sample + c) * plane;
            for y in 0..h {
                let sy = (y as i32 + o.dy).clamp(0, h as i32 - 1) as usize;
                let srow = &src[base + sy * w..base + sy * w + w];
                let drow = &mut out[base + y * w..base + y * w + w];
                for (d, &sx) in drow.iter_mut().zip(&cols) {
                    *d = srow[sx];
                }
            }
        }
    }
    Ok(batch.with_data(out, batch.domain()))
}

/// Random shift with offsets drawn uniformly from `[-pad, pad]^2` per
/// sample (stream `"augment"`, counter `counters[i]`) unless given.
pub fn random_shift(
    batch: &ObservationBatch,
    pad: usize,
    offsets: Option<&[ShiftDraw]>,
    rng: &RngPolicy,
    counters: &[u64],
) -> Result<ObservationBatch, AugmentError> {
    match offsets {
        Some(o) => shift(batch, pad, o),
        None => {
            let p = pad as i32;
            let drawn: Vec<ShiftDraw> = counters
                .iter()
                .map(|&c| {
                    let mut r = rng.rng("augment", c);
                    ShiftDraw { dx: r.random_range(-p..=p), dy: r.random_range(-p..=p) }
                })
                .collect();
            shift(batch, pad, &drawn)
        }
    }
}
