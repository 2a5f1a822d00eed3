//! Orthogonal initialization.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::elem::Elem;

/// A `[rows, cols]` matrix with orthonormal rows (or columns, whichever is
/// shorter), scaled by `gain`.
pub fn orthogonal<T: Elem, R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<T> {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // Column-major `long x short` Gaussian matrix, orthonormalized by modified
    // Gram-Schmidt (diag(R) > 0, matching the sign-corrected QR convention).
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..long).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for j in 0..short {
        for p in 0..j {
            let dot: f64 = q[j].iter().zip(&q[p]).map(|(a, b)| a * b).sum();
            let (head, tail) = q.split_at_mut(j);
            tail[0].iter_mut().zip(&head[p]).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = if rows >= cols { q[c][r] } else { q[r][c] };
            out[r * cols + c] = T::of(gain * v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn check(rows: usize, cols: usize) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = orthogonal(rows, cols, 1.0, &mut rng);
        let short = rows.min(cols);
        for a in 0..short {
            for b in 0..short {
                let dot: f64 = if rows >= cols {
                    (0..rows).map(|r| w[r * cols + a] * w[r * cols + b]).sum()
                } else {
                    (0..cols).map(|c| w[a * cols + c] * w[b * cols + c]).sum()
                };
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "{rows}x{cols} ({a},{b}) = {dot}");
            }
        }
    }

    #[test]
    fn tall_and_wide_are_orthonormal() {
        check(7, 3);
        check(3, 7);
        check(5, 5);
    }
}
