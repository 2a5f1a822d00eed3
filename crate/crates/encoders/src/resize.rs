/// Bilinear resize of one plane using pixel-center alignment with edge
/// clamping.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f32> {
    let sy = h as f32 / nh as f32;
    let sx = w as f32 / nw as f32;
    let coord = |o: usize, scale: f32, n: usize| {
        let c = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (c.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f32)
    };
    let cols: Vec<_> = (0..nw).map(|x| coord(x, sx, w)).collect();
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        let (y0, y1, fy) = coord(y, sy, h);
        for &(x0, x1, fx) in &cols {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let src: Vec<f32> = (0..12).map(|v| v as f32).collect();
        assert_eq!(resize_bilinear(&src, 3, 4, 3, 4), src);
    }

    #[test]
    fn upsampling_preserves_constants_and_range() {
        let out = resize_bilinear(&[0.3; 4], 2, 2, 7, 5);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-6));
        let out = resize_bilinear(&[0.0, 1.0, 1.0, 0.0], 2, 2, 8, 8);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
