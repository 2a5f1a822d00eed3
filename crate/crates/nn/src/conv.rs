//! im2col convolution kernels (NCHW, zero padding).

use crate::elem::{gemm, Elem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], wshape: &[usize], stride: usize, pad: usize) -> Option<Self> {
        if x.len() != 4 || wshape.len() != 4 || x[1] != wshape[1] || stride == 0 {
            return None;
        }
        let (n, c, h, w) = (x[0], x[1], x[2], x[3]);
        let (o, kh, kw) = (wshape[0], wshape[2], wshape[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Some(Self { n, c, h, w, o, kh, kw, stride, pad, oh, ow })
    }

    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn ohw(&self) -> usize {
        self.oh * self.ow
    }

    /// Samples per GEMM call: wide enough to amortize packing, small enough
    /// to bound the column buffer.
    fn chunk(&self) -> usize {
        let per = self.ohw().max(1);
        let want = 1024usize.div_ceil(per);
        let cap = (1usize << 22) / (self.ckk() * per).max(1);
        want.min(cap).clamp(1, self.n.max(1))
    }
}

/// Writes the patches of one sample into columns `[col0, col0 + ohw)` of a
/// `[ckk, ld]` matrix.
fn im2col<T: Elem>(x: &[T], g: &ConvGeom, col: &mut [T], ld: usize, col0: usize) {
    let (h, w) = (g.h as isize, g.w as isize);
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * ld + col0..row * ld + col0 + g.ohw()];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= h {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Elem>(col: &[T], g: &ConvGeom, ld: usize, col0: usize, dx: &mut [T]) {
    let (h, w) = (g.h as isize, g.w as isize);
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * ld + col0..row * ld + col0 + g.ohw()];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w {
                            drow[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Elem>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (ckk, ohw) = (g.ckk(), g.ohw());
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * ohw;
    let mut y = vec![T::zero(); g.n * out_len];
    let chunk = g.chunk();
    let mut col = vec![T::zero(); ckk * chunk * ohw];
    let mut tmp = vec![T::zero(); g.o * chunk * ohw];
    let mut start = 0;
    while start < g.n {
        let cn = chunk.min(g.n - start);
        let ld = cn * ohw;
        for s in 0..cn {
            im2col(&x[(start + s) * in_len..(start + s + 1) * in_len], g, &mut col, ld, s * ohw);
        }
        gemm(g.o, ckk, ld, T::one(), weight, false, &col[..ckk * ld], false, T::zero(), &mut tmp[..g.o * ld]);
        for s in 0..cn {
            let out = &mut y[(start + s) * out_len..(start + s + 1) * out_len];
            for o in 0..g.o {
                let b = bias.map_or(T::zero(), |b| b[o]);
                let src = &tmp[o * ld + s * ohw..o * ld + (s + 1) * ohw];
                for (d, &v) in out[o * ohw..(o + 1) * ohw].iter_mut().zip(src) {
                    *d = v + b;
                }
            }
        }
        start += cn;
    }
    y
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub fn conv2d_backward<T: Elem>(x: &[T], weight: &[T], dy: &[T], g: &ConvGeom, need_dx: bool) -> ConvGrads<T> {
    let (ckk, ohw) = (g.ckk(), g.ohw());
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * ohw;
    let mut dw = vec![T::zero(); g.o * ckk];
    let mut db = vec![T::zero(); g.o];
    let mut dx = if need_dx { Some(vec![T::zero(); g.n * in_len]) } else { None };
    let chunk = g.chunk();
    let mut col = vec![T::zero(); ckk * chunk * ohw];
    let mut dyc = vec![T::zero(); g.o * chunk * ohw];
    let mut start = 0;
    while start < g.n {
        let cn = chunk.min(g.n - start);
        let ld = cn * ohw;
        for s in 0..cn {
            im2col(&x[(start + s) * in_len..(start + s + 1) * in_len], g, &mut col, ld, s * ohw);
            let src = &dy[(start + s) * out_len..(start + s + 1) * out_len];
            for o in 0..g.o {
                let row = &src[o * ohw..(o + 1) * ohw];
                dyc[o * ld + s * ohw..o * ld + (s + 1) * ohw].copy_from_slice(row);
            }
        }
        for o in 0..g.o {
            db[o] += dyc[o * ld..(o + 1) * ld].iter().copied().sum::<T>();
        }
        // dW[o, ckk] += dY[o, ld] * col[ckk, ld]^T
        gemm(g.o, ld, ckk, T::one(), &dyc[..g.o * ld], false, &col[..ckk * ld], true, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            // dcol[ckk, ld] = W[o, ckk]^T * dY[o, ld]
            gemm(ckk, g.o, ld, T::one(), weight, true, &dyc[..g.o * ld], false, T::zero(), &mut col[..ckk * ld]);
            for s in 0..cn {
                col2im(&col, g, ld, s * ohw, &mut dx[(start + s) * in_len..(start + s + 1) * in_len]);
            }
        }
        start += cn;
    }
    ConvGrads { dx, dw, db }
}
