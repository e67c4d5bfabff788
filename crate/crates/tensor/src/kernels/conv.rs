//! Convolution kernels on raw NCHW slices.
//!
//! Cross-correlation convention (no kernel flip). Dense convolutions go through
//! im2col + GEMM; the depthwise filter is a direct loop.

use crate::scalar::{gemm, MatRef, Real};

/// Stride and zero padding of a 2-D convolution, as `(rows, cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeom {
    pub const fn new(stride: (usize, usize), pad: (usize, usize)) -> Self {
        Self { stride, pad }
    }

    pub const fn unit() -> Self {
        Self::new((1, 1), (0, 0))
    }

    /// Output spatial size, `floor((in + 2 pad - k) / stride) + 1`.
    pub fn out_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let axis = |inp: usize, k: usize, s: usize, p: usize| {
            if s == 0 || inp + 2 * p < k {
                None
            } else {
                Some((inp + 2 * p - k) / s + 1)
            }
        };
        Some((
            axis(h, kh, self.stride.0, self.pad.0)?,
            axis(w, kw, self.stride.1, self.pad.1)?,
        ))
    }
}

/// Full shape bookkeeping for one dense convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub geom: ConvGeom,
}

impl ConvShape {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom == ConvGeom::unit()
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

fn im2col<T: Real>(x: &[T], s: &ConvShape, cols: &mut [T]) {
    let (sh, sw) = s.geom.stride;
    let (ph, pw) = s.geom.pad;
    let plane = s.ho * s.wo;
    for ci in 0..s.cin {
        let xc = &x[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let row = (ci * s.kh + ki) * s.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..s.ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    let drow = &mut dst[oy * s.wo..(oy + 1) * s.wo];
                    if iy < 0 || iy >= s.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        *d = if ix < 0 || ix >= s.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], s: &ConvShape, dx: &mut [T]) {
    let (sh, sw) = s.geom.stride;
    let (ph, pw) = s.geom.pad;
    let plane = s.ho * s.wo;
    for ci in 0..s.cin {
        let xc = &mut dx[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let row = (ci * s.kh + ki) * s.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..s.ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..s.wo {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix >= 0 && ix < s.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * s.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[n, co] = sum_ci w[co, ci] (*) x[n, ci] + b[co]`.
pub fn conv2d_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, s: &ConvShape, out: &mut [T]) {
    let in_img = s.cin * s.h * s.w;
    let plane = s.ho * s.wo;
    let out_img = s.cout * plane;
    let k = s.patch();
    let mut cols = if s.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * plane]
    };
    for n in 0..s.n {
        let xn = &x[n * in_img..(n + 1) * in_img];
        let on = &mut out[n * out_img..(n + 1) * out_img];
        let rhs = if s.is_pointwise() {
            xn
        } else {
            im2col(xn, s, &mut cols);
            &cols
        };
        gemm(
            s.cout,
            k,
            plane,
            MatRef::row_major(w, k),
            MatRef::row_major(rhs, plane),
            T::zero(),
            on,
        );
        if let Some(b) = b {
            for (co, &bias) in b.iter().enumerate() {
                for v in &mut on[co * plane..(co + 1) * plane] {
                    *v = *v + bias;
                }
            }
        }
    }
}

/// Gradients of [`conv2d_forward`]. `dw` and `db` are accumulated into; `dx`
/// (when requested) is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    s: &ConvShape,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let in_img = s.cin * s.h * s.w;
    let plane = s.ho * s.wo;
    let out_img = s.cout * plane;
    let k = s.patch();
    let pointwise = s.is_pointwise();

    if let Some(db) = db {
        for n in 0..s.n {
            let dyn_ = &dy[n * out_img..(n + 1) * out_img];
            for (co, acc) in db.iter_mut().enumerate() {
                *acc = *acc + dyn_[co * plane..(co + 1) * plane].iter().copied().sum();
            }
        }
    }

    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); k * plane]
    };

    if let Some(dw) = dw {
        for n in 0..s.n {
            let xn = &x[n * in_img..(n + 1) * in_img];
            let dyn_ = &dy[n * out_img..(n + 1) * out_img];
            let rhs = if pointwise {
                xn
            } else {
                im2col(xn, s, &mut cols);
                &cols
            };
            // dW[cout, k] += dy[cout, plane] * cols^T[plane, k]
            gemm(
                s.cout,
                plane,
                k,
                MatRef::row_major(dyn_, plane),
                MatRef::transposed(rhs, plane),
                T::one(),
                dw,
            );
        }
    }

    if let Some(dx) = dx {
        for n in 0..s.n {
            let dyn_ = &dy[n * out_img..(n + 1) * out_img];
            let dxn = &mut dx[n * in_img..(n + 1) * in_img];
            // dcols[k, plane] = W^T[k, cout] * dy[cout, plane]
            if pointwise {
                gemm(
                    k,
                    s.cout,
                    plane,
                    MatRef::transposed(w, k),
                    MatRef::row_major(dyn_, plane),
                    T::zero(),
                    dxn,
                );
            } else {
                gemm(
                    k,
                    s.cout,
                    plane,
                    MatRef::transposed(w, k),
                    MatRef::row_major(dyn_, plane),
                    T::zero(),
                    &mut cols,
                );
                dxn.fill(T::zero());
                col2im(&cols, s, dxn);
            }
        }
    }
}

/// Shape of a per-channel (depthwise) convolution; `w` is `[c, 1, kh, kw]`.
#[derive(Debug, Clone, Copy)]
pub struct DepthwiseShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub geom: ConvGeom,
}

impl DepthwiseShape {
    #[inline]
    fn src(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<usize> {
        let iy = (oy * self.geom.stride.0 + ki) as isize - self.geom.pad.0 as isize;
        let ix = (ox * self.geom.stride.1 + kj) as isize - self.geom.pad.1 as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            None
        } else {
            Some(iy as usize * self.w + ix as usize)
        }
    }
}

pub fn depthwise_forward<T: Real>(x: &[T], w: &[T], s: &DepthwiseShape, out: &mut [T]) {
    let ksz = s.kh * s.kw;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane_in = (n * s.c + c) * s.h * s.w;
            let plane_out = (n * s.c + c) * s.ho * s.wo;
            let xc = &x[plane_in..plane_in + s.h * s.w];
            let wc = &w[c * ksz..(c + 1) * ksz];
            let oc = &mut out[plane_out..plane_out + s.ho * s.wo];
            for oy in 0..s.ho {
                for ox in 0..s.wo {
                    let mut acc = T::zero();
                    for ki in 0..s.kh {
                        for kj in 0..s.kw {
                            if let Some(i) = s.src(oy, ox, ki, kj) {
                                acc = acc + wc[ki * s.kw + kj] * xc[i];
                            }
                        }
                    }
                    oc[oy * s.wo + ox] = acc;
                }
            }
        }
    }
}

pub fn depthwise_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    s: &DepthwiseShape,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let ksz = s.kh * s.kw;
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(T::zero());
    }
    for n in 0..s.n {
        for c in 0..s.c {
            let plane_in = (n * s.c + c) * s.h * s.w;
            let plane_out = (n * s.c + c) * s.ho * s.wo;
            let xc = &x[plane_in..plane_in + s.h * s.w];
            let wc = &w[c * ksz..(c + 1) * ksz];
            let gc = &dy[plane_out..plane_out + s.ho * s.wo];
            for oy in 0..s.ho {
                for ox in 0..s.wo {
                    let g = gc[oy * s.wo + ox];
                    for ki in 0..s.kh {
                        for kj in 0..s.kw {
                            if let Some(i) = s.src(oy, ox, ki, kj) {
                                if let Some(dx) = dx.as_deref_mut() {
                                    let j = plane_in + i;
                                    dx[j] = dx[j] + wc[ki * s.kw + kj] * g;
                                }
                                if let Some(dw) = dw.as_deref_mut() {
                                    let j = c * ksz + ki * s.kw + kj;
                                    dw[j] = dw[j] + xc[i] * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Shape of a 2x2, stride-2 transposed convolution; `w` is `[cin, cout, 2, 2]`.
#[derive(Debug, Clone, Copy)]
pub struct DeconvShape {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

pub fn deconv_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, s: &DeconvShape, out: &mut [T]) {
    let plane = s.h * s.w;
    let rows = s.cout * 4;
    let (ho, wo) = (2 * s.h, 2 * s.w);
    let mut tmp = vec![T::zero(); rows * plane];
    for n in 0..s.n {
        let xn = &x[n * s.cin * plane..(n + 1) * s.cin * plane];
        // tmp[cout*4, plane] = W^T[cout*4, cin] * x[cin, plane]
        gemm(
            rows,
            s.cin,
            plane,
            MatRef::transposed(w, rows),
            MatRef::row_major(xn, plane),
            T::zero(),
            &mut tmp,
        );
        let on = &mut out[n * s.cout * ho * wo..(n + 1) * s.cout * ho * wo];
        for co in 0..s.cout {
            let bias = b.map_or(T::zero(), |b| b[co]);
            for a in 0..2 {
                for bb in 0..2 {
                    let src = &tmp[(co * 4 + a * 2 + bb) * plane..][..plane];
                    for i in 0..s.h {
                        let dst = &mut on[co * ho * wo + (2 * i + a) * wo..][..wo];
                        for j in 0..s.w {
                            dst[2 * j + bb] = src[i * s.w + j] + bias;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn deconv_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    s: &DeconvShape,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let plane = s.h * s.w;
    let rows = s.cout * 4;
    let (ho, wo) = (2 * s.h, 2 * s.w);
    let mut dtmp = vec![T::zero(); rows * plane];
    for n in 0..s.n {
        let dyn_ = &dy[n * s.cout * ho * wo..(n + 1) * s.cout * ho * wo];
        for co in 0..s.cout {
            for a in 0..2 {
                for bb in 0..2 {
                    let dst = &mut dtmp[(co * 4 + a * 2 + bb) * plane..][..plane];
                    for i in 0..s.h {
                        let src = &dyn_[co * ho * wo + (2 * i + a) * wo..][..wo];
                        for j in 0..s.w {
                            dst[i * s.w + j] = src[2 * j + bb];
                        }
                    }
                }
            }
            if let Some(db) = db.as_deref_mut() {
                db[co] = db[co] + dyn_[co * ho * wo..(co + 1) * ho * wo].iter().copied().sum();
            }
        }
        let xn = &x[n * s.cin * plane..(n + 1) * s.cin * plane];
        if let Some(dx) = dx.as_deref_mut() {
            // dx[cin, plane] = W[cin, cout*4] * dtmp[cout*4, plane]
            gemm(
                s.cin,
                rows,
                plane,
                MatRef::row_major(w, rows),
                MatRef::row_major(&dtmp, plane),
                T::zero(),
                &mut dx[n * s.cin * plane..(n + 1) * s.cin * plane],
            );
        }
        if let Some(dw) = dw.as_deref_mut() {
            // dW[cin, cout*4] += x[cin, plane] * dtmp^T[plane, cout*4]
            gemm(
                s.cin,
                plane,
                rows,
                MatRef::row_major(xn, plane),
                MatRef::transposed(&dtmp, plane),
                T::one(),
                dw,
            );
        }
    }
}
