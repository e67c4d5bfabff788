//! 2x spatial down/up sampling kernels: max pooling and bilinear upsampling.

use crate::scalar::Real;

/// 2x2 stride-2 max pooling over `planes` independent `h x w` planes.
/// Returns the flat input index of each output's maximum (first index wins ties).
pub fn maxpool2_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize, out: &mut [T]) -> Vec<u32> {
    let (ho, wo) = (h / 2, w / 2);
    let mut argmax = vec![0u32; planes * ho * wo];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                let o = (p * ho + oy) * wo + ox;
                out[o] = x[best];
                argmax[o] = best as u32;
            }
        }
    }
    argmax
}

pub fn maxpool2_backward<T: Real>(dy: &[T], argmax: &[u32], dx: &mut [T]) {
    dx.fill(T::zero());
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i as usize] = dx[i as usize] + g;
    }
}

/// Source taps for one output coordinate of a 2x half-pixel (align-corners=false)
/// bilinear upsample along an axis of length `n`.
#[derive(Debug, Clone, Copy)]
struct Taps {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn axis_taps(n: usize) -> Vec<Taps> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let w1 = src - i0 as f64;
            Taps {
                i0,
                i1,
                w0: 1.0 - w1,
                w1,
            }
        })
        .collect()
}

pub fn upsample2_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize, out: &mut [T]) {
    let ty = axis_taps(h);
    let tx = axis_taps(w);
    let (ho, wo) = (2 * h, 2 * w);
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        let op = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, ay) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64(ay.w0), T::from_f64(ay.w1));
            let r0 = &xp[ay.i0 * w..(ay.i0 + 1) * w];
            let r1 = &xp[ay.i1 * w..(ay.i1 + 1) * w];
            for (ox, ax) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::from_f64(ax.w0), T::from_f64(ax.w1));
                let top = wx0 * r0[ax.i0] + wx1 * r0[ax.i1];
                let bot = wx0 * r1[ax.i0] + wx1 * r1[ax.i1];
                op[oy * wo + ox] = wy0 * top + wy1 * bot;
            }
        }
    }
}

pub fn upsample2_backward<T: Real>(dy: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let ty = axis_taps(h);
    let tx = axis_taps(w);
    let (ho, wo) = (2 * h, 2 * w);
    dx.fill(T::zero());
    for p in 0..planes {
        let gp = &dy[p * ho * wo..(p + 1) * ho * wo];
        let dp = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, ay) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64(ay.w0), T::from_f64(ay.w1));
            for (ox, ax) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::from_f64(ax.w0), T::from_f64(ax.w1));
                let g = gp[oy * wo + ox];
                let (a, b) = (ay.i0 * w, ay.i1 * w);
                dp[a + ax.i0] = dp[a + ax.i0] + wy0 * wx0 * g;
                dp[a + ax.i1] = dp[a + ax.i1] + wy0 * wx1 * g;
                dp[b + ax.i0] = dp[b + ax.i0] + wy1 * wx0 * g;
                dp[b + ax.i1] = dp[b + ax.i1] + wy1 * wx1 * g;
            }
        }
    }
}
