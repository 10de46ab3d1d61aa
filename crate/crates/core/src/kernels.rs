//! Slice-level numeric kernels behind the differentiable ops.
//!
//! Layouts: images are `C×H×W`, conv weights `C_out×C_in×k×k`, matrices
//! row-major `rows×cols`.

use crate::scalar::Scalar;

pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a^T · g` for `a: m×k`, `g: m×n`.
pub(crate) fn matmul_at_b<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// `g · b^T` for `g: m×n`, `b: k×n`.
pub(crate) fn matmul_a_bt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub ks: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Output extent or `None` when it would be < 1.
    pub fn out_extent(len: usize, ks: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = len + 2 * pad;
        if padded < ks || stride == 0 {
            return None;
        }
        Some((padded - ks) / stride + 1)
    }

    /// Range of output positions whose tap `kk` lands inside `0..len`.
    #[inline]
    fn valid(&self, kk: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as i64;
        let off = kk as i64 - self.pad as i64;
        // o*s + off >= 0  and  o*s + off <= len-1
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi_num = len as i64 - 1 - off;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_len as i64);
        if lo >= hi {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.c_out * g.ho * g.wo];
    let (s, p) = (g.stride, g.pad);
    for o in 0..g.c_out {
        let oplane = &mut out[o * g.ho * g.wo..(o + 1) * g.ho * g.wo];
        for c in 0..g.c_in {
            let xplane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..g.ks {
                let (oy0, oy1) = g.valid(ky, g.h, g.ho);
                for kx in 0..g.ks {
                    let wv = k[((o * g.c_in + c) * g.ks + ky) * g.ks + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (ox0, ox1) = g.valid(kx, g.w, g.wo);
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let xrow = &xplane[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut oplane[oy * g.wo..(oy + 1) * g.wo];
                        for ox in ox0..ox1 {
                            orow[ox] += wv * xrow[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_k)`; either is skipped when its flag is false.
pub(crate) fn conv2d_backward<T: Scalar>(
    gout: &[T],
    x: &[T],
    k: &[T],
    g: &ConvGeom,
    need_x: bool,
    need_k: bool,
) -> (Vec<T>, Vec<T>) {
    let mut gx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut gk = if need_k { vec![T::zero(); k.len()] } else { Vec::new() };
    let (s, p) = (g.stride, g.pad);
    for o in 0..g.c_out {
        let gplane = &gout[o * g.ho * g.wo..(o + 1) * g.ho * g.wo];
        for c in 0..g.c_in {
            let base = c * g.h * g.w;
            for ky in 0..g.ks {
                let (oy0, oy1) = g.valid(ky, g.h, g.ho);
                for kx in 0..g.ks {
                    let widx = ((o * g.c_in + c) * g.ks + ky) * g.ks + kx;
                    let wv = k[widx];
                    let (ox0, ox1) = g.valid(kx, g.w, g.wo);
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let grow = &gplane[oy * g.wo..(oy + 1) * g.wo];
                        let row = base + iy * g.w;
                        for ox in ox0..ox1 {
                            let ix = ox * s + kx - p;
                            let gv = grow[ox];
                            if need_k {
                                acc += gv * x[row + ix];
                            }
                            if need_x {
                                gx[row + ix] += wv * gv;
                            }
                        }
                    }
                    if need_k {
                        gk[widx] += acc;
                    }
                }
            }
        }
    }
    (gx, gk)
}

/// Zero-padded 1-D correlation of a channel vector with an odd kernel.
pub(crate) fn conv1d_same<T: Scalar>(x: &[T], kernel: &[T]) -> Vec<T> {
    let half = kernel.len() / 2;
    let c = x.len() as i64;
    (0..x.len())
        .map(|i| {
            let mut acc = T::zero();
            for (j, &kv) in kernel.iter().enumerate() {
                let src = i as i64 + j as i64 - half as i64;
                if (0..c).contains(&src) {
                    acc += kv * x[src as usize];
                }
            }
            acc
        })
        .collect()
}

pub(crate) fn conv1d_same_backward<T: Scalar>(
    gout: &[T],
    x: &[T],
    kernel: &[T],
) -> (Vec<T>, Vec<T>) {
    let half = kernel.len() / 2;
    let c = x.len() as i64;
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); kernel.len()];
    for (i, &gv) in gout.iter().enumerate() {
        for (j, &kv) in kernel.iter().enumerate() {
            let src = i as i64 + j as i64 - half as i64;
            if (0..c).contains(&src) {
                let src = src as usize;
                gx[src] += kv * gv;
                gk[j] += x[src] * gv;
            }
        }
    }
    (gx, gk)
}

/// Half-open input window `[floor(i·len/t), ceil((i+1)·len/t))`.
#[inline]
pub(crate) fn pool_window(i: usize, len: usize, target: usize) -> (usize, usize) {
    let start = i * len / target;
    let end = ((i + 1) * len).div_ceil(target);
    (start, end)
}

pub(crate) fn adaptive_avg_pool2d<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    th: usize,
    tw: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); c * th * tw];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..th {
            let (y0, y1) = pool_window(i, h, th);
            for j in 0..tw {
                let (x0, x1) = pool_window(j, w, tw);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for v in &plane[y * w + x0..y * w + x1] {
                        acc += *v;
                    }
                }
                let count = T::from_usize_lossy((y1 - y0) * (x1 - x0));
                out[(ch * th + i) * tw + j] = acc / count;
            }
        }
    }
    out
}

pub(crate) fn adaptive_avg_pool2d_backward<T: Scalar>(
    gout: &[T],
    c: usize,
    h: usize,
    w: usize,
    th: usize,
    tw: usize,
) -> Vec<T> {
    let mut gx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for i in 0..th {
            let (y0, y1) = pool_window(i, h, th);
            for j in 0..tw {
                let (x0, x1) = pool_window(j, w, tw);
                let count = T::from_usize_lossy((y1 - y0) * (x1 - x0));
                let share = gout[(ch * th + i) * tw + j] / count;
                for y in y0..y1 {
                    for v in &mut gx[ch * h * w + y * w + x0..ch * h * w + y * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_windows_cover_input() {
        for len in 1..20 {
            for t in 1..=len {
                let (s0, _) = pool_window(0, len, t);
                let (_, e_last) = pool_window(t - 1, len, t);
                assert_eq!(s0, 0);
                assert_eq!(e_last, len);
                for i in 0..t {
                    let (s, e) = pool_window(i, len, t);
                    assert!(s < e);
                }
            }
        }
    }

    #[test]
    fn conv_valid_ranges_match_brute_force() {
        for (len, ks, stride, pad) in [(5, 3, 1, 1), (7, 3, 2, 1), (4, 3, 1, 0), (6, 5, 2, 2), (1, 3, 1, 1)] {
            let out = ConvGeom::out_extent(len, ks, stride, pad).unwrap();
            let g = ConvGeom { c_in: 1, h: len, w: len, c_out: 1, ks, stride, pad, ho: out, wo: out };
            for kk in 0..ks {
                let (lo, hi) = g.valid(kk, len, out);
                for o in 0..out {
                    let src = (o * stride + kk) as i64 - pad as i64;
                    let inside = src >= 0 && src < len as i64;
                    assert_eq!(inside, o >= lo && o < hi, "len {len} ks {ks} kk {kk} o {o}");
                }
            }
        }
    }
}
