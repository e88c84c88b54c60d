//! Convolution-family operations (im2col + GEMM) and the dense layer op.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, ArrayView2, ArrayViewMut2, Axis, IxDyn};

use crate::graph::Var;
use crate::scalar::Scalar;

/// Geometry of one image/channel stack seen by a strided, dilated kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geo {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub dh: usize,
    pub dw: usize,
    pub pt: usize,
    pub pl: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geo {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output positions `o` with `0 <= o*s + k*d - p < n`.
    fn valid(o_max: usize, s: usize, k: usize, d: usize, p: usize, n: usize) -> (usize, usize) {
        let off = k * d;
        let lo = if off >= p { 0 } else { (p - off).div_ceil(s) };
        // o*s + off - p <= n - 1  =>  o <= (n - 1 + p - off) / s
        let hi = if n + p < off + 1 {
            0
        } else {
            ((n - 1 + p - off) / s + 1).min(o_max)
        };
        (lo.min(hi), hi)
    }
}

pub(crate) fn im2col<T: Scalar>(x: &[T], g: &Geo, cols: &mut [T]) {
    let n = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (oh_lo, oh_hi) = Geo::valid(g.oh, g.sh, ki, g.dh, g.pt, g.h);
            for kj in 0..g.kw {
                let row = &mut cols[((c * g.kh + ki) * g.kw + kj) * n..][..n];
                row.fill(T::zero());
                let (ow_lo, ow_hi) = Geo::valid(g.ow, g.sw, kj, g.dw, g.pl, g.w);
                for oi in oh_lo..oh_hi {
                    let ih = oi * g.sh + ki * g.dh - g.pt;
                    let src = &plane[ih * g.w..(ih + 1) * g.w];
                    let dst = &mut row[oi * g.ow..(oi + 1) * g.ow];
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    if g.sw == 1 {
                        let s0 = ow_lo + kj * g.dw - g.pl;
                        dst[ow_lo..ow_hi].copy_from_slice(&src[s0..s0 + (ow_hi - ow_lo)]);
                    } else {
                        for oj in ow_lo..ow_hi {
                            dst[oj] = src[oj * g.sw + kj * g.dw - g.pl];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &Geo, x: &mut [T]) {
    let n = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (oh_lo, oh_hi) = Geo::valid(g.oh, g.sh, ki, g.dh, g.pt, g.h);
            for kj in 0..g.kw {
                let row = &cols[((c * g.kh + ki) * g.kw + kj) * n..][..n];
                let (ow_lo, ow_hi) = Geo::valid(g.ow, g.sw, kj, g.dw, g.pl, g.w);
                for oi in oh_lo..oh_hi {
                    let ih = oi * g.sh + ki * g.dh - g.pt;
                    let dst = &mut plane[ih * g.w..(ih + 1) * g.w];
                    let src = &row[oi * g.ow..(oi + 1) * g.ow];
                    for oj in ow_lo..ow_hi {
                        dst[oj * g.sw + kj * g.dw - g.pl] += src[oj];
                    }
                }
            }
        }
    }
}

fn std_vec<T: Scalar>(a: &ArrayD<T>) -> std::borrow::Cow<'_, [T]> {
    match a.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().cloned().collect()),
    }
}

fn mat<T: Scalar>(s: &[T], r: usize, c: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((r, c), s).unwrap()
}

fn mat_mut<T: Scalar>(s: &mut [T], r: usize, c: usize) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((r, c), s).unwrap()
}

fn out_size(n: usize, k: usize, s: usize, d: usize, p0: usize, p1: usize) -> usize {
    let span = d * (k - 1) + 1;
    assert!(
        n + p0 + p1 >= span,
        "kernel span {span} exceeds padded input {}",
        n + p0 + p1
    );
    (n + p0 + p1 - span) / s + 1
}

/// Shared forward/backward of a strided dilated convolution over
/// `[B, Cin, H, W]` with weights `[Cout, Cin, KH, KW]`.
fn conv_nd<'g, T: Scalar>(x: Var<'g, T>, w: Var<'g, T>, b: Option<Var<'g, T>>, geo: Geo, out_shape: Vec<usize>) -> Var<'g, T> {
    let xv = x.value();
    let wv = w.value();
    let batch = xv.shape()[0];
    let cout = wv.shape()[0];
    let xs = std_vec(&xv).into_owned();
    let ws = std_vec(&wv).into_owned();
    let (rows, ncol) = (geo.rows(), geo.cols());
    let in_len = geo.c * geo.h * geo.w;
    let mut out = vec![T::zero(); batch * cout * ncol];
    let mut cols = vec![T::zero(); rows * ncol];
    let wm = mat(&ws, cout, rows);
    for bi in 0..batch {
        im2col(&xs[bi * in_len..(bi + 1) * in_len], &geo, &mut cols);
        let mut o = mat_mut(&mut out[bi * cout * ncol..(bi + 1) * cout * ncol], cout, ncol);
        general_mat_mul(T::one(), &wm, &mat(&cols, rows, ncol), T::zero(), &mut o);
    }
    if let Some(b) = b {
        let bv = b.value();
        for bi in 0..batch {
            for (co, &bias) in bv.iter().enumerate() {
                for v in &mut out[(bi * cout + co) * ncol..(bi * cout + co + 1) * ncol] {
                    *v += bias;
                }
            }
        }
    }
    let value = ArrayD::from_shape_vec(IxDyn(&out_shape), out).unwrap();
    let x_shape = xv.shape().to_vec();
    let w_shape = wv.shape().to_vec();
    drop(xv);
    let parents: Vec<Var<'g, T>> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
    let has_b = b.is_some();
    x.g.push(value, &parents, move |g, need| {
        let gs = std_vec(g).into_owned();
        let wm = mat(&ws, cout, rows);
        let mut dx = need[0].then(|| vec![T::zero(); batch * in_len]);
        let mut dw = need[1].then(|| Array2::<T>::zeros((cout, rows)));
        let mut cols = vec![T::zero(); rows * ncol];
        let mut dcols = vec![T::zero(); rows * ncol];
        for bi in 0..batch {
            let gm = mat(&gs[bi * cout * ncol..(bi + 1) * cout * ncol], cout, ncol);
            if let Some(dw) = dw.as_mut() {
                im2col(&xs[bi * in_len..(bi + 1) * in_len], &geo, &mut cols);
                general_mat_mul(T::one(), &gm, &mat(&cols, rows, ncol).t(), T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                general_mat_mul(T::one(), &wm.t(), &gm, T::zero(), &mut mat_mut(&mut dcols, rows, ncol));
                col2im(&dcols, &geo, &mut dx[bi * in_len..(bi + 1) * in_len]);
            }
        }
        let mut res = vec![
            dx.map(|d| ArrayD::from_shape_vec(IxDyn(&x_shape), d).unwrap()),
            dw.map(|d| d.into_shape_with_order(IxDyn(&w_shape)).unwrap()),
        ];
        if has_b {
            res.push(need[2].then(|| {
                let mut db = vec![T::zero(); cout];
                for bi in 0..batch {
                    for (co, d) in db.iter_mut().enumerate() {
                        *d += gs[(bi * cout + co) * ncol..(bi * cout + co + 1) * ncol].iter().cloned().sum();
                    }
                }
                ArrayD::from_shape_vec(IxDyn(&[cout]), db).unwrap()
            }));
        }
        res
    })
}

/// 1-D convolution: `x [B, Cin, L]`, `w [Cout, Cin, K]`, zero padding
/// `(left, right)`.
pub fn conv1d<'g, T: Scalar>(
    x: Var<'g, T>,
    w: Var<'g, T>,
    b: Option<Var<'g, T>>,
    stride: usize,
    dilation: usize,
    pad: (usize, usize),
) -> Var<'g, T> {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(xs.len(), 3, "conv1d input must be [B, C, L]");
    assert_eq!(xs[1], ws[1], "conv1d channel mismatch");
    let ol = out_size(xs[2], ws[2], stride, dilation, pad.0, pad.1);
    let geo = Geo {
        c: xs[1],
        h: 1,
        w: xs[2],
        kh: 1,
        kw: ws[2],
        sh: 1,
        sw: stride,
        dh: 1,
        dw: dilation,
        pt: 0,
        pl: pad.0,
        oh: 1,
        ow: ol,
    };
    conv_nd(x, w, b, geo, vec![xs[0], ws[0], ol])
}

/// 2-D convolution: `x [B, Cin, H, W]`, `w [Cout, Cin, KH, KW]`, zero
/// padding `(top, bottom, left, right)`.
pub fn conv2d<'g, T: Scalar>(
    x: Var<'g, T>,
    w: Var<'g, T>,
    b: Option<Var<'g, T>>,
    stride: (usize, usize),
    dilation: (usize, usize),
    pad: (usize, usize, usize, usize),
) -> Var<'g, T> {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(xs.len(), 4, "conv2d input must be [B, C, H, W]");
    assert_eq!(xs[1], ws[1], "conv2d channel mismatch");
    let oh = out_size(xs[2], ws[2], stride.0, dilation.0, pad.0, pad.1);
    let ow = out_size(xs[3], ws[3], stride.1, dilation.1, pad.2, pad.3);
    let geo = Geo {
        c: xs[1],
        h: xs[2],
        w: xs[3],
        kh: ws[2],
        kw: ws[3],
        sh: stride.0,
        sw: stride.1,
        dh: dilation.0,
        dw: dilation.1,
        pt: pad.0,
        pl: pad.2,
        oh,
        ow,
    };
    conv_nd(x, w, b, geo, vec![xs[0], ws[0], oh, ow])
}

/// Transposed convolution over `[B, Cin, H, W]` with weights
/// `[Cin, Cout, KH, KW]`: the full output is cropped by `crop` at the top/left
/// and truncated to `out_hw`.
fn conv_transpose_nd<'g, T: Scalar>(
    x: Var<'g, T>,
    w: Var<'g, T>,
    b: Option<Var<'g, T>>,
    geo: Geo,
    out_shape: Vec<usize>,
) -> Var<'g, T> {
    // `geo` describes the output image as the input of the adjoint conv.
    let xv = x.value();
    let wv = w.value();
    let batch = xv.shape()[0];
    let cin = wv.shape()[0];
    let rows = geo.rows();
    let ncol = geo.cols();
    let out_len = geo.c * geo.h * geo.w;
    let xs = std_vec(&xv).into_owned();
    let ws = std_vec(&wv).into_owned();
    let wm = mat(&ws, cin, rows);
    let mut out = vec![T::zero(); batch * out_len];
    let mut cols = vec![T::zero(); rows * ncol];
    for bi in 0..batch {
        let xm = mat(&xs[bi * cin * ncol..(bi + 1) * cin * ncol], cin, ncol);
        general_mat_mul(T::one(), &wm.t(), &xm, T::zero(), &mut mat_mut(&mut cols, rows, ncol));
        col2im(&cols, &geo, &mut out[bi * out_len..(bi + 1) * out_len]);
    }
    let plane = geo.h * geo.w;
    if let Some(b) = b {
        let bv = b.value();
        for bi in 0..batch {
            for (co, &bias) in bv.iter().enumerate() {
                for v in &mut out[bi * out_len + co * plane..bi * out_len + (co + 1) * plane] {
                    *v += bias;
                }
            }
        }
    }
    let value = ArrayD::from_shape_vec(IxDyn(&out_shape), out).unwrap();
    let x_shape = xv.shape().to_vec();
    let w_shape = wv.shape().to_vec();
    let cout = geo.c;
    let parents: Vec<Var<'g, T>> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
    let has_b = b.is_some();
    x.g.push(value, &parents, move |g, need| {
        let gs = std_vec(g).into_owned();
        let wm = mat(&ws, cin, rows);
        let mut dx = need[0].then(|| vec![T::zero(); batch * cin * ncol]);
        let mut dw = need[1].then(|| Array2::<T>::zeros((cin, rows)));
        let mut dcols = vec![T::zero(); rows * ncol];
        for bi in 0..batch {
            im2col(&gs[bi * out_len..(bi + 1) * out_len], &geo, &mut dcols);
            let dm = mat(&dcols, rows, ncol);
            if let Some(dx) = dx.as_mut() {
                general_mat_mul(T::one(), &wm, &dm, T::zero(), &mut mat_mut(&mut dx[bi * cin * ncol..(bi + 1) * cin * ncol], cin, ncol));
            }
            if let Some(dw) = dw.as_mut() {
                let xm = mat(&xs[bi * cin * ncol..(bi + 1) * cin * ncol], cin, ncol);
                general_mat_mul(T::one(), &xm, &dm.t(), T::one(), dw);
            }
        }
        let mut res = vec![
            dx.map(|d| ArrayD::from_shape_vec(IxDyn(&x_shape), d).unwrap()),
            dw.map(|d| d.into_shape_with_order(IxDyn(&w_shape)).unwrap()),
        ];
        if has_b {
            res.push(need[2].then(|| {
                let mut db = vec![T::zero(); cout];
                for bi in 0..batch {
                    for (co, d) in db.iter_mut().enumerate() {
                        *d += gs[bi * out_len + co * plane..bi * out_len + (co + 1) * plane].iter().cloned().sum();
                    }
                }
                ArrayD::from_shape_vec(IxDyn(&[cout]), db).unwrap()
            }));
        }
        res
    })
}

/// Transposed 1-D convolution `x [B, Cin, L]`, `w [Cin, Cout, K]`; output
/// position `l*stride + k - crop`, kept for `0 <= pos < out_len`.
pub fn conv_transpose1d<'g, T: Scalar>(
    x: Var<'g, T>,
    w: Var<'g, T>,
    b: Option<Var<'g, T>>,
    stride: usize,
    crop: usize,
    out_len: usize,
) -> Var<'g, T> {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(xs.len(), 3, "conv_transpose1d input must be [B, C, L]");
    assert_eq!(xs[1], ws[0], "conv_transpose1d channel mismatch");
    let geo = Geo {
        c: ws[1],
        h: 1,
        w: out_len,
        kh: 1,
        kw: ws[2],
        sh: 1,
        sw: stride,
        dh: 1,
        dw: 1,
        pt: 0,
        pl: crop,
        oh: 1,
        ow: xs[2],
    };
    conv_transpose_nd(x, w, b, geo, vec![xs[0], ws[1], out_len])
}

/// Transposed 2-D convolution `x [B, Cin, H, W]`, `w [Cin, Cout, KH, KW]`.
pub fn conv_transpose2d<'g, T: Scalar>(
    x: Var<'g, T>,
    w: Var<'g, T>,
    b: Option<Var<'g, T>>,
    stride: (usize, usize),
    crop: (usize, usize),
    out_hw: (usize, usize),
) -> Var<'g, T> {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(xs.len(), 4, "conv_transpose2d input must be [B, C, H, W]");
    assert_eq!(xs[1], ws[0], "conv_transpose2d channel mismatch");
    let geo = Geo {
        c: ws[1],
        h: out_hw.0,
        w: out_hw.1,
        kh: ws[2],
        kw: ws[3],
        sh: stride.0,
        sw: stride.1,
        dh: 1,
        dw: 1,
        pt: crop.0,
        pl: crop.1,
        oh: xs[2],
        ow: xs[3],
    };
    conv_transpose_nd(x, w, b, geo, vec![xs[0], ws[1], out_hw.0, out_hw.1])
}

/// Per-channel 1-D convolution: `x [B, C, L]`, `w [C, K]`, `b [C]`.
pub fn depthwise_conv1d<'g, T: Scalar>(x: Var<'g, T>, w: Var<'g, T>, b: Option<Var<'g, T>>, pad: (usize, usize)) -> Var<'g, T> {
    let xv = x.value();
    let wv = w.value();
    let (bsz, c, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
    assert_eq!(wv.shape()[0], c, "depthwise channel mismatch");
    let k = wv.shape()[1];
    let ol = out_size(l, k, 1, 1, pad.0, pad.1);
    let xs = std_vec(&xv).into_owned();
    let ws = std_vec(&wv).into_owned();
    let bs: Option<Vec<T>> = b.map(|b| b.value().iter().cloned().collect());
    let mut out = vec![T::zero(); bsz * c * ol];
    for bi in 0..bsz {
        for ci in 0..c {
            let src = &xs[(bi * c + ci) * l..(bi * c + ci + 1) * l];
            let dst = &mut out[(bi * c + ci) * ol..(bi * c + ci + 1) * ol];
            let bias = bs.as_ref().map_or(T::zero(), |b| b[ci]);
            for (o, d) in dst.iter_mut().enumerate() {
                let mut acc = bias;
                for kk in 0..k {
                    let p = o + kk;
                    if p >= pad.0 && p - pad.0 < l {
                        acc += ws[ci * k + kk] * src[p - pad.0];
                    }
                }
                *d = acc;
            }
        }
    }
    let value = ArrayD::from_shape_vec(IxDyn(&[bsz, c, ol]), out).unwrap();
    let parents: Vec<Var<'g, T>> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
    let has_b = b.is_some();
    x.g.push(value, &parents, move |g, need| {
        let gs = std_vec(g).into_owned();
        let mut dx = vec![T::zero(); bsz * c * l];
        let mut dw = vec![T::zero(); c * k];
        let mut db = vec![T::zero(); c];
        for bi in 0..bsz {
            for ci in 0..c {
                let src = &xs[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                let gr = &gs[(bi * c + ci) * ol..(bi * c + ci + 1) * ol];
                for (o, &gv) in gr.iter().enumerate() {
                    db[ci] += gv;
                    for kk in 0..k {
                        let p = o + kk;
                        if p >= pad.0 && p - pad.0 < l {
                            dw[ci * k + kk] += gv * src[p - pad.0];
                            dx[(bi * c + ci) * l + p - pad.0] += gv * ws[ci * k + kk];
                        }
                    }
                }
            }
        }
        let mut res = vec![
            need[0].then(|| ArrayD::from_shape_vec(IxDyn(&[bsz, c, l]), dx).unwrap()),
            need[1].then(|| ArrayD::from_shape_vec(IxDyn(&[c, k]), dw).unwrap()),
        ];
        if has_b {
            res.push(need[2].then(|| ArrayD::from_shape_vec(IxDyn(&[c]), db).unwrap()));
        }
        res
    })
}

/// Dense layer over the last axis: `x [..., In]`, `w [In, Out]`, `b [Out]`.
pub fn linear<'g, T: Scalar>(x: Var<'g, T>, w: Var<'g, T>, b: Option<Var<'g, T>>) -> Var<'g, T> {
    let xv = x.value();
    let wv = w.value();
    let shape = xv.shape().to_vec();
    let din = *shape.last().unwrap();
    assert_eq!(wv.shape()[0], din, "linear input width mismatch");
    let dout = wv.shape()[1];
    let rows = xv.len() / din;
    let xs = std_vec(&xv).into_owned();
    let wm = wv
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap()
        .to_owned();
    let mut out = Array2::<T>::zeros((rows, dout));
    general_mat_mul(T::one(), &mat(&xs, rows, din), &wm, T::zero(), &mut out);
    if let Some(b) = b {
        let bv = b.value();
        let bv = bv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        out += &bv;
    }
    let mut oshape = shape.clone();
    *oshape.last_mut().unwrap() = dout;
    let value = out.into_shape_with_order(IxDyn(&oshape)).unwrap();
    let parents: Vec<Var<'g, T>> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
    let has_b = b.is_some();
    x.g.push(value, &parents, move |g, need| {
        let gs = std_vec(g).into_owned();
        let gm = mat(&gs, rows, dout);
        let xm = mat(&xs, rows, din);
        let mut res = vec![
            need[0].then(|| {
                let mut dx = Array2::<T>::zeros((rows, din));
                general_mat_mul(T::one(), &gm, &wm.t(), T::zero(), &mut dx);
                dx.into_shape_with_order(IxDyn(&shape)).unwrap()
            }),
            need[1].then(|| {
                let mut dw = Array2::<T>::zeros((din, dout));
                general_mat_mul(T::one(), &xm.t(), &gm, T::zero(), &mut dw);
                dw.into_dyn()
            }),
        ];
        if has_b {
            res.push(need[2].then(|| gm.sum_axis(Axis(0)).into_dyn()));
        }
        res
    })
}
