//! Batch and layer normalisation as fused operations.

use ndarray::{ArrayD, IxDyn};

use crate::graph::Var;
use crate::params::ParamId;
use crate::scalar::Scalar;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const LAYER_NORM_EPS: f64 = 1e-6;

fn flat<T: Scalar>(a: &ArrayD<T>) -> Vec<T> {
    a.iter().cloned().collect()
}

/// Batch normalisation over axis 1 of `x [B, C, ...]`.
///
/// In a training graph the batch statistics are used and exponential
/// running-average updates for `running = (mean, var)` are recorded
/// (unbiased variance, PyTorch convention). Otherwise the running statistics
/// are used as constants.
pub fn batch_norm<'g, T: Scalar>(
    x: Var<'g, T>,
    gamma: Var<'g, T>,
    beta: Var<'g, T>,
    running: (ParamId, ParamId),
    eps: f64,
    momentum: f64,
) -> Var<'g, T> {
    let g = x.graph();
    let xv = x.value();
    let shape = xv.shape().to_vec();
    let (b, c) = (shape[0], shape[1]);
    let n: usize = shape[2..].iter().product();
    let m = b * n;
    let xs = flat(&xv);
    let gam = flat(&gamma.value());
    let bet = flat(&beta.value());
    let train = g.is_training();
    let (mean, var) = if train {
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for bi in 0..b {
            for ci in 0..c {
                for &v in &xs[(bi * c + ci) * n..(bi * c + ci + 1) * n] {
                    mean[ci] += v.f64();
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for bi in 0..b {
            for ci in 0..c {
                for &v in &xs[(bi * c + ci) * n..(bi * c + ci + 1) * n] {
                    var[ci] += (v.f64() - mean[ci]).powi(2);
                }
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let rm = g.param(running.0).value();
        let rv = g.param(running.1).value();
        let unbias = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
        let nm = ArrayD::from_shape_fn(rm.raw_dim(), |i| {
            T::c((1.0 - momentum) * rm[&i].f64() + momentum * mean[i[0]])
        });
        let nv = ArrayD::from_shape_fn(rv.raw_dim(), |i| {
            T::c((1.0 - momentum) * rv[&i].f64() + momentum * var[i[0]] * unbias)
        });
        g.record_update(running.0, nm);
        g.record_update(running.1, nv);
        (mean, var)
    } else {
        (
            g.param(running.0).value().iter().map(|v| v.f64()).collect(),
            g.param(running.1).value().iter().map(|v| v.f64()).collect(),
        )
    };
    let inv: Vec<T> = var.iter().map(|v| T::c(1.0 / (v + eps).sqrt())).collect();
    let mean: Vec<T> = mean.into_iter().map(T::c).collect();
    let mut xhat = vec![T::zero(); xs.len()];
    let mut out = vec![T::zero(); xs.len()];
    for bi in 0..b {
        for ci in 0..c {
            let r = (bi * c + ci) * n..(bi * c + ci + 1) * n;
            for j in r {
                xhat[j] = (xs[j] - mean[ci]) * inv[ci];
                out[j] = gam[ci] * xhat[j] + bet[ci];
            }
        }
    }
    drop(xv);
    let value = ArrayD::from_shape_vec(IxDyn(&shape), out).unwrap();
    g.push(value, &[x, gamma, beta], move |gr, need| {
        let gs = flat(gr);
        let mut dg = vec![T::zero(); c];
        let mut db = vec![T::zero(); c];
        let mut sdh = vec![T::zero(); c];
        let mut sdhx = vec![T::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                for j in (bi * c + ci) * n..(bi * c + ci + 1) * n {
                    dg[ci] += gs[j] * xhat[j];
                    db[ci] += gs[j];
                    let dh = gs[j] * gam[ci];
                    sdh[ci] += dh;
                    sdhx[ci] += dh * xhat[j];
                }
            }
        }
        let dx = need[0].then(|| {
            let mut dx = vec![T::zero(); gs.len()];
            let mf = T::c(m as f64);
            for bi in 0..b {
                for ci in 0..c {
                    for j in (bi * c + ci) * n..(bi * c + ci + 1) * n {
                        let dh = gs[j] * gam[ci];
                        dx[j] = if train {
                            inv[ci] * (dh - (sdh[ci] + xhat[j] * sdhx[ci]) / mf)
                        } else {
                            inv[ci] * dh
                        };
                    }
                }
            }
            ArrayD::from_shape_vec(IxDyn(&shape), dx).unwrap()
        });
        vec![
            dx,
            need[1].then(|| ArrayD::from_shape_vec(IxDyn(&[c]), dg).unwrap()),
            need[2].then(|| ArrayD::from_shape_vec(IxDyn(&[c]), db).unwrap()),
        ]
    })
}

/// Layer normalisation over the last axis of `x [..., D]`.
pub fn layer_norm<'g, T: Scalar>(x: Var<'g, T>, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Var<'g, T> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    let d = *shape.last().unwrap();
    let rows = xv.len() / d;
    let xs = flat(&xv);
    drop(xv);
    let gam = flat(&gamma.value());
    let bet = flat(&beta.value());
    let mut xhat = vec![T::zero(); xs.len()];
    let mut inv = vec![T::zero(); rows];
    let mut out = vec![T::zero(); xs.len()];
    for r in 0..rows {
        let row = &xs[r * d..(r + 1) * d];
        let mean = row.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / d as f64;
        let iv = 1.0 / (var + eps).sqrt();
        inv[r] = T::c(iv);
        for k in 0..d {
            let h = T::c((row[k].f64() - mean) * iv);
            xhat[r * d + k] = h;
            out[r * d + k] = gam[k] * h + bet[k];
        }
    }
    let value = ArrayD::from_shape_vec(IxDyn(&shape), out).unwrap();
    x.graph().push(value, &[x, gamma, beta], move |gr, need| {
        let gs = flat(gr);
        let mut dg = vec![T::zero(); d];
        let mut db = vec![T::zero(); d];
        let mut dx = vec![T::zero(); gs.len()];
        let df = T::c(d as f64);
        for r in 0..rows {
            let mut sdh = T::zero();
            let mut sdhx = T::zero();
            for k in 0..d {
                let j = r * d + k;
                dg[k] += gs[j] * xhat[j];
                db[k] += gs[j];
                let dh = gs[j] * gam[k];
                sdh += dh;
                sdhx += dh * xhat[j];
            }
            for k in 0..d {
                let j = r * d + k;
                dx[j] = inv[r] * (gs[j] * gam[k] - (sdh + xhat[j] * sdhx) / df);
            }
        }
        vec![
            need[0].then(|| ArrayD::from_shape_vec(IxDyn(&shape), dx).unwrap()),
            need[1].then(|| ArrayD::from_shape_vec(IxDyn(&[d]), dg).unwrap()),
            need[2].then(|| ArrayD::from_shape_vec(IxDyn(&[d]), db).unwrap()),
        ]
    })
}
