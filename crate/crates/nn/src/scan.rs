//! Selective state-space scan with input-dependent step, B and C.

use ndarray::{ArrayD, IxDyn};

use crate::graph::Var;
use crate::scalar::Scalar;

fn flat<T: Scalar>(a: &ArrayD<T>) -> Vec<T> {
    a.iter().cloned().collect()
}

/// Runs `h_t = exp(dt_t A) h_{t-1} + dt_t B_t u_t`, `y_t = C_t h_t + D u_t`.
///
/// Shapes: `u, dt [B, L, Di]`, `a [Di, N]`, `bm, cm [B, L, N]`, `d [Di]`;
/// output `[B, L, Di]`. States are kept for the backward sweep.
pub fn selective_scan<'g, T: Scalar>(
    u: Var<'g, T>,
    dt: Var<'g, T>,
    a: Var<'g, T>,
    bm: Var<'g, T>,
    cm: Var<'g, T>,
    d: Var<'g, T>,
) -> Var<'g, T> {
    let shape = u.shape();
    let (nb, l, di) = (shape[0], shape[1], shape[2]);
    let ns = a.shape()[1];
    assert_eq!(dt.shape(), shape, "scan step shape");
    assert_eq!(a.shape(), vec![di, ns], "scan A shape");
    assert_eq!(bm.shape(), vec![nb, l, ns], "scan B shape");
    assert_eq!(cm.shape(), vec![nb, l, ns], "scan C shape");
    let (us, dts, as_, bs, cs, ds) = (
        flat(&u.value()),
        flat(&dt.value()),
        flat(&a.value()),
        flat(&bm.value()),
        flat(&cm.value()),
        flat(&d.value()),
    );
    let record = u.graph().is_recording();
    let state = di * ns;
    let mut hs = if record { vec![T::zero(); nb * l * state] } else { Vec::new() };
    let mut h = vec![T::zero(); state];
    let mut y = vec![T::zero(); nb * l * di];
    for b in 0..nb {
        h.fill(T::zero());
        for t in 0..l {
            let row = (b * l + t) * di;
            let bt = &bs[(b * l + t) * ns..(b * l + t + 1) * ns];
            let ct = &cs[(b * l + t) * ns..(b * l + t + 1) * ns];
            for k in 0..di {
                let du = dts[row + k] * us[row + k];
                let mut acc = ds[k] * us[row + k];
                let hk = &mut h[k * ns..(k + 1) * ns];
                for n in 0..ns {
                    hk[n] = (dts[row + k] * as_[k * ns + n]).exp() * hk[n] + du * bt[n];
                    acc += ct[n] * hk[n];
                }
                y[row + k] = acc;
            }
            if record {
                hs[(b * l + t) * state..(b * l + t + 1) * state].copy_from_slice(&h);
            }
        }
    }
    let value = ArrayD::from_shape_vec(IxDyn(&shape), y).unwrap();
    u.graph().push(value, &[u, dt, a, bm, cm, d], move |gr, need| {
        let gy = flat(gr);
        let mut du = vec![T::zero(); us.len()];
        let mut ddt = vec![T::zero(); us.len()];
        let mut da = vec![T::zero(); as_.len()];
        let mut db = vec![T::zero(); bs.len()];
        let mut dc = vec![T::zero(); cs.len()];
        let mut dd = vec![T::zero(); di];
        let mut dh = vec![T::zero(); state];
        let zeros = vec![T::zero(); state];
        for b in 0..nb {
            dh.fill(T::zero());
            for t in (0..l).rev() {
                let row = (b * l + t) * di;
                let srow = (b * l + t) * ns;
                let ht = &hs[(b * l + t) * state..(b * l + t + 1) * state];
                let hp = if t == 0 {
                    &zeros[..]
                } else {
                    &hs[(b * l + t - 1) * state..(b * l + t) * state]
                };
                for k in 0..di {
                    let gyk = gy[row + k];
                    let uk = us[row + k];
                    let dtk = dts[row + k];
                    dd[k] += gyk * uk;
                    du[row + k] += gyk * ds[k];
                    let mut gdt = T::zero();
                    let mut gu = T::zero();
                    for n in 0..ns {
                        let i = k * ns + n;
                        let c = cs[srow + n];
                        dc[srow + n] += gyk * ht[i];
                        let g = dh[i] + gyk * c;
                        let an = as_[i];
                        let decay = (dtk * an).exp();
                        let gdecay = g * hp[i] * decay;
                        gdt += gdecay * an + g * uk * bs[srow + n];
                        da[i] += gdecay * dtk;
                        db[srow + n] += g * dtk * uk;
                        gu += g * dtk * bs[srow + n];
                        dh[i] = g * decay;
                    }
                    ddt[row + k] += gdt;
                    du[row + k] += gu;
                }
            }
        }
        let arr = |v: Vec<T>, s: &[usize]| ArrayD::from_shape_vec(IxDyn(s), v).unwrap();
        vec![
            need[0].then(|| arr(du, &[nb, l, di])),
            need[1].then(|| arr(ddt, &[nb, l, di])),
            need[2].then(|| arr(da, &[di, ns])),
            need[3].then(|| arr(db, &[nb, l, ns])),
            need[4].then(|| arr(dc, &[nb, l, ns])),
            need[5].then(|| arr(dd, &[di])),
        ]
    })
}
