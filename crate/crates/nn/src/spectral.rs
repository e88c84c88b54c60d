//! Differentiable STFT and inverse STFT on batched signals.

use std::rc::Rc;

use ndarray::{s, Array4, ArrayD, Ix4, IxDyn};
use subaru_core::StftPlan;

use crate::graph::Var;
use crate::scalar::Scalar;

/// `x [B, L]` to stacked real/imaginary spectra `[B, 2, T, F]`.
pub fn stft<'g, T: Scalar>(x: Var<'g, T>, plan: &Rc<StftPlan<T>>) -> Var<'g, T> {
    let xv = x.value();
    assert_eq!(xv.ndim(), 2, "stft input must be [B, L]");
    let (nb, len) = (xv.shape()[0], xv.shape()[1]);
    let frames = plan.config.frames(len);
    let bins = plan.config.bins();
    let mut out = Array4::<T>::zeros((nb, 2, frames, bins));
    for b in 0..nb {
        let row: Vec<T> = xv.slice(s![b, ..]).iter().cloned().collect();
        let (re, im) = plan.forward(&row);
        out.slice_mut(s![b, 0, .., ..]).assign(&re);
        out.slice_mut(s![b, 1, .., ..]).assign(&im);
    }
    drop(xv);
    let plan = plan.clone();
    x.graph().push(out.into_dyn(), &[x], move |g, _| {
        let g = g.view().into_dimensionality::<Ix4>().unwrap();
        let mut dx = ArrayD::zeros(IxDyn(&[nb, len]));
        for b in 0..nb {
            let row = plan.forward_adjoint(g.slice(s![b, 0, .., ..]), g.slice(s![b, 1, .., ..]), len);
            for (d, v) in dx.slice_mut(s![b, ..]).iter_mut().zip(row) {
                *d = v;
            }
        }
        vec![Some(dx)]
    })
}

/// Stacked spectra `[B, 2, T, F]` to signals `[B, len]`.
pub fn istft<'g, T: Scalar>(spec: Var<'g, T>, plan: &Rc<StftPlan<T>>, len: usize) -> Var<'g, T> {
    let sv = spec.value();
    let sv4 = sv.view().into_dimensionality::<Ix4>().expect("istft input must be [B, 2, T, F]");
    let (nb, two, frames, bins) = sv4.dim();
    assert_eq!(two, 2, "istft expects real and imaginary planes");
    assert_eq!(bins, plan.config.bins(), "istft bin count");
    let mut out = ArrayD::zeros(IxDyn(&[nb, len]));
    for b in 0..nb {
        let y = plan.inverse(sv4.slice(s![b, 0, .., ..]), sv4.slice(s![b, 1, .., ..]), len);
        for (d, v) in out.slice_mut(s![b, ..]).iter_mut().zip(y) {
            *d = v;
        }
    }
    drop(sv);
    let plan = plan.clone();
    spec.graph().push(out, &[spec], move |g, _| {
        let mut ds = Array4::<T>::zeros((nb, 2, frames, bins));
        for b in 0..nb {
            let row: Vec<T> = g.slice(s![b, ..]).iter().cloned().collect();
            let (gre, gim) = plan.inverse_adjoint(&row, frames);
            ds.slice_mut(s![b, 0, .., ..]).assign(&gre);
            ds.slice_mut(s![b, 1, .., ..]).assign(&gim);
        }
        vec![Some(ds.into_dyn())]
    })
}
