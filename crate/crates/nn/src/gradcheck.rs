//! Central-difference gradient checking in double precision.

use ndarray::ArrayD;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

pub const FD_STEP: f64 = 1e-5;

/// Largest relative disagreement found and where.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Evenly spread element indices, at most `max` of them.
fn probe_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|i| i * (n - 1) / (max - 1).max(1)).collect()
    }
}

fn eval<F>(store: &ParamStore<f64>, inputs: &[ArrayD<f64>], f: &F) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let g = Graph::new(store, false, true);
    let xs: Vec<_> = inputs.iter().map(|x| g.constant(x.clone())).collect();
    f(&g, &xs).item()
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences for up to `per_tensor` entries of every input and every
/// trainable parameter. Training-mode graphs are used throughout, so batch
/// statistics are part of the function.
pub fn check<F>(store: &ParamStore<f64>, inputs: &[ArrayD<f64>], per_tensor: usize, floor: f64, f: F) -> GradCheck
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let g = Graph::training(store);
    let xs: Vec<_> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let loss = f(&g, &xs);
    let grads = g.backward(loss);
    let input_grads: Vec<ArrayD<f64>> = xs
        .iter()
        .zip(inputs)
        .map(|(v, x)| grads.input(*v).cloned().unwrap_or_else(|| ArrayD::zeros(x.raw_dim())))
        .collect();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let note = |label: String, a: f64, n: f64, report: &mut GradCheck| {
        let e = rel_error(a, n, floor);
        report.checked += 1;
        if e >= report.max_rel_error {
            report.max_rel_error = e;
            report.worst = format!("{label}: analytic {a:.6e} numeric {n:.6e}");
        }
    };
    for (k, x) in inputs.iter().enumerate() {
        for i in probe_indices(x.len(), per_tensor) {
            let mut shifted = inputs.to_vec();
            let v = shifted[k].as_slice_mut().expect("standard layout input");
            let orig = v[i];
            v[i] = orig + FD_STEP;
            let up = eval(store, &shifted, &f);
            shifted[k].as_slice_mut().unwrap()[i] = orig - FD_STEP;
            let down = eval(store, &shifted, &f);
            let num = (up - down) / (2.0 * FD_STEP);
            let ana = input_grads[k].as_slice().map_or_else(|| input_grads[k].iter().nth(i).cloned().unwrap(), |s| s[i]);
            note(format!("input {k}[{i}]"), ana, num, &mut report);
        }
    }
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let n = store.get(id).numel();
        let ga = grads.param(id).cloned().unwrap_or_else(|| ArrayD::zeros(store.get(id).value.raw_dim()));
        for i in probe_indices(n, per_tensor) {
            let mut s = store.clone();
            let orig = s.get(id).value.iter().nth(i).cloned().unwrap();
            *s.value_mut(id).iter_mut().nth(i).unwrap() = orig + FD_STEP;
            let up = eval(&s, inputs, &f);
            *s.value_mut(id).iter_mut().nth(i).unwrap() = orig - FD_STEP;
            let down = eval(&s, inputs, &f);
            let num = (up - down) / (2.0 * FD_STEP);
            let ana = ga.iter().nth(i).cloned().unwrap();
            note(format!("{name}[{i}]"), ana, num, &mut report);
        }
    }
    report
}
