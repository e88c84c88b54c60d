//! Shape and adjoint invariants of the convolution kernels.

use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subaru_nn::{conv, Graph, ParamStore};

fn rand_arr(shape: &[usize], r: &mut ChaCha8Rng) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| r.gen_range(-1.0..1.0))
}

fn dot(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Random conv1d geometry whose dilated kernel fits the padded input.
fn geometry() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, usize, usize, u64)> {
    (1usize..4, 1usize..4, 1usize..6, 1usize..4, 1usize..3, 0usize..4, 0usize..4, 1usize..30, any::<u64>()).prop_filter(
        "kernel must fit",
        |&(_, _, k, _, d, pl, pr, l, _)| l + pl + pr > d * (k - 1),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv1d_length_follows_formula((cin, cout, k, s, d, pl, pr, l, seed) in geometry()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let store = ParamStore::<f64>::new();
        let g = Graph::inference(&store);
        let x = g.constant(rand_arr(&[2, cin, l], &mut r));
        let w = g.constant(rand_arr(&[cout, cin, k], &mut r));
        let y = conv::conv1d(x, w, None, s, d, (pl, pr));
        let expect = (l + pl + pr - d * (k - 1) - 1) / s + 1;
        prop_assert_eq!(y.shape(), vec![2, cout, expect]);
    }

    #[test]
    fn transposed_conv_is_the_adjoint((cin, cout, k, s, _d, pl, pr, l, seed) in geometry()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let store = ParamStore::<f64>::new();
        let g = Graph::inference(&store);
        let xa = rand_arr(&[1, cin, l], &mut r);
        let wa = rand_arr(&[cout, cin, k], &mut r);
        let y = conv::conv1d(g.constant(xa.clone()), g.constant(wa.clone()), None, s, 1, (pl, pr));
        let ya = rand_arr(&y.shape(), &mut r);
        let back = conv::conv_transpose1d(g.constant(ya.clone()), g.constant(wa), None, s, pl, l);
        let (lhs, rhs) = (dot(&y.value(), &ya), dot(&xa, &back.value()));
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn input_gradient_is_the_transposed_conv((cin, cout, k, s, _d, pl, pr, l, seed) in geometry()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let store = ParamStore::<f64>::new();
        let g = Graph::training(&store);
        let xa = rand_arr(&[1, cin, l], &mut r);
        let wa = rand_arr(&[cout, cin, k], &mut r);
        let x = g.input(xa);
        let y = conv::conv1d(x, g.constant(wa.clone()), None, s, 1, (pl, pr));
        let ya = rand_arr(&y.shape(), &mut r);
        let loss = y.mul(g.constant(ya.clone())).sum();
        loss.item();
        let grads = g.backward(loss);
        let gx = grads.input(x).unwrap().clone();
        let oracle = Graph::inference(&store);
        let back = conv::conv_transpose1d(oracle.constant(ya), oracle.constant(wa), None, s, pl, l);
        for (a, b) in gx.iter().zip(back.value().iter()) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }
}
