use ndarray::{Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subaru_core::AudioClip;
use subaru_model::networks::{batch, row, rows};
use subaru_model::{param_count, Error, NetworkConfig, Order, Plans, Subaru, Variant};
use subaru_nn::gradcheck::{rel_error, FD_STEP};
use subaru_nn::spectral::{istft, stft};
use subaru_nn::{Graph, ParamId, ParamStore, Scalar};

fn build<T: Scalar>(cfg: NetworkConfig, seed: u64) -> (Subaru, ParamStore<T>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Subaru::new(cfg, &mut store, &mut rng).unwrap();
    (model, store)
}

fn signal(n: usize, f: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| 0.3 * (i as f64 * f).sin() + 0.05 * (i as f64 * f * 3.7).cos() + 0.01 * rng.gen_range(-1.0..1.0))
        .collect()
}

/// Moves every trainable parameter away from its initial value so that
/// zero-initialised heads pass gradients upstream.
fn perturb(store: &mut ParamStore<f64>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        store.value_mut(id).mapv_inplace(|v| v + scale * rng.gen_range(-1.0..1.0));
    }
}

#[test]
fn parameter_counts_match_targets() {
    let (_, store) = build::<f32>(NetworkConfig::default(), 0);
    for (sel, target) in [("sen", 900.2e3), ("ups", 1130.3e3), ("ten", 760.5e3), ("apen", 828.6e3), ("all", 3.61e6)] {
        let n = param_count(&store, sel).unwrap() as f64;
        assert!((n / target - 1.0).abs() <= 0.15, "{sel}: {n} vs {target}");
    }
    let parts: usize = ["sen", "ups", "ten", "apen"].iter().map(|s| param_count(&store, s).unwrap()).sum();
    assert_eq!(parts, param_count(&store, "all").unwrap());
}

#[test]
fn unknown_selection_and_empty_store() {
    let (_, store) = build::<f32>(NetworkConfig::default(), 0);
    assert!(matches!(param_count(&store, "decoder"), Err(Error::UnknownSelection(_))));
    assert_eq!(param_count(&ParamStore::<f32>::new(), "all").unwrap(), 0);
}

#[test]
fn front_end_shapes_and_identity_at_init() {
    let (m, store) = build::<f64>(NetworkConfig::default(), 1);
    let plans = Plans::<f64>::new(&m.config).unwrap();
    let g = Graph::inference(&store);
    let x = g.input(row(&signal(4000, 0.05, 1)));
    let feats = m.sen_input(x, &plans);
    assert_eq!(feats.shape(), vec![1, 1, 63, 129]);
    let y = m.sen.forward(feats);
    assert_eq!(y.shape(), feats.shape());
    let d = (&*y.value() - &*feats.value()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert_eq!(d, 0.0);
}

#[test]
fn upsampler_expands_by_frame_hop() {
    let (m, store) = build::<f32>(NetworkConfig::default(), 2);
    let g = Graph::inference(&store);
    let feats = g.input(Array3::<f32>::from_elem((1, 129, 62), 0.1).into_dyn());
    let y = m.ups.forward(feats);
    assert_eq!(y.shape(), vec![1, 62 * 256]);
    assert!(y.value().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn apen_is_identity_at_init() {
    let (m, store) = build::<f64>(NetworkConfig::default(), 3);
    let plans = Plans::<f64>::new(&m.config).unwrap();
    let g = Graph::inference(&store);
    let x = g.input(row(&signal(16000, 0.03, 3)));
    let out = m.apen.forward(x, &plans.apen);
    let direct = istft(stft(x, &plans.apen), &plans.apen, 16000);
    let d = (&*out.wave.value() - &*direct.value()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(d < 1e-6, "{d}");
    let p = out.phase.value();
    assert!(p.iter().all(|v| *v > -std::f64::consts::PI - 1e-12 && *v <= std::f64::consts::PI + 1e-12));
}

#[test]
fn output_length_contract() {
    let (m, store) = build::<f32>(NetworkConfig::default(), 4);
    let plans = Plans::<f32>::new(&m.config).unwrap();
    for secs in [0.5, 1.0, 2.0] {
        let n = (4000.0 * secs) as usize;
        let acm = AudioClip::new(signal(n, 0.07, 5), 4000);
        let bcm = AudioClip::new(signal(4 * n, 0.02, 6), 16000);
        let out = m.enhance(&store, &plans, &acm, Some(&bcm)).unwrap();
        assert_eq!(out.sample_rate, 16000);
        assert_eq!(out.len(), 4 * n);
        assert!(out.samples.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }
}

#[test]
fn enhance_rejects_bad_input() {
    let (m, store) = build::<f32>(NetworkConfig::default(), 4);
    let plans = Plans::<f32>::new(&m.config).unwrap();
    let wrong_rate = AudioClip::new(signal(4000, 0.07, 5), 8000);
    assert!(m.enhance(&store, &plans, &wrong_rate, None).is_err());
    let short = AudioClip::new(signal(100, 0.07, 5), 4000);
    assert!(m.enhance(&store, &plans, &short, None).is_err());
}

#[test]
fn deterministic_build_and_inference() {
    let (m, a) = build::<f32>(NetworkConfig::default(), 9);
    let (_, b) = build::<f32>(NetworkConfig::default(), 9);
    for ((_, p), (_, q)) in a.iter().zip(b.iter()) {
        assert_eq!(p.name, q.name);
        assert!(p.value.iter().zip(q.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let plans = Plans::<f32>::new(&m.config).unwrap();
    let acm = AudioClip::new(signal(4000, 0.07, 7), 4000);
    let x = m.enhance(&a, &plans, &acm, None).unwrap();
    let y = m.enhance(&a, &plans, &acm, None).unwrap();
    assert!(x.samples.iter().zip(&y.samples).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn order_swap_and_single_variant() {
    let swapped = NetworkConfig {
        order: Order::ApenThenTen,
        ..Default::default()
    };
    let single = NetworkConfig {
        variant: Variant::Single,
        ..Default::default()
    };
    let (_, base) = build::<f32>(NetworkConfig::default(), 0);
    for cfg in [swapped, single] {
        let (m, store) = build::<f32>(cfg, 0);
        assert_eq!(param_count(&store, "all").unwrap(), param_count(&base, "all").unwrap());
        let plans = Plans::<f32>::new(&m.config).unwrap();
        let acm = AudioClip::new(signal(2000, 0.07, 8), 4000);
        let bcm = AudioClip::new(signal(8000, 0.02, 9), 16000);
        let with = m.enhance(&store, &plans, &acm, Some(&bcm)).unwrap();
        let without = m.enhance(&store, &plans, &acm, None).unwrap();
        assert_eq!(with.len(), 8000);
        if m.config.variant == Variant::Single {
            assert_eq!(with.samples, without.samples);
        }
    }
}

#[test]
fn batch_rows_round_trip() {
    let a = signal(10, 0.1, 1);
    let b = signal(10, 0.2, 2);
    let x: ArrayD<f64> = batch(&[&a, &b]).unwrap();
    assert_eq!(rows(&x), vec![a.clone(), b]);
    assert!(batch::<f64>(&[&a, &a[..5]]).is_err());
}

/// Central difference of `f` along one parameter entry.
fn central(store: &ParamStore<f64>, id: ParamId, i: usize, h: f64, f: &dyn Fn(&ParamStore<f64>) -> f64) -> f64 {
    let mut s = store.clone();
    let orig = s.get(id).value.iter().nth(i).cloned().unwrap();
    *s.value_mut(id).iter_mut().nth(i).unwrap() = orig + h;
    let up = f(&s);
    *s.value_mut(id).iter_mut().nth(i).unwrap() = orig - h;
    (up - f(&s)) / (2.0 * h)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let (m, mut store) = build::<f64>(NetworkConfig::default(), 11);
    perturb(&mut store, 0.02, 12);
    let plans = Plans::<f64>::new(&m.config).unwrap();
    let acm = row::<f64>(&signal(256, 0.09, 13));
    let bcm = row::<f64>(&signal(1024, 0.03, 14));
    let target = ArrayD::from_shape_vec(IxDyn(&[1, 1024]), signal(1024, 0.025, 15)).unwrap();
    let loss = |s: &ParamStore<f64>, record: bool| {
        let g = Graph::new(s, record, true);
        let out = m.forward(g.input(acm.clone()), Some(g.input(bcm.clone())), &plans);
        let l = out.wave.sub(g.constant(target.clone())).square().mean();
        let v = l.item();
        (v, record.then(|| g.backward(l).into_params()))
    };
    let (_, grads) = loss(&store, true);
    let grads = grads.unwrap();
    let f = |s: &ParamStore<f64>| loss(s, false).0;
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut checked = 0;
    for k in 0..20 {
        let id = ids[k * (ids.len() - 1) / 19];
        let n = store.get(id).numel();
        let i = (k * 7919) % n;
        let analytic = grads[id.0].as_ref().map_or(0.0, |g| g.iter().nth(i).cloned().unwrap());
        // The phase features jump by pi where the real part of a DC or
        // Nyquist bin changes sign, so a step that straddles such a point
        // is retried with a smaller one.
        let err = [FD_STEP, FD_STEP / 10.0]
            .iter()
            .map(|&h| rel_error(analytic, central(&store, id, i, h, &f), 1e-6))
            .fold(f64::INFINITY, f64::min);
        assert!(err < 1e-3, "{}[{i}]: {err}", store.get(id).name);
        checked += 1;
    }
    assert_eq!(checked, 20);
}
