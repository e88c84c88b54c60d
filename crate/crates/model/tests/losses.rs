use std::f64::consts::PI;

use ndarray::{Array2, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subaru_core::{AudioClip, StftConfig};
use subaru_model::losses::{mr_stft, Objective, MAG_EPS, RESOLUTIONS};
use subaru_model::{evaluate_pair, LossWeights, PeriodMode};
use subaru_nn::gradcheck::check;
use subaru_nn::{Graph, ParamStore};

fn noise(seed: u64, n: usize, amp: f64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.gen_range(-amp..amp)).collect()
}

fn row(x: &[f64]) -> ArrayD<f64> {
    Array2::from_shape_fn((1, x.len()), |(_, i)| x[i]).into_dyn()
}

fn clip(x: Vec<f64>) -> AudioClip {
    AudioClip::new(x, 16000)
}

#[test]
fn identical_pair_is_zero() {
    let x = noise(1, 16000, 0.5);
    let b = evaluate_pair(&clip(x.clone()), &clip(x), &LossWeights::default(), PeriodMode::PerRow).unwrap();
    for (name, v) in subaru_model::LossBreakdown::FIELDS.iter().zip(b.values()) {
        assert!(v.abs() < 1e-12, "{name} = {v}");
    }
}

#[test]
fn doubled_estimate() {
    let x = noise(2, 16000, 0.3);
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let b = evaluate_pair(&clip(y), &clip(x), &LossWeights::default(), PeriodMode::PerRow).unwrap();
    assert!((b.mr_stft_sc - 1.0).abs() < 1e-9, "sc {}", b.mr_stft_sc);
    assert!((b.mr_stft_mag - 2f64.ln()).abs() < 1e-4, "mag {}", b.mr_stft_mag);
    assert!(b.phase_ip < 1e-9 && b.phase_gd < 1e-9);
}

#[test]
fn sc_detects_scale() {
    let x = noise(3, 4000, 0.3);
    for a in [0.25, 0.5, 1.5, 3.0] {
        let y: Vec<f64> = x.iter().map(|v| a * v).collect();
        let b = evaluate_pair(&clip(y), &clip(x.clone()), &LossWeights::default(), PeriodMode::PerRow).unwrap();
        assert!((b.mr_stft_sc - (a - 1.0f64).abs()).abs() < 1e-9);
    }
}

#[test]
fn silent_reference_rejected() {
    let x = noise(4, 2048, 0.3);
    assert!(evaluate_pair(&clip(x), &clip(vec![0.0; 2048]), &LossWeights::default(), PeriodMode::PerRow).is_err());
    assert!(evaluate_pair(&clip(vec![0.1; 100]), &clip(vec![0.1; 100]), &LossWeights::default(), PeriodMode::PerRow).is_err());
}

/// Independent per-resolution oracle: direct DFT of zero-padded Hann frames.
fn dft_mag(x: &[f64], n_fft: usize, hop: usize) -> Vec<Vec<f64>> {
    let pad = n_fft / 2;
    let mut xp = vec![0.0; x.len() + 2 * pad];
    xp[pad..pad + x.len()].copy_from_slice(x);
    let frames = 1 + (xp.len() - n_fft) / hop;
    let win: Vec<f64> = (0..n_fft).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos()).collect();
    (0..frames)
        .map(|t| {
            (0..=n_fft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for i in 0..n_fft {
                        let v = xp[t * hop + i] * win[i];
                        let w = -2.0 * PI * (k * i) as f64 / n_fft as f64;
                        re += v * w.cos();
                        im += v * w.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect()
        })
        .collect()
}

#[test]
fn mr_stft_matches_direct_dft() {
    let c = noise(5, 4000, 0.5);
    let e = noise(6, 4000, 0.5);
    let (mut sc, mut mag) = (0.0, 0.0);
    for &(n, h, _) in &RESOLUTIONS {
        let (mc, me) = (dft_mag(&c, n, h), dft_mag(&e, n, h));
        let (mut num, mut den, mut l, mut cnt) = (0.0, 0.0, 0.0, 0.0);
        for (rc, re) in mc.iter().zip(&me) {
            for (a, b) in rc.iter().zip(re) {
                num += (a - b) * (a - b);
                den += a * a;
                l += ((a + MAG_EPS).ln() - (b + MAG_EPS).ln()).abs();
                cnt += 1.0;
            }
        }
        sc += (num / den).sqrt() / 3.0;
        mag += l / cnt / 3.0;
    }
    let obj = Objective::<f64>::new(LossWeights::default(), PeriodMode::PerRow, StftConfig::APEN).unwrap();
    let store = ParamStore::<f64>::new();
    let g = Graph::inference(&store);
    let (s, m) = mr_stft(g.input(row(&e)), g.input(row(&c)), &obj.mr_plans);
    assert!((s.item() - sc).abs() < 1e-6, "{} vs {sc}", s.item());
    assert!((m.item() - mag).abs() < 1e-6, "{} vs {mag}", m.item());
}

#[test]
fn loss_gradients_match_finite_differences() {
    let c = noise(7, 512, 0.5);
    let e: Vec<f64> = c.iter().zip(noise(8, 512, 0.2)).map(|(a, b)| a + b).collect();
    let obj = Objective::<f64>::new(LossWeights::default(), PeriodMode::PerRow, StftConfig::APEN).unwrap();
    let store = ParamStore::<f64>::new();
    for (k, name) in subaru_model::LossBreakdown::FIELDS.iter().enumerate() {
        let r = check(&store, &[row(&e)], 128, 1e-6, |g, xs| {
            let enh = xs[0];
            let clean = g.constant(row(&c));
            let obj_k = if k == 6 {
                Objective { weights: LossWeights::default(), ..clone_obj(&obj) }
            } else {
                let mut w = [0.0; 6];
                w[k] = 1.0;
                Objective { weights: weights(w), ..clone_obj(&obj) }
            };
            obj_k.evaluate(enh, clean, None).unwrap().total
        });
        println!("{name}: max rel err {:.3e} over {} ({})", r.max_rel_error, r.checked, r.worst);
        assert!(r.passes(1e-4), "{name}: {}", r.worst);
    }
}

fn weights(w: [f64; 6]) -> LossWeights {
    LossWeights {
        multi_scale: w[0],
        multi_period: w[1],
        phase_ip: w[2],
        phase_gd: w[3],
        mr_stft_sc: w[4],
        mr_stft_mag: w[5],
    }
}

fn clone_obj(o: &Objective<f64>) -> Objective<f64> {
    Objective {
        weights: o.weights,
        period_mode: o.period_mode,
        mr_plans: o.mr_plans.clone(),
        phase_plan: o.phase_plan.clone(),
    }
}
