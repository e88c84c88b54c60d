use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subaru_core::AudioClip;
use subaru_model::stream::{enhance_frames, latency_report, simulate_stream, slice_frames, Injection};
use subaru_model::{Error, NetworkConfig, Plans, Subaru};
use subaru_nn::ParamStore;

fn tiny() -> NetworkConfig {
    NetworkConfig {
        sen_channels: vec![2, 2, 2, 2, 4],
        ups_channels: 16,
        ten_channels: vec![2, 2, 2, 4],
        apen_channels: 8,
        ..Default::default()
    }
}

fn model() -> (Subaru, ParamStore<f32>, Plans<f32>) {
    let mut store = ParamStore::new();
    let m = Subaru::new(tiny(), &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let plans = Plans::new(&m.config).unwrap();
    (m, store, plans)
}

fn capture(secs: f64, seed: u64) -> (AudioClip, AudioClip) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (4000.0 * secs) as usize;
    let acm = (0..n).map(|i| 0.3 * (i as f64 * 0.11).sin() + 0.02 * rng.gen_range(-1.0..1.0)).collect();
    let bcm = (0..4 * n).map(|i| 0.2 * (i as f64 * 0.02).sin()).collect();
    (AudioClip::new(acm, 4000), AudioClip::new(bcm, 16000))
}

#[test]
fn streamed_frames_equal_batch_frames() {
    let (m, store, plans) = model();
    let (acm, bcm) = capture(2.3, 1);
    let frames = slice_frames(&acm, Some(&bcm), 0.5).unwrap();
    assert_eq!(frames.len(), 4);
    let batch = enhance_frames(&m, &store, &plans, &frames).unwrap();
    let (streamed, report) = simulate_stream(&m, &store, &plans, &frames, None).unwrap();
    assert_eq!(report.frames.len(), 4);
    for (a, b) in batch.iter().zip(&streamed) {
        assert_eq!(a.len(), 8000);
        assert!(a.samples.iter().zip(&b.samples).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert!(report.frames.iter().all(|f| f.transport_latency_ms == 12.0 && f.inference_latency_ms > 0.0));
    let stages = report.frames[0].stages.unwrap();
    let sum = stages.sen_ms + stages.ups_ms + stages.ten_ms + stages.apen_ms;
    assert!(sum > 0.0 && sum <= report.frames[0].inference_latency_ms);
    assert!(latency_report(&report).contains("per-network ms"));
}

#[test]
fn injected_latencies_drive_verdicts() {
    let (m, store, plans) = model();
    let (acm, bcm) = capture(1.0, 2);
    let frames = slice_frames(&acm, Some(&bcm), 1.0).unwrap();
    let (_, ok) = simulate_stream(&m, &store, &plans, &frames, Some(&Injection::constant(12.0, 71.0))).unwrap();
    assert_eq!(ok.frames[0].total_latency_ms, 83.0);
    assert!(ok.realtime_ok && ok.itu_ok);
    assert!(latency_report(&ok).contains("one-way budget: yes"));
    let (_, late) = simulate_stream(&m, &store, &plans, &frames, Some(&Injection::constant(12.0, 140.0))).unwrap();
    assert!(late.realtime_ok && !late.itu_ok);
    assert!(latency_report(&late).contains("one-way budget: no"));
}

#[test]
fn frames_without_vibration_channel() {
    let (m, store, plans) = model();
    let (acm, _) = capture(1.0, 3);
    let frames = slice_frames(&acm, None, 0.5).unwrap();
    let (out, _) = simulate_stream(&m, &store, &plans, &frames, None).unwrap();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|c| c.sample_rate == 16000 && c.len() == 8000));
}

#[test]
fn empty_and_degenerate_input() {
    let (m, store, plans) = model();
    assert!(matches!(simulate_stream(&m, &store, &plans, &[], None), Err(Error::Empty(_))));
    let (acm, _) = capture(0.3, 4);
    assert!(slice_frames(&acm, None, 0.5).unwrap().is_empty());
    assert!(slice_frames(&acm, None, 0.0).is_err());
}
