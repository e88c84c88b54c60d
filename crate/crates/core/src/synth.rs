//! Procedural speech-like material for desk-scale experiments: voiced and
//! fricative syllables shaped by formant resonators, a bone-conduction
//! channel model, and several background-noise families.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{normalize, save_wav, AudioClip};
use crate::error::Result;
use crate::filter::{run_cascade, Biquad};
use crate::manifest::{Manifest, ManifestEntry, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct Speaker {
    pub id: String,
    pub f0: f64,
    pub formant_scale: f64,
    pub breathiness: f64,
}

impl Speaker {
    pub fn random(id: impl Into<String>, rng: &mut impl Rng) -> Self {
        Speaker {
            id: id.into(),
            f0: rng.gen_range(90.0..240.0),
            formant_scale: rng.gen_range(0.88..1.15),
            breathiness: rng.gen_range(0.01..0.05),
        }
    }
}

const VOWELS: [[f64; 5]; 6] = [
    [730.0, 1090.0, 2440.0, 3400.0, 4500.0],
    [270.0, 2290.0, 3010.0, 3700.0, 4800.0],
    [300.0, 870.0, 2240.0, 3300.0, 4400.0],
    [530.0, 1840.0, 2480.0, 3500.0, 4600.0],
    [570.0, 840.0, 2410.0, 3400.0, 4500.0],
    [440.0, 1020.0, 2240.0, 3300.0, 4700.0],
];

fn envelope(n: usize, attack: usize) -> Vec<f64> {
    let a = attack.min(n / 2).max(1);
    (0..n)
        .map(|i| {
            let edge = i.min(n - 1 - i);
            if edge >= a {
                1.0
            } else {
                0.5 - 0.5 * (PI * edge as f64 / a as f64).cos()
            }
        })
        .collect()
}

fn voiced(spk: &Speaker, n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let vowel = VOWELS.choose(rng).unwrap();
    let next = VOWELS.choose(rng).unwrap();
    let f0 = spk.f0 * rng.gen_range(0.85..1.2);
    let glide = rng.gen_range(-0.15..0.15);
    let jitter = Normal::new(0.0, 0.004).unwrap();
    let max_h = ((rate / 2.0 * 0.95) / (f0 * 0.8)).floor() as usize;
    let mut phase = 0.0;
    let mut src = vec![0.0; n];
    for (i, v) in src.iter_mut().enumerate() {
        let t = i as f64 / n as f64;
        let f = f0 * (1.0 + glide * t) * (1.0 + jitter.sample(rng));
        phase += 2.0 * PI * f / rate;
        let mut s = 0.0;
        for h in 1..=max_h {
            if f * h as f64 >= rate / 2.0 * 0.95 {
                break;
            }
            s += (h as f64 * phase).sin() / h as f64;
        }
        *v = s + spk.breathiness * rng.gen_range(-1.0..1.0);
    }
    // two halves with different formant targets approximate a diphone
    let half = n / 2;
    let mut out = vec![0.0; n];
    for (seg, targets) in [(0..half, vowel), (half..n, next)] {
        let mut acc = vec![0.0; seg.len()];
        for (j, &f) in targets.iter().enumerate() {
            let fc = (f * spk.formant_scale).min(rate / 2.0 * 0.9);
            let mut y = src[seg.clone()].to_vec();
            Biquad::bandpass(fc, rate, 4.0 + j as f64 * 2.0).run(&mut y);
            let g = 1.0 / (1.0 + j as f64 * 0.6);
            for (a, b) in acc.iter_mut().zip(&y) {
                *a += g * b;
            }
        }
        out[seg].copy_from_slice(&acc);
    }
    out
}

fn fricative(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fc = rng.gen_range(2500.0..(rate / 2.0 * 0.8).max(2600.0));
    let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Biquad::bandpass(fc, rate, rng.gen_range(1.0..3.0)).run(&mut y);
    y
}

/// RMS level of the white recording floor under every utterance. Real
/// captures never contain digital silence.
pub const RECORDING_FLOOR_DBFS: f64 = -70.0;

/// One utterance with leading and trailing silence over a recording floor.
pub fn utterance(spk: &Speaker, seconds: f64, rate: u32, rng: &mut ChaCha8Rng) -> AudioClip {
    let r = rate as f64;
    let total = (seconds * r).round() as usize;
    let mut x = vec![0.0; total];
    let lead = (rng.gen_range(0.05..0.2) * r) as usize;
    let tail = (rng.gen_range(0.05..0.2) * r) as usize;
    let mut pos = lead;
    while pos + tail < total {
        let is_voiced = rng.gen_bool(0.75);
        let dur = if is_voiced {
            rng.gen_range(0.12..0.3)
        } else {
            rng.gen_range(0.06..0.15)
        };
        let n = ((dur * r) as usize).min(total - tail - pos);
        if n < 16 {
            break;
        }
        let seg = if is_voiced {
            voiced(spk, n, r, rng)
        } else {
            fricative(n, r, rng)
        };
        let level = if is_voiced {
            rng.gen_range(0.5..1.0)
        } else {
            rng.gen_range(0.15..0.35)
        };
        let env = envelope(n, (0.015 * r) as usize);
        let peak = seg.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            x[pos + i] += level * env[i] * seg[i] / peak;
        }
        pos += n + (rng.gen_range(0.01..0.06) * r) as usize;
    }
    let peak = rng.gen_range(0.5..0.9);
    let mut clip = normalize(&AudioClip::new(x, rate), peak).with_label(spk.id.clone());
    let a = 10f64.powf(RECORDING_FLOOR_DBFS / 20.0) * 3f64.sqrt();
    for v in clip.samples.iter_mut() {
        *v += rng.gen_range(-a..a);
    }
    clip
}

/// Vibration-channel variant of a clean utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoneModel {
    /// Steep low-pass with a skull resonance and sensor self-noise.
    Measured,
    /// Fixed coloured filter used to fabricate extra pairs.
    Synthetic,
}

pub fn bone_conduction(clean: &AudioClip, model: BoneModel, rng: &mut ChaCha8Rng) -> AudioClip {
    let r = clean.sample_rate as f64;
    let mut y = clean.samples.clone();
    match model {
        BoneModel::Measured => {
            run_cascade(&Biquad::butterworth_lowpass(900.0, r, 4), &mut y);
            Biquad::peaking(280.0, r, 1.2, 5.0).run(&mut y);
            Biquad::highpass(60.0, r, 0.7).run(&mut y);
            for v in y.iter_mut() {
                *v = 1.6 * *v + 0.002 * rng.gen_range(-1.0..1.0);
            }
        }
        BoneModel::Synthetic => {
            run_cascade(&Biquad::butterworth_lowpass(1200.0, r, 2), &mut y);
            Biquad::peaking(400.0, r, 0.8, 3.0).run(&mut y);
            for v in y.iter_mut() {
                *v *= 1.4;
            }
        }
    }
    let mut out = clean.clone();
    out.samples = y.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    out.label = format!("{}-bcm", clean.label);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    Hum,
    Babble,
}

pub const NOISE_KINDS: [NoiseKind; 5] = [
    NoiseKind::White,
    NoiseKind::Pink,
    NoiseKind::Brown,
    NoiseKind::Hum,
    NoiseKind::Babble,
];

pub fn noise(kind: NoiseKind, seconds: f64, rate: u32, rng: &mut ChaCha8Rng) -> AudioClip {
    let r = rate as f64;
    let n = (seconds * r).round() as usize;
    let white = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let x = match kind {
        NoiseKind::White => white(rng),
        NoiseKind::Pink => {
            // Paul Kellet's economy filter
            let w = white(rng);
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            w.iter()
                .map(|&v| {
                    b0 = 0.99765 * b0 + v * 0.0990460;
                    b1 = 0.96300 * b1 + v * 0.2965164;
                    b2 = 0.57000 * b2 + v * 1.0526913;
                    b0 + b1 + b2 + v * 0.1848
                })
                .collect()
        }
        NoiseKind::Brown => {
            let w = white(rng);
            let mut acc = 0.0;
            w.iter()
                .map(|&v| {
                    acc = 0.995 * acc + 0.1 * v;
                    acc
                })
                .collect()
        }
        NoiseKind::Hum => {
            let base = if rng.gen_bool(0.5) { 50.0 } else { 60.0 };
            let w = white(rng);
            (0..n)
                .map(|i| {
                    let t = i as f64 / r;
                    let mut s = 0.0;
                    for h in 1..8 {
                        s += (2.0 * PI * base * h as f64 * t).sin() / h as f64;
                    }
                    s + 0.2 * w[i]
                })
                .collect()
        }
        NoiseKind::Babble => {
            let mut acc = vec![0.0; n];
            for k in 0..5 {
                let spk = Speaker::random(format!("babble{k}"), rng);
                let u = utterance(&spk, seconds, rate, rng);
                let shift = rng.gen_range(0..n.max(1));
                for i in 0..n {
                    acc[i] += u.samples[(i + shift) % n];
                }
            }
            acc
        }
    };
    normalize(&AudioClip::new(x, rate), 0.5).with_label(format!("{kind:?}").to_lowercase())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub speakers: usize,
    pub clips_per_speaker: usize,
    pub seconds: f64,
    pub rate: u32,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub noise_clips: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            speakers: 10,
            clips_per_speaker: 6,
            seconds: 1.4,
            rate: 16000,
            val_fraction: 0.1,
            test_fraction: 0.1,
            noise_clips: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub noise_dir: PathBuf,
}

/// Writes clean and bone-conduction WAV files, a noise directory and a
/// manifest under `dir`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clean_dir = dir.join("clean");
    let bcm_dir = dir.join("bcm");
    let noise_dir = dir.join("noise");
    for d in [&clean_dir, &bcm_dir, &noise_dir] {
        std::fs::create_dir_all(d)?;
    }
    let total = spec.speakers * spec.clips_per_speaker;
    let n_test = (total as f64 * spec.test_fraction).round() as usize;
    let n_val = (total as f64 * spec.val_fraction).round() as usize;
    let mut entries = Vec::with_capacity(total);
    let mut idx = 0;
    for s in 0..spec.speakers {
        let spk = Speaker::random(format!("s{s:03}"), &mut rng);
        for c in 0..spec.clips_per_speaker {
            let name = format!("{}_{c:03}.wav", spk.id);
            let clean = utterance(&spk, spec.seconds, spec.rate, &mut rng);
            let bcm = bone_conduction(&clean, BoneModel::Measured, &mut rng);
            save_wav(&clean, clean_dir.join(&name))?;
            save_wav(&bcm, bcm_dir.join(&name))?;
            entries.push((clean_dir.join(&name), bcm_dir.join(&name), spk.id.clone()));
            idx += 1;
        }
    }
    debug_assert_eq!(idx, total);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let mut split = vec![Split::Train; total];
    for &i in order.iter().take(n_test) {
        split[i] = Split::Test;
    }
    for &i in order.iter().skip(n_test).take(n_val) {
        split[i] = Split::Val;
    }
    let manifest = Manifest {
        entries: entries
            .into_iter()
            .zip(split)
            .map(|((c, b, id), split)| ManifestEntry {
                clean_path: c,
                bcm_path: Some(b),
                split,
                speaker_id: id,
            })
            .collect(),
    };
    for k in 0..spec.noise_clips {
        let kind = NOISE_KINDS[k % NOISE_KINDS.len()];
        let n = noise(kind, 3.0, spec.rate, &mut rng);
        save_wav(&n, noise_dir.join(format!("{}_{k:02}.wav", n.label)))?;
    }
    let manifest_path = dir.join("manifest.csv");
    manifest.write(std::fs::File::create(&manifest_path)?, dir)?;
    Ok(Corpus {
        manifest,
        manifest_path,
        noise_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::trim_and_slice;

    #[test]
    fn utterance_is_bounded_and_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let spk = Speaker::random("x", &mut a);
        let _ = Speaker::random("x", &mut b);
        let u = utterance(&spk, 1.5, 16000, &mut a);
        let v = utterance(&spk, 1.5, 16000, &mut b);
        assert_eq!(u, v);
        assert_eq!(u.len(), 24000);
        assert!(u.peak() <= 0.9 + 1e-3);
        assert_eq!(trim_and_slice(&u, 1.0).unwrap().len(), 1);
    }

    #[test]
    fn pauses_sit_on_the_recording_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spk = Speaker::random("x", &mut rng);
        let u = utterance(&spk, 1.0, 16000, &mut rng);
        let lead = &u.samples[..800];
        assert!(lead.iter().all(|&v| v != 0.0));
        let db = 10.0 * crate::audio::mean_power(lead).log10();
        assert!((db - RECORDING_FLOOR_DBFS).abs() < 0.5, "{db}");
    }

    #[test]
    fn utterance_has_high_band_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spk = Speaker::random("x", &mut rng);
        let u = utterance(&spk, 1.0, 16000, &mut rng);
        let mut hi = u.samples.clone();
        run_cascade(&Biquad::butterworth_highpass(2500.0, 16000.0, 8), &mut hi);
        let ratio = crate::audio::mean_power(&hi) / u.power();
        assert!(ratio > 0.005, "{ratio}");
    }

    #[test]
    fn bone_channel_is_band_limited() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spk = Speaker::random("x", &mut rng);
        let u = utterance(&spk, 1.0, 16000, &mut rng);
        for model in [BoneModel::Measured, BoneModel::Synthetic] {
            let b = bone_conduction(&u, model, &mut rng);
            let mut hi = b.samples.clone();
            run_cascade(&Biquad::butterworth_highpass(3000.0, 16000.0, 8), &mut hi);
            assert!(crate::audio::mean_power(&hi) < 1e-3 * b.power());
        }
    }

    #[test]
    fn noise_kinds_are_nonsilent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in NOISE_KINDS {
            let n = noise(k, 0.5, 16000, &mut rng);
            assert_eq!(n.len(), 8000);
            assert!(n.power() > 1e-4);
        }
    }

    #[test]
    fn corpus_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            speakers: 2,
            clips_per_speaker: 5,
            noise_clips: 2,
            seconds: 1.2,
            ..Default::default()
        };
        let c = write_corpus(dir.path(), &spec).unwrap();
        assert_eq!(c.manifest.entries.len(), 10);
        assert_eq!(c.manifest.split(Split::Test).len(), 1);
        assert_eq!(c.manifest.split(Split::Val).len(), 1);
        let back = Manifest::load(&c.manifest_path).unwrap();
        assert_eq!(back, c.manifest);
        assert_eq!(std::fs::read_dir(&c.noise_dir).unwrap().count(), 2);
    }
}
