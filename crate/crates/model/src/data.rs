//! Training material: 1 s slices from a manifest, capture simulation and
//! deterministic batches with the synthetic-pair mixing schedule.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subaru_core::audio::{active_range, degrade, interp_linear, load_wav, resample};
use subaru_core::synth::{bone_conduction, noise, BoneModel, NOISE_KINDS};
use subaru_core::{AudioClip, DegradationSpec, Manifest, Split};

use crate::config::{DataConfig, TrainConfig};
use crate::error::{Error, Result};

/// One aligned clean slice and its recorded vibration channel, both at the
/// target rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub clean: Vec<f64>,
    pub bcm: Option<Vec<f64>>,
}

/// Model inputs and target for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub id: String,
    /// Degraded acoustic capture at the source rate.
    pub acm: Vec<f64>,
    /// Vibration channel degraded like the capture and interpolated back to
    /// the target rate; `None` when the entry has none.
    pub bcm: Option<Vec<f64>>,
    /// Reference at the target rate, `acm.len() * ratio` samples.
    pub clean: Vec<f64>,
    pub synthetic: bool,
}

fn to_rate(clip: AudioClip, rate: u32) -> Result<AudioClip> {
    if clip.sample_rate == rate {
        Ok(clip)
    } else {
        Ok(resample(&clip, rate as i64)?)
    }
}

/// Silence-trimmed, non-overlapping slices of every entry in `split`;
/// trailing remainders are dropped.
pub fn load_examples(manifest: &Manifest, split: Split, slice_seconds: f64, rate: u32) -> Result<Vec<Example>> {
    let n = (slice_seconds * rate as f64).round() as usize;
    if n == 0 {
        return Err(Error::Config("slice shorter than one sample".into()));
    }
    let mut out = Vec::new();
    for e in manifest.split(split) {
        let clean = to_rate(load_wav(&e.clean_path)?, rate)?;
        let bcm = match &e.bcm_path {
            Some(p) => Some(to_rate(load_wav(p)?, rate)?),
            None => None,
        };
        let Some((lo, hi)) = active_range(&clean) else {
            continue;
        };
        let stem = e
            .clean_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut start = lo;
        let mut k = 0;
        while start + n <= hi {
            let bcm_slice = bcm.as_ref().map(|b| {
                let mut v: Vec<f64> = b.samples.iter().skip(start).take(n).cloned().collect();
                v.resize(n, 0.0);
                v
            });
            out.push(Example {
                id: format!("{stem}#{k}"),
                clean: clean.samples[start..start + n].to_vec(),
                bcm: bcm_slice,
            });
            start += n;
            k += 1;
        }
    }
    Ok(out)
}

/// Noise clips at `rate`: every WAV in `dir`, or a procedural pool.
pub fn noise_pool(dir: Option<&Path>, rate: u32, seed: u64) -> Result<Vec<AudioClip>> {
    if let Some(dir) = dir {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let clips = paths
            .iter()
            .map(|p| to_rate(load_wav(p)?, rate))
            .collect::<Result<Vec<_>>>()?;
        if clips.is_empty() {
            return Err(Error::Empty("noise directory"));
        }
        return Ok(clips);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6500);
    Ok((0..2 * NOISE_KINDS.len())
        .map(|i| noise(NOISE_KINDS[i % NOISE_KINDS.len()], 3.0, rate, &mut rng))
        .collect())
}

/// Simulates the hearable capture of one example.
pub fn make_triple(
    ex: &Example,
    synthetic: bool,
    noises: &[AudioClip],
    cfg: &DataConfig,
    rate: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Triple> {
    let clean = AudioClip::new(ex.clean.clone(), rate).with_label(ex.id.clone());
    let noisy = !noises.is_empty() && rng.gen_bool(cfg.noise_prob.clamp(0.0, 1.0));
    let (lo, hi) = cfg.snr_range;
    let snr = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let noise_clip = if noisy {
        let base = &noises[rng.gen_range(0..noises.len())];
        let off = rng.gen_range(0..base.len().max(1));
        let mut n = base.clone();
        n.samples.rotate_left(off);
        Some(n)
    } else {
        None
    };
    let spec = DegradationSpec {
        target_rate: cfg.source_rate,
        target_bits: cfg.bits,
        snr_db: noisy.then_some(snr),
        hpf_cutoff: cfg.hpf_cutoff,
        snr_range: cfg.snr_range,
    };
    let acm = degrade(&clean, &spec, noise_clip.as_ref())?;
    let len = acm.len() * (rate / cfg.source_rate) as usize;
    let vib = if synthetic {
        Some(bone_conduction(&clean, BoneModel::Synthetic, rng))
    } else {
        ex.bcm.as_ref().map(|b| AudioClip::new(b.clone(), rate))
    };
    let quiet = DegradationSpec {
        snr_db: None,
        ..spec
    };
    let bcm = match vib {
        Some(v) => {
            let low = degrade(&v, &quiet, None)?;
            Some(interp_linear(&low, rate, len).samples)
        }
        None => None,
    };
    let mut target = ex.clean.clone();
    target.resize(len, 0.0);
    Ok(Triple {
        id: ex.id.clone(),
        acm: acm.samples,
        bcm,
        clean: target,
        synthetic,
    })
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x ^= x >> 31;
    x.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Deterministic batch source for one split.
pub struct Batches {
    pub examples: Vec<Example>,
    pub noises: Vec<AudioClip>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub rate: u32,
}

impl Batches {
    pub fn new(examples: Vec<Example>, noises: Vec<AudioClip>, data: DataConfig, train: TrainConfig, rate: u32) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Empty("split"));
        }
        Ok(Batches {
            examples,
            noises,
            data,
            train,
            rate,
        })
    }

    /// Example indices of every batch of `epoch`; the last batch may be short.
    pub fn order(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.examples.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.train.seed, epoch as u64, 0)));
        idx.chunks(self.train.batch_size).map(|c| c.to_vec()).collect()
    }

    pub fn len(&self) -> usize {
        self.examples.len().div_ceil(self.train.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Builds batch `b` of `epoch`; the first `round(fraction * len)` items
    /// use fabricated vibration channels.
    pub fn batch(&self, epoch: usize, b: usize, indices: &[usize]) -> Result<Vec<Triple>> {
        let frac = self.train.mix_fraction(epoch);
        let n_syn = (frac * indices.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.train.seed, epoch as u64, b as u64 + 1));
        indices
            .iter()
            .enumerate()
            .map(|(i, &k)| make_triple(&self.examples[k], i < n_syn, &self.noises, &self.data, self.rate, &mut rng))
            .collect()
    }

    /// Fixed pairs with recorded vibration channels, for validation.
    pub fn fixed(&self) -> Result<Vec<Triple>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.train.seed, u64::MAX, 7));
        self.examples
            .iter()
            .map(|e| make_triple(e, false, &self.noises, &self.data, self.rate, &mut rng))
            .collect()
    }
}
