//! Waveform container, WAV I/O and the capture degradation chain
//! (high-pass, noise mixing, sub-Nyquist resampling, bit reduction).

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::filter::Biquad;

pub const SUPPORTED_BITS: [u32; 4] = [8, 10, 12, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub bit_depth: u32,
    pub label: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
            bit_depth: 16,
            label: String::new(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_bit_depth(mut self, bits: u32) -> Self {
        self.bit_depth = bits;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    fn derived(&self, samples: Vec<f64>) -> Self {
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
            bit_depth: self.bit_depth,
            label: self.label.clone(),
        }
    }
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub fn check_bits(bits: u32) -> Result<()> {
    if SUPPORTED_BITS.contains(&bits) {
        Ok(())
    } else {
        Err(Error::UnsupportedBitDepth(bits))
    }
}

/// Reads an integer PCM WAV file. Stereo is folded to mono by averaging
/// channels. For 16-bit containers the effective bit depth is recovered from
/// the sample grid, so files written after `quantize` report their capture
/// resolution.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedEncoding("floating-point PCM".into()));
    }
    if spec.bits_per_sample != 8 && spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding(format!(
            "{}-bit PCM",
            spec.bits_per_sample
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedEncoding("zero channels".into()));
    }
    let raw: Vec<i32> = reader
        .samples::<i32>()
        .collect::<std::result::Result<_, _>>()?;
    if raw.len() < channels {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }
    let full_scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
    let frames = raw.len() / channels;
    let samples: Vec<f64> = (0..frames)
        .map(|i| {
            let frame = &raw[i * channels..(i + 1) * channels];
            let sum: f64 = frame.iter().map(|&s| s as f64 / full_scale).sum();
            sum / channels as f64
        })
        .collect();
    let bit_depth = if spec.bits_per_sample == 16 && channels == 1 {
        grid_bit_depth(&raw)
    } else {
        spec.bits_per_sample as u32
    };
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        bit_depth,
        label,
    })
}

fn grid_bit_depth(raw: &[i32]) -> u32 {
    if raw.iter().all(|&s| s == 0) {
        return 16;
    }
    for bits in [8u32, 10, 12] {
        let step = 1i32 << (16 - bits);
        if raw.iter().all(|&s| s % step == 0) {
            return bits;
        }
    }
    16
}

/// Writes 16-bit PCM mono. Values are scaled by 32768 and saturated.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &x in &clip.samples {
        writer.write_sample(to_i16(x))?;
    }
    writer.finalize()?;
    Ok(())
}

fn to_i16(x: f64) -> i16 {
    let v = (x * 32768.0).round();
    v.clamp(-32768.0, 32767.0) as i16
}

/// Scales to the requested peak and clips to [-1, 1].
pub fn normalize(clip: &AudioClip, peak: f64) -> AudioClip {
    let p = clip.peak();
    let g = if p > 0.0 { peak / p } else { 1.0 };
    clip.derived(clip.samples.iter().map(|x| (x * g).clamp(-1.0, 1.0)).collect())
}

// ---------------------------------------------------------------------------
// Resampling

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser window shape parameter for a stopband attenuation in dB.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Rational polyphase resampler built around a Kaiser-windowed sinc.
#[derive(Debug, Clone)]
pub struct Resampler {
    pub up: usize,
    pub down: usize,
    taps: Vec<f64>,
}

impl Resampler {
    pub const STOPBAND_DB: f64 = 80.0;
    /// Passband edge as a fraction of the lower Nyquist frequency.
    pub const PASSBAND: f64 = 0.85;

    pub fn new(source_rate: u32, target_rate: u32) -> Result<Self> {
        if source_rate == 0 {
            return Err(Error::InvalidRate(0));
        }
        if target_rate == 0 {
            return Err(Error::InvalidRate(0));
        }
        let g = gcd(source_rate as u64, target_rate as u64);
        let up = (target_rate as u64 / g) as usize;
        let down = (source_rate as u64 / g) as usize;
        let inter_rate = source_rate as f64 * up as f64;
        let nyq = source_rate.min(target_rate) as f64 / 2.0;
        let transition = (1.0 - Self::PASSBAND) * nyq;
        let cutoff = nyq - transition / 2.0;
        let dw = 2.0 * PI * transition / inter_rate;
        let mut n = ((Self::STOPBAND_DB - 8.0) / (2.285 * dw)).ceil() as usize + 1;
        if n % 2 == 0 {
            n += 1;
        }
        let beta = kaiser_beta(Self::STOPBAND_DB);
        let i0b = bessel_i0(beta);
        let mid = (n - 1) as f64 / 2.0;
        let fc = cutoff / inter_rate;
        let taps = (0..n)
            .map(|i| {
                let t = i as f64 - mid;
                let sinc = if t == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * PI * fc * t).sin() / (PI * t)
                };
                let r = t / mid;
                let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
                sinc * w * up as f64
            })
            .collect();
        Ok(Resampler { up, down, taps })
    }

    /// Gain in dB of the anti-imaging/anti-aliasing filter at `freq` Hz,
    /// relative to unity passband gain.
    pub fn response_db(&self, freq: f64, source_rate: f64) -> f64 {
        let inter = source_rate * self.up as f64;
        let w = 2.0 * PI * freq / inter;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &h) in self.taps.iter().enumerate() {
            re += h * (w * i as f64).cos();
            im -= h * (w * i as f64).sin();
        }
        20.0 * (re.hypot(im) / self.up as f64).log10()
    }

    /// Output samples at each end that the filter's zero padding reaches.
    pub fn edge(&self) -> usize {
        self.taps.len() / 2 / self.down + 1
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as f64) * self.up as f64 / self.down as f64).round() as usize
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        if self.up == 1 && self.down == 1 {
            return x.to_vec();
        }
        let n_out = self.output_len(x.len());
        let n_taps = self.taps.len() as i64;
        let delay = (n_taps - 1) / 2;
        let up = self.up as i64;
        let mut out = Vec::with_capacity(n_out);
        for m in 0..n_out as i64 {
            // position on the zero-stuffed grid, shifted so the filter is centred
            let n = m * self.down as i64 + delay;
            let j_lo = ((n - n_taps + 1) as f64 / up as f64).ceil().max(0.0) as i64;
            let j_hi = (n / up).min(x.len() as i64 - 1);
            let mut acc = 0.0;
            let mut j = j_lo;
            while j <= j_hi {
                acc += self.taps[(n - j * up) as usize] * x[j as usize];
                j += 1;
            }
            out.push(acc);
        }
        out
    }
}

pub fn resample(clip: &AudioClip, target_rate: i64) -> Result<AudioClip> {
    if target_rate <= 0 || target_rate > u32::MAX as i64 {
        return Err(Error::InvalidRate(target_rate));
    }
    let target = target_rate as u32;
    let r = Resampler::new(clip.sample_rate, target)?;
    let mut out = clip.derived(r.process(&clip.samples));
    out.sample_rate = target;
    Ok(out)
}

/// Linear interpolation onto a new rate; used to align the vibration
/// channel with the acoustic stream.
pub fn interp_linear(clip: &AudioClip, target_rate: u32, target_len: usize) -> AudioClip {
    let x = &clip.samples;
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let samples = (0..target_len)
        .map(|i| {
            if x.is_empty() {
                return 0.0;
            }
            let pos = i as f64 * ratio;
            let i0 = pos.floor() as usize;
            if i0 + 1 >= x.len() {
                return x[x.len() - 1];
            }
            let frac = pos - i0 as f64;
            x[i0] * (1.0 - frac) + x[i0 + 1] * frac
        })
        .collect();
    let mut out = clip.derived(samples);
    out.sample_rate = target_rate;
    out
}

// ---------------------------------------------------------------------------
// Quantization

pub fn quantize_step(bits: u32) -> f64 {
    2f64.powi(1 - bits as i32)
}

/// Mid-tread uniform quantizer over [-1, 1 - step]; `f64::round` rounds half
/// away from zero.
pub fn quantize_samples(x: &[f64], bits: u32) -> Vec<f64> {
    let step = quantize_step(bits);
    let hi = 1.0 - step;
    x.iter()
        .map(|&v| ((v / step).round() * step).clamp(-1.0, hi))
        .collect()
}

pub fn quantize(clip: &AudioClip, bits: u32) -> Result<AudioClip> {
    check_bits(bits)?;
    let mut out = clip.derived(quantize_samples(&clip.samples, bits));
    out.bit_depth = bits;
    Ok(out)
}

// ---------------------------------------------------------------------------
// High-pass filtering

pub const HIGHPASS_ORDER: usize = 8;

/// Butterworth high-pass (8th order, bilinear transform, cascaded biquads).
pub fn highpass(clip: &AudioClip, cutoff_hz: f64) -> Result<AudioClip> {
    let rate = clip.sample_rate as f64;
    if !(cutoff_hz > 0.0 && cutoff_hz < rate / 2.0) {
        return Err(Error::InvalidCutoff {
            cutoff: cutoff_hz,
            rate: clip.sample_rate,
        });
    }
    let mut y = clip.samples.clone();
    for s in Biquad::butterworth_highpass(cutoff_hz, rate, HIGHPASS_ORDER) {
        s.run(&mut y);
    }
    Ok(clip.derived(y))
}

// ---------------------------------------------------------------------------
// Trimming and slicing

pub const SILENCE_DBFS: f64 = -40.0;
pub const SILENCE_WINDOW_S: f64 = 0.02;

/// Sample range spanning the first through last window whose RMS exceeds the
/// silence threshold, or `None` for an all-silent clip.
pub fn active_range(clip: &AudioClip) -> Option<(usize, usize)> {
    let win = ((SILENCE_WINDOW_S * clip.sample_rate as f64).round() as usize).max(1);
    let threshold = 10f64.powf(SILENCE_DBFS / 20.0);
    let x = &clip.samples;
    let mut first = None;
    let mut last = None;
    let mut start = 0;
    while start < x.len() {
        let end = (start + win).min(x.len());
        let rms = mean_power(&x[start..end]).sqrt();
        if rms > threshold {
            if first.is_none() {
                first = Some(start);
            }
            last = Some(end);
        }
        start = end;
    }
    Some((first?, last?))
}

pub fn trim_and_slice(clip: &AudioClip, slice_seconds: f64) -> Result<Vec<AudioClip>> {
    if !(slice_seconds > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "slice length must be positive, got {slice_seconds}"
        )));
    }
    let Some((lo, hi)) = active_range(clip) else {
        return Ok(Vec::new());
    };
    let n = (slice_seconds * clip.sample_rate as f64).round() as usize;
    if n == 0 {
        return Err(Error::InvalidParameter("slice shorter than one sample".into()));
    }
    let active = &clip.samples[lo..hi];
    Ok(active
        .chunks_exact(n)
        .enumerate()
        .map(|(i, c)| {
            let mut s = clip.derived(c.to_vec());
            s.label = format!("{}#{i}", clip.label);
            s
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Noise mixing

/// Noise gain that places `noise` at `snr_db` below `clean`.
pub fn noise_gain(clean_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds noise at the requested SNR. The noise is cropped from its start, or
/// looped when shorter than the clean signal. `None` leaves the clip as is.
pub fn mix_noise(clean: &AudioClip, noise: &AudioClip, snr_db: Option<f64>) -> Result<AudioClip> {
    let Some(snr) = snr_db else {
        return Ok(clean.clone());
    };
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::RateMismatch(clean.sample_rate, noise.sample_rate));
    }
    if noise.is_empty() {
        return Err(Error::Silent("SNR"));
    }
    let n: Vec<f64> = (0..clean.len())
        .map(|i| noise.samples[i % noise.len()])
        .collect();
    let pc = clean.power();
    let pn = mean_power(&n);
    if pc <= 0.0 || pn <= 0.0 {
        return Err(Error::Silent("SNR"));
    }
    let g = noise_gain(pc, pn, snr);
    Ok(clean.derived(
        clean
            .samples
            .iter()
            .zip(&n)
            .map(|(c, v)| (c + g * v).clamp(-1.0, 1.0))
            .collect(),
    ))
}

// ---------------------------------------------------------------------------
// Degradation

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub target_rate: u32,
    pub target_bits: u32,
    pub snr_db: Option<f64>,
    pub hpf_cutoff: Option<f64>,
    pub snr_range: (f64, f64),
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            target_rate: 4000,
            target_bits: 8,
            snr_db: None,
            hpf_cutoff: Some(15.0),
            snr_range: (-7.0, 5.0),
        }
    }
}

impl DegradationSpec {
    pub fn new(target_rate: u32, target_bits: u32) -> Self {
        DegradationSpec {
            target_rate,
            target_bits,
            ..Default::default()
        }
    }

    pub fn validate(&self, source: &AudioClip) -> Result<()> {
        if self.target_rate == 0 {
            return Err(Error::InvalidRate(0));
        }
        if self.target_rate > source.sample_rate {
            return Err(Error::InvalidParameter(format!(
                "target rate {} exceeds source rate {}",
                self.target_rate, source.sample_rate
            )));
        }
        check_bits(self.target_bits)?;
        if self.target_bits > source.bit_depth {
            return Err(Error::InvalidParameter(format!(
                "target depth {} exceeds source depth {}",
                self.target_bits, source.bit_depth
            )));
        }
        if let Some(s) = self.snr_db {
            let (lo, hi) = self.snr_range;
            if !(s >= lo && s <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "SNR {s} dB outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// High-pass, add noise, resample, then quantize.
pub fn degrade(clip: &AudioClip, spec: &DegradationSpec, noise: Option<&AudioClip>) -> Result<AudioClip> {
    spec.validate(clip)?;
    let mut x = match spec.hpf_cutoff {
        Some(fc) => highpass(clip, fc)?,
        None => clip.clone(),
    };
    if spec.snr_db.is_some() {
        let noise = noise.ok_or_else(|| {
            Error::InvalidParameter("an SNR was requested but no noise clip was given".into())
        })?;
        x = mix_noise(&x, noise, spec.snr_db)?;
    }
    let x = resample(&x, spec.target_rate as i64)?;
    quantize(&x, spec.target_bits)
}
