//! Objective quality measures: log-spectral distance, SI-SDR and STOI, plus
//! the per-clip evaluation report.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, Resampler};
use crate::error::{Error, Result};
use crate::spectral::{StftConfig, StftPlan};

pub const LSD_POWER_FLOOR: f64 = 1e-10;
pub const SI_SDR_CAP_DB: f64 = 100.0;

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch(reference.len(), estimate.len()));
    }
    if reference.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    Ok(())
}

fn power_spectrum(plan: &StftPlan<f64>, x: &[f64]) -> Array2<f64> {
    let (re, im) = plan.forward(x);
    ndarray::Zip::from(&re)
        .and(&im)
        .map_collect(|&r, &i| (r * r + i * i).max(LSD_POWER_FLOOR).log10())
}

/// Mean over frames of the RMS (over bins) difference of log10 power spectra.
pub fn lsd(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let plan = StftPlan::<f64>::new(StftConfig::LSD)?;
    let a = power_spectrum(&plan, reference);
    let b = power_spectrum(&plan, estimate);
    let (frames, bins) = a.dim();
    if frames == 0 {
        return Err(Error::TooShort {
            needed: StftConfig::LSD.n_fft / 2,
            got: reference.len(),
        });
    }
    let mut total = 0.0;
    for t in 0..frames {
        let mut acc = 0.0;
        for f in 0..bins {
            let d = a[[t, f]] - b[[t, f]];
            acc += d * d;
        }
        total += (acc / bins as f64).sqrt();
    }
    Ok(total / frames as f64)
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Scale-invariant SDR in dB, limited to +/-100 dB.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let s = zero_mean(reference);
    let e = zero_mean(estimate);
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if ss <= 0.0 {
        return Err(Error::Silent("SI-SDR"));
    }
    let alpha = s.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / ss;
    let mut target = 0.0;
    let mut resid = 0.0;
    for (a, b) in s.iter().zip(&e) {
        let t = alpha * a;
        target += t * t;
        resid += (t - b) * (t - b);
    }
    if resid <= 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    if target <= 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / resid).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

// ---------------------------------------------------------------------------
// STOI

const STOI_FS: u32 = 10000;
const STOI_FRAME: usize = 256;
const STOI_HOP: usize = 128;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Symmetric Hann of `n` points without its zero end-points.
fn inner_hann(n: usize) -> Vec<f64> {
    let m = n + 2;
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (m - 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(STOI_FRAME)).step_by(STOI_HOP)
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = inner_hann(STOI_FRAME);
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let n: f64 = (0..STOI_FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (n.sqrt() + EPS).log10()
        })
        .collect();
    let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| max - STOI_DYN_RANGE - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let out_len = (kept.len() - 1) * STOI_HOP + STOI_FRAME;
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (j, &s) in kept.iter().enumerate() {
        for i in 0..STOI_FRAME {
            xs[j * STOI_HOP + i] += w[i] * x[s + i];
            ys[j * STOI_HOP + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = STOI_NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins)
        .map(|k| k as f64 * STOI_FS as f64 / STOI_NFFT as f64)
        .collect();
    let nearest = |target: f64| {
        freqs
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, &f)| {
                let d = (f - target).powi(2);
                if d < best.1 {
                    (i, d)
                } else {
                    best
                }
            })
            .0
    };
    (0..STOI_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = STOI_MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = STOI_MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn band_envelopes(x: &[f64]) -> Array2<f64> {
    let w = inner_hann(STOI_FRAME);
    let mut planner = rustfft::FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(STOI_NFFT);
    let bands = third_octave_bands();
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let mut env = Array2::zeros((STOI_BANDS, starts.len()));
    let mut buf = vec![rustfft::num_complex::Complex::new(0.0, 0.0); STOI_NFFT];
    for (t, &s) in starts.iter().enumerate() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < STOI_FRAME {
                rustfft::num_complex::Complex::new(w[i] * x[s + i], 0.0)
            } else {
                rustfft::num_complex::Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (j, &(lo, hi)) in bands.iter().enumerate() {
            let p: f64 = (lo..hi).map(|k| buf[k].norm_sqr()).sum();
            env[[j, t]] = p.sqrt();
        }
    }
    env
}

fn to_stoi_rate(x: &[f64], rate: u32) -> Result<Vec<f64>> {
    if rate == STOI_FS {
        Ok(x.to_vec())
    } else {
        Ok(Resampler::new(rate, STOI_FS)?.process(x))
    }
}

/// Short-time objective intelligibility of `estimate` against `reference`.
pub fn stoi(reference: &[f64], estimate: &[f64], rate: u32) -> Result<f64> {
    check_pair(reference, estimate)?;
    let x = to_stoi_rate(reference, rate)?;
    let y = to_stoi_rate(estimate, rate)?;
    let (x, y) = remove_silent_frames(&x, &y);
    let xe = band_envelopes(&x);
    let ye = band_envelopes(&y);
    let frames = xe.ncols();
    if frames < STOI_SEGMENT {
        return Err(Error::TooShort {
            needed: STOI_SEGMENT,
            got: frames,
        });
    }
    let clip = 10f64.powf(-STOI_BETA_DB / 20.0);
    let n = STOI_SEGMENT;
    let mut total = 0.0;
    let mut count = 0usize;
    for m in n..=frames {
        for j in 0..STOI_BANDS {
            let xs: Vec<f64> = (m - n..m).map(|t| xe[[j, t]]).collect();
            let ys: Vec<f64> = (m - n..m).map(|t| ye[[j, t]]).collect();
            let xn = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let g = xn / (yn + EPS);
            let yp: Vec<f64> = ys
                .iter()
                .zip(&xs)
                .map(|(&yv, &xv)| (yv * g).min(xv * (1.0 + clip)))
                .collect();
            let xm = xs.iter().sum::<f64>() / n as f64;
            let ym = yp.iter().sum::<f64>() / n as f64;
            let xc: Vec<f64> = xs.iter().map(|v| v - xm).collect();
            let yc: Vec<f64> = yp.iter().map(|v| v - ym).collect();
            let xl = xc.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS;
            let yl = yc.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS;
            total += xc.iter().zip(&yc).map(|(a, b)| (a / xl) * (b / yl)).sum::<f64>();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub id: String,
    pub lsd: f64,
    pub si_sdr: f64,
    pub stoi: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub records: Vec<MetricRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub lsd: f64,
    pub si_sdr: f64,
    pub stoi: f64,
}

pub fn evaluate_clip(id: &str, reference: &AudioClip, estimate: &AudioClip) -> Result<MetricRecord> {
    if reference.sample_rate != estimate.sample_rate {
        return Err(Error::RateMismatch(reference.sample_rate, estimate.sample_rate));
    }
    Ok(MetricRecord {
        id: id.to_string(),
        lsd: lsd(&reference.samples, &estimate.samples)?,
        si_sdr: si_sdr(&reference.samples, &estimate.samples)?,
        stoi: stoi(&reference.samples, &estimate.samples, reference.sample_rate)?,
    })
}

impl MetricReport {
    pub fn means(&self) -> Option<MetricMeans> {
        if self.records.is_empty() {
            return None;
        }
        let n = self.records.len() as f64;
        Some(MetricMeans {
            lsd: self.records.iter().map(|r| r.lsd).sum::<f64>() / n,
            si_sdr: self.records.iter().map(|r| r.si_sdr).sum::<f64>() / n,
            stoi: self.records.iter().map(|r| r.stoi).sum::<f64>() / n,
        })
    }

    pub fn write_records<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_records<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let records = rd.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(MetricReport { records })
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<32} {:>8} {:>9} {:>7}\n", "clip", "LSD", "SI-SDR", "STOI");
        for r in &self.records {
            s += &format!("{:<32} {:>8.4} {:>9.3} {:>7.4}\n", r.id, r.lsd, r.si_sdr, r.stoi);
        }
        match self.means() {
            Some(m) => {
                s += &format!(
                    "{:<32} {:>8.4} {:>9.3} {:>7.4}\n",
                    format!("mean ({} clips)", self.records.len()),
                    m.lsd,
                    m.si_sdr,
                    m.stoi
                );
            }
            None => s += "no clips\n",
        }
        s
    }
}
