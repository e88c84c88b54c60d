//! Frame-by-frame streaming emulator: each frame is sent over the link,
//! enhanced independently and timed against the real-time and one-way
//! delay budgets.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use subaru_core::AudioClip;
use subaru_nn::{ParamStore, Scalar};

use crate::error::{Error, Result};
use crate::networks::{Plans, StageTimes, Subaru};

/// Default link delay per frame.
pub const TRANSPORT_MS: f64 = 12.0;
/// One-way delay acceptable for conversation.
pub const ITU_BUDGET_MS: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    pub index: usize,
    pub duration_s: f64,
    pub transport_latency_ms: f64,
    pub inference_latency_ms: f64,
    pub total_latency_ms: f64,
    /// Simulated clock when the enhanced frame is ready, counted from the
    /// start of capture. Inference of a frame waits for the previous one.
    pub ready_at_ms: f64,
    /// Per-network timings when inference was measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<StageTimes>,
}

impl StreamFrame {
    pub fn new(index: usize, duration_s: f64, transport_ms: f64, inference_ms: f64) -> Self {
        StreamFrame {
            index,
            duration_s,
            transport_latency_ms: transport_ms,
            inference_latency_ms: inference_ms,
            total_latency_ms: transport_ms + inference_ms,
            ready_at_ms: 0.0,
            stages: None,
        }
    }

    pub fn realtime_ok(&self) -> bool {
        self.inference_latency_ms < 1000.0 * self.duration_s
    }

    pub fn itu_ok(&self) -> bool {
        self.total_latency_ms <= ITU_BUDGET_MS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub frames: Vec<StreamFrame>,
    pub realtime_ok: bool,
    pub itu_ok: bool,
    pub max_total_ms: f64,
    pub mean_total_ms: f64,
    pub max_inference_ms: f64,
    pub mean_inference_ms: f64,
}

impl StreamReport {
    /// Verdicts and aggregates of `frames`, with the simulated clock filled
    /// in: frame `k` arrives after its capture plus transport, and inference
    /// starts once both it and the previous frame are done.
    pub fn from_frames(mut frames: Vec<StreamFrame>) -> Self {
        let mut captured = 0.0;
        let mut busy_until = 0.0f64;
        for f in &mut frames {
            captured += 1000.0 * f.duration_s;
            let start = (captured + f.transport_latency_ms).max(busy_until);
            busy_until = start + f.inference_latency_ms;
            f.ready_at_ms = busy_until;
        }
        let n = frames.len().max(1) as f64;
        let fold = |g: fn(&StreamFrame) -> f64| frames.iter().map(g).fold(0.0, f64::max);
        let sum = |g: fn(&StreamFrame) -> f64| frames.iter().map(g).sum::<f64>();
        StreamReport {
            realtime_ok: frames.iter().all(StreamFrame::realtime_ok),
            itu_ok: frames.iter().all(StreamFrame::itu_ok),
            max_total_ms: fold(|f| f.total_latency_ms),
            mean_total_ms: sum(|f| f.total_latency_ms) / n,
            max_inference_ms: fold(|f| f.inference_latency_ms),
            mean_inference_ms: sum(|f| f.inference_latency_ms) / n,
            frames,
        }
    }

    /// One JSON record per frame.
    pub fn write_records<W: Write>(&self, mut w: W) -> Result<()> {
        for f in &self.frames {
            serde_json::to_writer(&mut w, f)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Fixed latencies replacing the measured ones; inference values are used
/// cyclically across frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub transport_ms: f64,
    pub inference_ms: Vec<f64>,
}

impl Injection {
    pub fn constant(transport_ms: f64, inference_ms: f64) -> Self {
        Injection {
            transport_ms,
            inference_ms: vec![inference_ms],
        }
    }

    fn inference(&self, k: usize) -> f64 {
        if self.inference_ms.is_empty() {
            0.0
        } else {
            self.inference_ms[k % self.inference_ms.len()]
        }
    }
}

/// One captured frame: the acoustic capture and optional vibration channel.
pub type FramePair = (AudioClip, Option<AudioClip>);

/// Cuts aligned captures into non-overlapping frames of `frame_s` seconds;
/// a trailing partial frame is dropped.
pub fn slice_frames(acm: &AudioClip, bcm: Option<&AudioClip>, frame_s: f64) -> Result<Vec<FramePair>> {
    let n = (frame_s * acm.sample_rate as f64).round() as usize;
    if n == 0 {
        return Err(Error::Config("frame shorter than one sample".into()));
    }
    let frames = acm.len() / n;
    Ok((0..frames)
        .map(|k| {
            let a = AudioClip::new(acm.samples[k * n..(k + 1) * n].to_vec(), acm.sample_rate);
            let b = bcm.map(|b| {
                let m = (frame_s * b.sample_rate as f64).round() as usize;
                let lo = (k * m).min(b.len());
                let hi = ((k + 1) * m).min(b.len());
                let mut s = b.samples[lo..hi].to_vec();
                s.resize(m, 0.0);
                AudioClip::new(s, b.sample_rate)
            });
            (a, b)
        })
        .collect())
}

/// Enhances every frame independently, without timing.
pub fn enhance_frames<T: Scalar>(
    model: &Subaru,
    store: &ParamStore<T>,
    plans: &Plans<T>,
    frames: &[FramePair],
) -> Result<Vec<AudioClip>> {
    frames.iter().map(|(a, b)| model.enhance(store, plans, a, b.as_ref())).collect()
}

/// Streams `frames` through the model. With an injection the report uses
/// the injected latencies on the simulated clock; otherwise inference is
/// timed on the wall clock and transport is `TRANSPORT_MS`.
pub fn simulate_stream<T: Scalar>(
    model: &Subaru,
    store: &ParamStore<T>,
    plans: &Plans<T>,
    frames: &[FramePair],
    injection: Option<&Injection>,
) -> Result<(Vec<AudioClip>, StreamReport)> {
    if frames.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    let mut out = Vec::with_capacity(frames.len());
    let mut timeline = Vec::with_capacity(frames.len());
    for (k, (a, b)) in frames.iter().enumerate() {
        let t = Instant::now();
        let (clip, stages) = model.enhance_timed(store, plans, a, b.as_ref())?;
        let measured = t.elapsed().as_secs_f64() * 1000.0;
        out.push(clip);
        let frame = match injection {
            Some(inj) => StreamFrame::new(k, a.duration(), inj.transport_ms, inj.inference(k)),
            None => StreamFrame {
                stages: Some(stages),
                ..StreamFrame::new(k, a.duration(), TRANSPORT_MS, measured)
            },
        };
        timeline.push(frame);
    }
    Ok((out, StreamReport::from_frames(timeline)))
}

/// Timing-only run of the emulator, without a model.
pub fn simulate_timeline(frame_s: f64, frames: usize, injection: &Injection) -> StreamReport {
    StreamReport::from_frames(
        (0..frames)
            .map(|k| StreamFrame::new(k, frame_s, injection.transport_ms, injection.inference(k)))
            .collect(),
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "yes"
    } else {
        "no"
    }
}

/// Per-frame table plus aggregates and verdicts.
pub fn latency_report(report: &StreamReport) -> String {
    if report.frames.is_empty() {
        return "no frames\n".to_string();
    }
    let mut s = String::new();
    let _ = writeln!(s, "frame  duration_s  transport_ms  inference_ms  total_ms  ready_at_ms");
    for f in &report.frames {
        let _ = writeln!(
            s,
            "{:>5}  {:>10.3}  {:>12.1}  {:>12.1}  {:>8.1}  {:>11.1}",
            f.index, f.duration_s, f.transport_latency_ms, f.inference_latency_ms, f.total_latency_ms, f.ready_at_ms
        );
    }
    let _ = writeln!(
        s,
        "total latency ms: mean {:.1}, max {:.1}",
        report.mean_total_ms, report.max_total_ms
    );
    let _ = writeln!(
        s,
        "inference ms: mean {:.1}, max {:.1}",
        report.mean_inference_ms, report.max_inference_ms
    );
    let measured: Vec<StageTimes> = report.frames.iter().filter_map(|f| f.stages).collect();
    if !measured.is_empty() {
        let n = measured.len() as f64;
        let mean = |g: fn(&StageTimes) -> f64| measured.iter().map(g).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "per-network ms (mean): sen {:.1}, ups {:.1}, ten {:.1}, apen {:.1}",
            mean(|t| t.sen_ms),
            mean(|t| t.ups_ms),
            mean(|t| t.ten_ms),
            mean(|t| t.apen_ms)
        );
    }
    let _ = writeln!(s, "real time (inference < frame): {}", verdict(report.realtime_ok));
    let _ = writeln!(s, "within {ITU_BUDGET_MS:.0} ms one-way budget: {}", verdict(report.itu_ok));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_verdicts() {
        let r = simulate_timeline(1.0, 1, &Injection::constant(12.0, 71.0));
        assert_eq!(r.frames[0].total_latency_ms, 83.0);
        assert!(r.realtime_ok && r.itu_ok);
        let r = simulate_timeline(1.0, 1, &Injection::constant(12.0, 140.0));
        assert_eq!(r.frames[0].total_latency_ms, 152.0);
        assert!(r.realtime_ok && !r.itu_ok);
        let r = simulate_timeline(1.0, 3, &Injection::constant(12.0, 1100.0));
        assert!(!r.realtime_ok);
    }

    #[test]
    fn boundary_is_inclusive_for_delay_budget() {
        let r = simulate_timeline(1.0, 2, &Injection::constant(12.0, 138.0));
        assert!(r.itu_ok);
        let r = simulate_timeline(1.0, 1, &Injection::constant(0.0, 1000.0));
        assert!(!r.realtime_ok);
    }

    #[test]
    fn aggregates_and_clock() {
        let r = simulate_timeline(1.0, 10, &Injection::constant(12.0, 71.0));
        assert_eq!(r.mean_total_ms, 83.0);
        assert_eq!(r.max_total_ms, 83.0);
        assert_eq!(r.frames[0].ready_at_ms, 1083.0);
        assert_eq!(r.frames[9].ready_at_ms, 10083.0);
        let slow = simulate_timeline(1.0, 3, &Injection::constant(12.0, 1500.0));
        assert_eq!(slow.frames[1].ready_at_ms, 1012.0 + 3000.0);
    }

    #[test]
    fn report_text() {
        let r = simulate_timeline(1.0, 1, &Injection::constant(12.0, 71.0));
        let t = latency_report(&r);
        assert!(t.contains("83.0"));
        assert!(t.contains("real time (inference < frame): yes"));
        assert!(t.contains("one-way budget: yes"));
        assert_eq!(latency_report(&StreamReport::from_frames(Vec::new())), "no frames\n");
        assert!(!t.contains("per-network"));
        let timed = StreamFrame {
            stages: Some(StageTimes {
                sen_ms: 10.0,
                ups_ms: 20.0,
                ten_ms: 30.0,
                apen_ms: 11.0,
            }),
            ..StreamFrame::new(0, 1.0, 12.0, 71.0)
        };
        let t = latency_report(&StreamReport::from_frames(vec![timed]));
        assert!(t.contains("per-network ms (mean): sen 10.0, ups 20.0, ten 30.0, apen 11.0"));
    }

    #[test]
    fn records_one_line_per_frame() {
        let r = simulate_timeline(1.0, 4, &Injection {
            transport_ms: 12.0,
            inference_ms: vec![10.0, 20.0],
        });
        let mut buf = Vec::new();
        r.write_records(&mut buf).unwrap();
        let lines: Vec<StreamFrame> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines, r.frames);
        assert_eq!(lines[3].inference_latency_ms, 20.0);
    }
}
