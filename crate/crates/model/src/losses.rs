//! Time, phase and frequency-domain training losses.

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use subaru_core::{AudioClip, StftConfig, StftPlan};
use subaru_nn::{concat, Graph, ParamStore, Scalar, Var};

use crate::error::{Error, Result};
use crate::networks::{batch, polar};

/// Max-pooling ratios of the multi-scale loss.
pub const SCALES: [usize; 3] = [1, 2, 4];
/// Row lengths of the multi-period loss.
pub const PERIODS: [usize; 2] = [5, 7];
/// `(n_fft, hop, win_length)` of the multi-resolution STFT loss.
pub const RESOLUTIONS: [(usize, usize, usize); 3] = [(256, 128, 256), (512, 256, 512), (1024, 512, 1024)];
/// Offset inside the log-magnitude term.
pub const MAG_EPS: f64 = 1e-7;

/// How the multi-period term reduces each reshaped signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PeriodMode {
    /// Mean absolute difference of per-row sums.
    #[default]
    PerRow,
    /// Absolute difference of whole-signal sums, identical for every period.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub multi_scale: f64,
    pub multi_period: f64,
    pub phase_ip: f64,
    pub phase_gd: f64,
    pub mr_stft_sc: f64,
    pub mr_stft_mag: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            multi_scale: 1.0,
            multi_period: 1.0,
            phase_ip: 1.0,
            phase_gd: 1.0,
            mr_stft_sc: 1.0,
            mr_stft_mag: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.multi_scale,
            self.multi_period,
            self.phase_ip,
            self.phase_gd,
            self.mr_stft_sc,
            self.mr_stft_mag,
        ]
    }

    pub fn from_array(w: [f64; 6]) -> Self {
        LossWeights {
            multi_scale: w[0],
            multi_period: w[1],
            phase_ip: w[2],
            phase_gd: w[3],
            mr_stft_sc: w[4],
            mr_stft_mag: w[5],
        }
    }
}

/// Component values of one loss evaluation and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub multi_scale: f64,
    pub multi_period: f64,
    pub phase_ip: f64,
    pub phase_gd: f64,
    pub mr_stft_sc: f64,
    pub mr_stft_mag: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const FIELDS: [&'static str; 7] = [
        "multi_scale",
        "multi_period",
        "phase_ip",
        "phase_gd",
        "mr_stft_sc",
        "mr_stft_mag",
        "total",
    ];

    /// Builds a breakdown whose total is the weighted sum of `parts`.
    pub fn from_parts(parts: [f64; 6], weights: &LossWeights) -> Self {
        let total = parts.iter().zip(weights.as_array()).map(|(p, w)| p * w).sum();
        LossBreakdown {
            multi_scale: parts[0],
            multi_period: parts[1],
            phase_ip: parts[2],
            phase_gd: parts[3],
            mr_stft_sc: parts[4],
            mr_stft_mag: parts[5],
            total,
        }
    }

    pub fn parts(&self) -> [f64; 6] {
        [
            self.multi_scale,
            self.multi_period,
            self.phase_ip,
            self.phase_gd,
            self.mr_stft_sc,
            self.mr_stft_mag,
        ]
    }

    pub fn values(&self) -> [f64; 7] {
        let p = self.parts();
        [p[0], p[1], p[2], p[3], p[4], p[5], self.total]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let mut acc = [0.0; 7];
        for it in items {
            for (a, v) in acc.iter_mut().zip(it.values()) {
                *a += v / n;
            }
        }
        Some(LossBreakdown {
            multi_scale: acc[0],
            multi_period: acc[1],
            phase_ip: acc[2],
            phase_gd: acc[3],
            mr_stft_sc: acc[4],
            mr_stft_mag: acc[5],
            total: acc[6],
        })
    }
}

/// Mean over scales of the mean absolute error between max-pooled signals.
pub fn multi_scale<'g, T: Scalar>(enh: Var<'g, T>, clean: Var<'g, T>) -> Var<'g, T> {
    let mut acc: Option<Var<'g, T>> = None;
    for &r in &SCALES {
        let d = enh.max_pool_last(r).sub(clean.max_pool_last(r)).abs().mean();
        acc = Some(match acc {
            Some(a) => a.add(d),
            None => d,
        });
    }
    acc.expect("at least one scale").scale(T::c(1.0 / SCALES.len() as f64))
}

/// Reflect-pads `[B, L]` to a multiple of `p` and reshapes to `[B, rows, p]`.
fn period_rows<'g, T: Scalar>(x: Var<'g, T>, p: usize) -> Var<'g, T> {
    let (nb, n) = (x.shape()[0], x.shape()[1]);
    let extra = (p - n % p) % p;
    let x = if extra > 0 { x.pad_reflect(0, extra) } else { x };
    x.reshape(&[nb, (n + extra) / p, p])
}

/// Sum over periods of the distance between per-row sums.
pub fn multi_period<'g, T: Scalar>(enh: Var<'g, T>, clean: Var<'g, T>, mode: PeriodMode) -> Var<'g, T> {
    let mut acc: Option<Var<'g, T>> = None;
    for &p in &PERIODS {
        let d = match mode {
            PeriodMode::PerRow => {
                let re = period_rows(enh, p).sum_axis(2, false);
                let rc = period_rows(clean, p).sum_axis(2, false);
                rc.sub(re).abs().mean()
            }
            PeriodMode::Literal => {
                let se = period_rows(enh, p).sum_axis(2, false).sum_axis(1, false);
                let sc = period_rows(clean, p).sum_axis(2, false).sum_axis(1, false);
                sc.sub(se).abs().mean()
            }
        };
        acc = Some(match acc {
            Some(a) => a.add(d),
            None => d,
        });
    }
    acc.expect("at least one period")
}

/// Forward difference along the last (frequency) axis with the last column
/// replicated.
pub fn group_delay<'g, T: Scalar>(phase: Var<'g, T>) -> Var<'g, T> {
    let nd = phase.ndim();
    let f = phase.shape()[nd - 1];
    assert!(f >= 2, "group delay needs at least two bins");
    let d = phase.narrow(nd - 1, 1, f - 1).sub(phase.narrow(nd - 1, 0, f - 1));
    let last = d.narrow(nd - 1, f - 2, 1);
    concat(&[d, last], nd - 1)
}

/// Anti-wrapped instantaneous-phase and group-delay distances.
pub fn phase_losses<'g, T: Scalar>(enh_phase: Var<'g, T>, clean_phase: Var<'g, T>) -> (Var<'g, T>, Var<'g, T>) {
    assert_eq!(enh_phase.shape(), clean_phase.shape(), "phase grids must match");
    let ip = clean_phase.sub(enh_phase).anti_wrap().mean();
    let gd = group_delay(clean_phase).sub(group_delay(enh_phase)).anti_wrap().mean();
    (ip, gd)
}

/// Sums over every axis but the first, `[B, ...]` to `[B]`.
fn per_item_sum<'g, T: Scalar>(x: Var<'g, T>) -> Var<'g, T> {
    let nb = x.shape()[0];
    let n = x.value().len() / nb.max(1);
    x.reshape(&[nb, n]).sum_axis(1, false)
}

/// Spectral convergence and log-magnitude distance averaged over the
/// resolutions; both are means over the batch.
pub fn mr_stft<'g, T: Scalar>(enh: Var<'g, T>, clean: Var<'g, T>, plans: &[Rc<StftPlan<T>>]) -> (Var<'g, T>, Var<'g, T>) {
    let eps = T::c(MAG_EPS);
    let mut sc_acc: Option<Var<'g, T>> = None;
    let mut mag_acc: Option<Var<'g, T>> = None;
    for plan in plans {
        let (me, _) = polar(enh, plan);
        let (mc, _) = polar(clean, plan);
        let num = per_item_sum(mc.sub(me).square()).sqrt();
        let den = per_item_sum(mc.square()).sqrt();
        let sc = num.div(den).mean();
        let mag = mc.shift(eps).ln().sub(me.shift(eps).ln()).abs().mean();
        sc_acc = Some(match sc_acc {
            Some(a) => a.add(sc),
            None => sc,
        });
        mag_acc = Some(match mag_acc {
            Some(a) => a.add(mag),
            None => mag,
        });
    }
    let k = T::c(1.0 / plans.len() as f64);
    (sc_acc.expect("resolutions").scale(k), mag_acc.expect("resolutions").scale(k))
}

/// The combined objective with its transforms.
pub struct Objective<T: Scalar> {
    pub weights: LossWeights,
    pub period_mode: PeriodMode,
    pub mr_plans: Vec<Rc<StftPlan<T>>>,
    pub phase_plan: Rc<StftPlan<T>>,
}

/// Evaluated objective: the weighted total as a graph node plus the values.
pub struct LossTerms<'g, T: Scalar> {
    pub total: Var<'g, T>,
    pub breakdown: LossBreakdown,
}

impl<T: Scalar> Objective<T> {
    pub fn new(weights: LossWeights, period_mode: PeriodMode, phase_config: StftConfig) -> Result<Self> {
        let mr_plans = RESOLUTIONS
            .iter()
            .map(|&(n, h, w)| StftPlan::new(StftConfig::new(n, h, w)).map(Rc::new))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Objective {
            weights,
            period_mode,
            mr_plans,
            phase_plan: Rc::new(StftPlan::new(phase_config)?),
        })
    }

    /// Shortest accepted pair length: half the largest window, so that
    /// every resolution still sees two centred frames.
    pub fn min_len(&self) -> usize {
        self.mr_plans.iter().map(|p| p.config.n_fft / 2).max().unwrap_or(1)
    }

    /// Checks shapes and that no clean row is silent.
    pub fn validate(&self, enh: &[usize], clean: &Var<'_, T>) -> Result<()> {
        let cs = clean.shape();
        if enh != cs.as_slice() || cs.len() != 2 {
            return Err(Error::Shape(format!("enhanced {enh:?} vs clean {cs:?}")));
        }
        if cs[1] == 0 || cs[0] == 0 {
            return Err(Error::Empty("waveform pair"));
        }
        if cs[1] < self.min_len() {
            return Err(subaru_core::Error::TooShort {
                needed: self.min_len(),
                got: cs[1],
            }
            .into());
        }
        let v = clean.value();
        for row in v.outer_iter() {
            if row.iter().all(|x| *x == T::zero()) {
                return Err(subaru_core::Error::Silent("spectral convergence").into());
            }
        }
        Ok(())
    }

    /// All six components on `enh, clean [B, L]`; `enh_phase` is the enhanced
    /// phase grid, or `None` to take it from the STFT of `enh`.
    pub fn evaluate<'g>(&self, enh: Var<'g, T>, clean: Var<'g, T>, enh_phase: Option<Var<'g, T>>) -> Result<LossTerms<'g, T>> {
        self.validate(&enh.shape(), &clean)?;
        let ms = multi_scale(enh, clean);
        let mp = multi_period(enh, clean, self.period_mode);
        let (_, cp) = polar(clean, &self.phase_plan);
        let ep = match enh_phase {
            Some(p) => p,
            None => polar(enh, &self.phase_plan).1,
        };
        if ep.shape() != cp.shape() {
            return Err(Error::Shape(format!("phase grid {:?} vs {:?}", ep.shape(), cp.shape())));
        }
        let (ip, gd) = phase_losses(ep, cp);
        let (sc, mag) = mr_stft(enh, clean, &self.mr_plans);
        let parts = [ms, mp, ip, gd, sc, mag];
        let w = self.weights.as_array();
        let mut total = parts[0].scale(T::c(w[0]));
        for (p, &wi) in parts.iter().zip(&w).skip(1) {
            total = total.add(p.scale(T::c(wi)));
        }
        let values = parts.map(|p| p.item().f64());
        let breakdown = LossBreakdown::from_parts(values, &self.weights);
        Ok(LossTerms { total, breakdown })
    }
}

/// Loss values of an enhanced clip against its reference, with the enhanced
/// phase taken from the clip itself.
pub fn evaluate_pair(enhanced: &AudioClip, clean: &AudioClip, weights: &LossWeights, mode: PeriodMode) -> Result<LossBreakdown> {
    if enhanced.sample_rate != clean.sample_rate {
        return Err(subaru_core::Error::RateMismatch(enhanced.sample_rate, clean.sample_rate).into());
    }
    if enhanced.len() != clean.len() {
        return Err(subaru_core::Error::LengthMismatch(enhanced.len(), clean.len()).into());
    }
    let obj = Objective::<f64>::new(*weights, mode, StftConfig::APEN)?;
    let store = ParamStore::<f64>::new();
    let g = Graph::inference(&store);
    let e = g.input(batch(&[&enhanced.samples])?);
    let c = g.input(batch(&[&clean.samples])?);
    Ok(obj.evaluate(e, c, None)?.breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, ArrayD};
    use proptest::prelude::*;

    fn arr(rows: &[Vec<f64>]) -> ArrayD<f64> {
        Array2::from_shape_fn((rows.len(), rows[0].len()), |(b, i)| rows[b][i]).into_dyn()
    }

    fn with<R>(f: impl for<'g> FnOnce(&'g Graph<f64>) -> R) -> R {
        let store = ParamStore::new();
        let g = Graph::inference(&store);
        f(&g)
    }

    fn pool_oracle(x: &[f64], r: usize) -> Vec<f64> {
        (0..x.len() / r)
            .map(|j| x[j * r..(j + 1) * r].iter().cloned().fold(f64::MIN, f64::max))
            .collect()
    }

    fn multi_scale_oracle(e: &[f64], c: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in SCALES {
            let (pe, pc) = (pool_oracle(e, r), pool_oracle(c, r));
            acc += pe.iter().zip(&pc).map(|(a, b)| (a - b).abs()).sum::<f64>() / pe.len() as f64;
        }
        acc / 3.0
    }

    fn reflect_pad(x: &[f64], p: usize) -> Vec<f64> {
        let n = x.len();
        let extra = (p - n % p) % p;
        let mut v = x.to_vec();
        for i in 0..extra {
            v.push(x[n - 2 - i]);
        }
        v
    }

    fn multi_period_oracle(e: &[f64], c: &[f64]) -> f64 {
        let mut acc = 0.0;
        for p in PERIODS {
            let (pe, pc) = (reflect_pad(e, p), reflect_pad(c, p));
            let rows = pe.len() / p;
            let mut s = 0.0;
            for r in 0..rows {
                let a: f64 = pe[r * p..(r + 1) * p].iter().sum();
                let b: f64 = pc[r * p..(r + 1) * p].iter().sum();
                s += (b - a).abs();
            }
            acc += s / rows as f64;
        }
        acc
    }

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn multi_scale_matches_loop_oracle() {
        let (e, c) = (lcg(1, 16), lcg(2, 16));
        let v = with(|g| multi_scale(g.input(arr(&[e.clone()])), g.input(arr(&[c.clone()]))).item());
        assert!((v - multi_scale_oracle(&e, &c)).abs() < 1e-9);
    }

    #[test]
    fn multi_scale_constant_offset() {
        let c: Vec<f64> = lcg(3, 64).iter().map(|v| v * 0.4).collect();
        let e: Vec<f64> = c.iter().map(|v| v + 0.1).collect();
        let v = with(|g| multi_scale(g.input(arr(&[e.clone()])), g.input(arr(&[c.clone()]))).item());
        assert!((v - 0.1).abs() < 1e-12);
    }

    #[test]
    fn multi_period_matches_loop_oracle() {
        let (e, c) = (lcg(4, 70), lcg(5, 70));
        let v = with(|g| multi_period(g.input(arr(&[e.clone()])), g.input(arr(&[c.clone()])), PeriodMode::PerRow).item());
        assert!((v - multi_period_oracle(&e, &c)).abs() < 1e-9);
        let (e, c) = (lcg(6, 33), lcg(7, 33));
        let v = with(|g| multi_period(g.input(arr(&[e.clone()])), g.input(arr(&[c.clone()])), PeriodMode::PerRow).item());
        assert!((v - multi_period_oracle(&e, &c)).abs() < 1e-9);
    }

    #[test]
    fn multi_period_constant_rows() {
        let c = 0.3;
        let v = with(|g| multi_period(g.input(arr(&[vec![c; 35]])), g.input(arr(&[vec![0.0; 35]])), PeriodMode::PerRow).item());
        assert!((v - 12.0 * c).abs() < 1e-12);
    }

    #[test]
    fn literal_period_terms_coincide() {
        let (e, c) = (lcg(8, 70), lcg(9, 70));
        let v = with(|g| multi_period(g.input(arr(&[e.clone()])), g.input(arr(&[c.clone()])), PeriodMode::Literal).item());
        let d = (c.iter().sum::<f64>() - e.iter().sum::<f64>()).abs();
        assert!((v - 2.0 * d).abs() < 1e-9);
    }

    #[test]
    fn group_delay_of_linear_phase() {
        let ph = Array2::from_shape_fn((3, 6), |(_, f)| 0.3 * f as f64).into_dyn();
        let gd = with(|g| group_delay(g.input(ph.clone())).value().as_ref().clone());
        assert!(gd.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn phase_offsets() {
        let cp = Array2::from_shape_fn((4, 9), |(t, f)| ((t * 7 + f * 3) % 11) as f64 * 0.5 - 2.5).into_dyn();
        let (ip, gd) = with(|g| {
            let (a, b) = phase_losses(g.input(cp.mapv(|v| v + 2.0 * std::f64::consts::PI)), g.input(cp.clone()));
            (a.item(), b.item())
        });
        assert!(ip.abs() < 1e-9 && gd.abs() < 1e-9);
        let (ip, gd) = with(|g| {
            let (a, b) = phase_losses(g.input(cp.mapv(|v| v + std::f64::consts::PI)), g.input(cp.clone()));
            (a.item(), b.item())
        });
        assert!((ip - std::f64::consts::PI).abs() < 1e-9);
        assert!(gd.abs() < 1e-9);
    }

    #[test]
    fn breakdown_sums_components() {
        let b = LossBreakdown::from_parts([0.1, 0.2, 0.3, 0.1, 0.2, 0.1], &LossWeights::default());
        assert!((b.total - 1.0).abs() < 1e-12);
        let w = LossWeights {
            phase_ip: 2.0,
            ..Default::default()
        };
        let b = LossBreakdown::from_parts([0.1, 0.2, 0.3, 0.1, 0.2, 0.1], &w);
        assert!((b.total - 1.3).abs() < 1e-12);
    }

    fn ms(e: &[f64], c: &[f64]) -> f64 {
        with(|g| multi_scale(g.input(arr(&[e.to_vec()])), g.input(arr(&[c.to_vec()]))).item())
    }

    fn mp(e: &[f64], c: &[f64]) -> f64 {
        with(|g| multi_period(g.input(arr(&[e.to_vec()])), g.input(arr(&[c.to_vec()])), PeriodMode::PerRow).item())
    }

    proptest! {
        #[test]
        fn time_losses_lipschitz(seed in 0u64..1000, delta in -0.05f64..0.05) {
            let c = lcg(seed, 70);
            let e = lcg(seed + 1, 70);
            let e2: Vec<f64> = e.iter().map(|v| v + delta).collect();
            prop_assert!((ms(&e, &c) - ms(&e2, &c)).abs() <= delta.abs() + 1e-12);
            prop_assert!((mp(&e, &c) - mp(&e2, &c)).abs() <= 12.0 * delta.abs() + 1e-12);
        }
    }
}
