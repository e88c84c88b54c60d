//! Second-order IIR sections (transposed direct form II).

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn normalized(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Biquad {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [a1 / a0, a2 / a0],
        }
    }

    pub fn lowpass(fc: f64, rate: f64, q: f64) -> Self {
        let w = 2.0 * PI * fc / rate;
        let (s, c) = w.sin_cos();
        let alpha = s / (2.0 * q);
        let b1 = 1.0 - c;
        Self::normalized([b1 / 2.0, b1, b1 / 2.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn highpass(fc: f64, rate: f64, q: f64) -> Self {
        let w = 2.0 * PI * fc / rate;
        let (s, c) = w.sin_cos();
        let alpha = s / (2.0 * q);
        let b1 = 1.0 + c;
        Self::normalized([b1 / 2.0, -b1, b1 / 2.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    /// Band-pass with 0 dB gain at the centre frequency.
    pub fn bandpass(fc: f64, rate: f64, q: f64) -> Self {
        let w = 2.0 * PI * fc / rate;
        let (s, c) = w.sin_cos();
        let alpha = s / (2.0 * q);
        Self::normalized([alpha, 0.0, -alpha], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    /// Peaking equaliser section with `gain_db` at `fc`.
    pub fn peaking(fc: f64, rate: f64, q: f64, gain_db: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w = 2.0 * PI * fc / rate;
        let (s, c) = w.sin_cos();
        let alpha = s / (2.0 * q);
        Self::normalized(
            [1.0 + alpha * a, -2.0 * c, 1.0 - alpha * a],
            1.0 + alpha / a,
            -2.0 * c,
            1.0 - alpha / a,
        )
    }

    /// Butterworth high-pass of even `order` via the bilinear transform with
    /// a pre-warped cutoff.
    pub fn butterworth_highpass(cutoff: f64, rate: f64, order: usize) -> Vec<Biquad> {
        let k = (PI * cutoff / rate).tan();
        (1..=order / 2)
            .map(|i| {
                let q = 1.0 / (2.0 * ((2 * i - 1) as f64 * PI / (2 * order) as f64).sin());
                let norm = 1.0 + k / q + k * k;
                let b0 = 1.0 / norm;
                Biquad {
                    b: [b0, -2.0 * b0, b0],
                    a: [2.0 * (k * k - 1.0) / norm, (1.0 - k / q + k * k) / norm],
                }
            })
            .collect()
    }

    pub fn butterworth_lowpass(cutoff: f64, rate: f64, order: usize) -> Vec<Biquad> {
        (1..=order / 2)
            .map(|i| {
                let q = 1.0 / (2.0 * ((2 * i - 1) as f64 * PI / (2 * order) as f64).sin());
                Biquad::lowpass(cutoff, rate, q)
            })
            .collect()
    }

    pub fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let inp = *v;
            let out = self.b[0] * inp + z1;
            z1 = self.b[1] * inp - self.a[0] * out + z2;
            z2 = self.b[2] * inp - self.a[1] * out;
            *v = out;
        }
    }

    /// Magnitude response at `f` Hz.
    pub fn gain(&self, f: f64, rate: f64) -> f64 {
        let w = 2.0 * PI * f / rate;
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * z1.0 + self.b[2] * z2.0,
            self.b[1] * z1.1 + self.b[2] * z2.1,
        );
        let den = (1.0 + self.a[0] * z1.0 + self.a[1] * z2.0, self.a[0] * z1.1 + self.a[1] * z2.1);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }
}

pub fn run_cascade(sections: &[Biquad], x: &mut [f64]) {
    for s in sections {
        s.run(x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn butterworth_highpass_response() {
        let rate = 16000.0;
        let s = Biquad::butterworth_highpass(100.0, rate, 8);
        let g = |f: f64| s.iter().map(|b| b.gain(f, rate)).product::<f64>();
        assert!((20.0 * g(100.0).log10() + 3.0103).abs() < 0.01);
        assert!(20.0 * g(50.0).log10() < -40.0);
        assert!(20.0 * g(200.0).log10() > -0.01);
    }

    #[test]
    fn lowpass_and_bandpass_shapes() {
        let rate = 16000.0;
        let lp = Biquad::lowpass(1000.0, rate, std::f64::consts::FRAC_1_SQRT_2);
        assert!((lp.gain(10.0, rate) - 1.0).abs() < 1e-3);
        assert!(lp.gain(6000.0, rate) < 0.05);
        let bp = Biquad::bandpass(2000.0, rate, 5.0);
        assert!((bp.gain(2000.0, rate) - 1.0).abs() < 1e-9);
        assert!(bp.gain(500.0, rate) < 0.1);
        let pk = Biquad::peaking(300.0, rate, 1.0, 6.0);
        assert!((20.0 * pk.gain(300.0, rate).log10() - 6.0).abs() < 1e-6);
    }
}
