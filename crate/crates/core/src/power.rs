//! ADC power: measured table, savings ratios and the ideal `k * fs * 2^N`
//! model with a least-squares fit against the measurements.

use crate::error::{Error, Result};

/// Supply voltage of the measured ADC.
pub const SUPPLY_VOLTS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRecord {
    pub rate: u32,
    pub bits: u32,
    pub current_ua: f64,
    pub power_mw: f64,
}

const fn rec(rate: u32, bits: u32, current_ua: f64, power_mw: f64) -> PowerRecord {
    PowerRecord {
        rate,
        bits,
        current_ua,
        power_mw,
    }
}

/// ADC-only consumption at 3.0 V.
pub const POWER_TABLE: [PowerRecord; 12] = [
    rec(4000, 8, 234.0, 0.702),
    rec(4000, 10, 248.0, 0.744),
    rec(4000, 12, 275.0, 0.825),
    rec(8000, 8, 319.0, 0.957),
    rec(8000, 10, 338.0, 1.014),
    rec(8000, 12, 375.0, 1.125),
    rec(16000, 8, 489.0, 1.467),
    rec(16000, 10, 518.0, 1.554),
    rec(16000, 12, 575.0, 1.725),
    rec(24000, 8, 659.0, 1.977),
    rec(24000, 10, 698.0, 2.094),
    rec(24000, 12, 775.0, 2.325),
];

pub fn power_record(rate: u32, bits: u32) -> Result<&'static PowerRecord> {
    POWER_TABLE
        .iter()
        .find(|r| r.rate == rate && r.bits == bits)
        .ok_or(Error::OffGrid { rate, bits })
}

pub fn power_lookup(rate: u32, bits: u32) -> Result<f64> {
    Ok(power_record(rate, bits)?.power_mw)
}

/// Power of the `high` capture setting divided by that of `low`.
pub fn savings_ratio(high: (u32, u32), low: (u32, u32)) -> Result<f64> {
    Ok(power_lookup(high.0, high.1)? / power_lookup(low.0, low.1)?)
}

pub fn power_model_estimate(k: f64, rate: f64, bits: u32) -> f64 {
    k * rate * 2f64.powi(bits as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFit {
    pub k: f64,
    /// (rate, bits, measured mW, modelled mW, relative residual)
    pub rows: Vec<(u32, u32, f64, f64, f64)>,
    pub max_relative_residual: f64,
}

impl PowerFit {
    /// True when the ideal model misses some measurement by more than `tol`
    /// (relative).
    pub fn diverges(&self, tol: f64) -> bool {
        self.max_relative_residual > tol
    }

    pub fn report(&self) -> String {
        let mut s = format!("least-squares k = {:.6e} mW/(Hz*level)\n", self.k);
        s += &format!("{:>7} {:>5} {:>10} {:>10} {:>9}\n", "rate", "bits", "measured", "model", "rel.err");
        for &(rate, bits, m, p, r) in &self.rows {
            s += &format!("{rate:>7} {bits:>5} {m:>10.3} {p:>10.3} {:>8.1}%\n", 100.0 * r);
        }
        s += &format!(
            "max relative residual {:.1}%{}\n",
            100.0 * self.max_relative_residual,
            if self.diverges(0.1) {
                " (measurements do not follow k*fs*2^N)"
            } else {
                ""
            }
        );
        s
    }
}

/// Fits `P = k * fs * 2^N` to the table through the origin.
pub fn fit_power_model() -> PowerFit {
    let xs: Vec<f64> = POWER_TABLE
        .iter()
        .map(|r| r.rate as f64 * 2f64.powi(r.bits as i32))
        .collect();
    let num: f64 = POWER_TABLE.iter().zip(&xs).map(|(r, x)| r.power_mw * x).sum();
    let den: f64 = xs.iter().map(|x| x * x).sum();
    let k = num / den;
    let rows: Vec<_> = POWER_TABLE
        .iter()
        .map(|r| {
            let p = power_model_estimate(k, r.rate as f64, r.bits);
            (r.rate, r.bits, r.power_mw, p, (p - r.power_mw) / r.power_mw)
        })
        .collect();
    let max_relative_residual = rows.iter().map(|r| r.4.abs()).fold(0.0, f64::max);
    PowerFit {
        k,
        rows,
        max_relative_residual,
    }
}

/// Parses `rate:bits`, e.g. `24000:12`.
pub fn parse_setting(s: &str) -> Result<(u32, u32)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidParameter(format!("expected rate:bits, got {s:?}")))?;
    let rate = a
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad rate in {s:?}")))?;
    let bits = b
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad bit depth in {s:?}")))?;
    Ok((rate, bits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups() {
        assert_eq!(power_lookup(4000, 8).unwrap(), 0.702);
        assert_eq!(power_lookup(24000, 12).unwrap(), 2.325);
        assert_eq!(power_lookup(16000, 10).unwrap(), 1.554);
        assert!(matches!(power_lookup(12000, 8), Err(Error::OffGrid { .. })));
        assert!(power_lookup(4000, 16).is_err());
    }

    #[test]
    fn table_is_consistent_with_supply() {
        for r in &POWER_TABLE {
            assert!((r.current_ua * SUPPLY_VOLTS / 1000.0 - r.power_mw).abs() < 1e-9);
        }
    }

    #[test]
    fn monotone_along_both_axes() {
        let rates = [4000, 8000, 16000, 24000];
        let bits = [8, 10, 12];
        for &b in &bits {
            for w in rates.windows(2) {
                assert!(power_lookup(w[1], b).unwrap() > power_lookup(w[0], b).unwrap());
            }
        }
        for &r in &rates {
            for w in bits.windows(2) {
                assert!(power_lookup(r, w[1]).unwrap() > power_lookup(r, w[0]).unwrap());
            }
        }
    }

    #[test]
    fn ratios() {
        assert!((savings_ratio((24000, 12), (4000, 8)).unwrap() - 3.31).abs() < 0.005);
        assert!((savings_ratio((16000, 12), (4000, 8)).unwrap() - 2.457).abs() < 0.001);
        assert_eq!(savings_ratio((8000, 10), (8000, 10)).unwrap(), 1.0);
    }

    #[test]
    fn ideal_model() {
        let p = power_model_estimate(1e-9, 4000.0, 8);
        assert!((power_model_estimate(1e-9, 8000.0, 8) / p - 2.0).abs() < 1e-12);
        assert!((power_model_estimate(1e-9, 4000.0, 12) / p - 16.0).abs() < 1e-12);
        let fit = fit_power_model();
        assert!(fit.k > 0.0);
        assert!(fit.diverges(0.5));
        assert!(fit.report().contains("do not follow"));
    }

    #[test]
    fn parse() {
        assert_eq!(parse_setting("24000:12").unwrap(), (24000, 12));
        assert!(parse_setting("24000").is_err());
        assert!(parse_setting("a:b").is_err());
    }
}
