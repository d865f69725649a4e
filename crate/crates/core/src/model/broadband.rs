//! Broadband shape penalty.
//!
//! An arbitrary broadband density `P(f)` is compared with a flat reference
//! density `P0` by weighting the amplitude spectrum with the code envelope:
//!
//! ```text
//! penalty = 10 log10( [integral sqrt(P(f)) sinc(pi f Ta) df]^2 / [integral sqrt(P0) sinc(pi f Ta) df]^2 )
//! ```
//!
//! Positive values mean the shape hurts more than the flat reference. Both
//! integrals use the same panels (at most 10 kHz wide, so every sinc lobe is
//! resolved) and adaptive Simpson refinement.

use std::f64::consts::PI;

use crate::cacode::SincEnvelope;
use crate::error::{invalid, Result};
use crate::quad;
use crate::units::sinc;

/// Half-width of the default 50 MHz characterization band.
pub const DEFAULT_HALF_BAND_HZ: f64 = 25e6;
const MAX_STEP_HZ: f64 = 10e3;

/// A power spectral density in W/Hz over offset from the carrier.
pub enum Psd<'a> {
    Function(&'a dyn Fn(f64) -> f64),
    /// `(offset_hz, W/Hz)` samples in ascending offset. `sqrt(P)` is
    /// interpolated linearly between samples and is zero outside them.
    Table(&'a [(f64, f64)]),
}

impl Psd<'_> {
    fn validate(&self) -> Result<()> {
        if let Psd::Table(rows) = self {
            for (i, &(f, p)) in rows.iter().enumerate() {
                if !(p >= 0.0) || !f.is_finite() {
                    return Err(invalid(format!("PSD sample {i} at {f} Hz is {p}")));
                }
                if i > 0 && rows[i - 1].0 >= f {
                    return Err(invalid(format!("PSD table is not strictly increasing at row {i}")));
                }
            }
        }
        Ok(())
    }

    fn sqrt_at(&self, f: f64) -> f64 {
        match self {
            Psd::Function(g) => g(f).max(0.0).sqrt(),
            Psd::Table(rows) => {
                let (first, last) = match (rows.first(), rows.last()) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return 0.0,
                };
                if f < first.0 || f > last.0 {
                    return 0.0;
                }
                let i = rows.partition_point(|r| r.0 <= f);
                if i == 0 {
                    return first.1.sqrt();
                }
                if i == rows.len() {
                    return last.1.sqrt();
                }
                let (f0, p0) = rows[i - 1];
                let (f1, p1) = rows[i];
                let t = (f - f0) / (f1 - f0);
                p0.sqrt() * (1.0 - t) + p1.sqrt() * t
            }
        }
    }
}

/// `integral_{-half}^{half} sqrt(P(f)) sinc(pi f Ta) df`.
pub fn envelope_amplitude_integral(psd: &Psd<'_>, env: &SincEnvelope, half_band_hz: f64) -> Result<f64> {
    psd.validate()?;
    if !(half_band_hz > 0.0) {
        return Err(invalid("integration band must be positive"));
    }
    let mut negative = None;
    let ta = env.chip_duration_s();
    let value = quad::integrate(
        |f| {
            if let Psd::Function(g) = psd {
                let p = g(f);
                if p < 0.0 && negative.is_none() {
                    negative = Some((f, p));
                }
            }
            psd.sqrt_at(f) * sinc(PI * f * ta)
        },
        -half_band_hz,
        half_band_hz,
        MAX_STEP_HZ,
        1e-10,
    );
    if let Some((f, p)) = negative {
        return Err(invalid(format!("PSD is negative ({p}) at {f} Hz")));
    }
    Ok(value)
}

/// Shape penalty of `psd` against the flat `baseline_psd_w_per_hz`, in dB.
pub fn broadband_penalty_db(
    psd: &Psd<'_>,
    baseline_psd_w_per_hz: f64,
    env: &SincEnvelope,
    half_band_hz: f64,
) -> Result<f64> {
    if !(baseline_psd_w_per_hz > 0.0) {
        return Err(invalid("baseline PSD must be positive"));
    }
    let flat = |_f: f64| baseline_psd_w_per_hz;
    let num = envelope_amplitude_integral(psd, env, half_band_hz)?;
    let den = envelope_amplitude_integral(&Psd::Function(&flat), env, half_band_hz)?;
    Ok(20.0 * (num.abs() / den.abs()).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_scaling() {
        let env = SincEnvelope::default();
        let p0 = 1e-18;
        let same = |_f: f64| p0;
        let four = |_f: f64| 4.0 * p0;
        let d = broadband_penalty_db(&Psd::Function(&same), p0, &env, DEFAULT_HALF_BAND_HZ).unwrap();
        assert!(d.abs() < 1e-9);
        let d = broadband_penalty_db(&Psd::Function(&four), p0, &env, DEFAULT_HALF_BAND_HZ).unwrap();
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn flat_integral_matches_sine_integral() {
        // integral_{-F}^{F} sinc(pi f Ta) df = (2 / (pi Ta)) Si(pi F Ta);
        // at F Ta = 1, Si(pi) = 1.851937052...
        let env = SincEnvelope::default();
        let one = |_f: f64| 1.0;
        let ta = env.chip_duration_s();
        let v = envelope_amplitude_integral(&Psd::Function(&one), &env, 1.0 / ta).unwrap();
        let expected = 2.0 / (PI * ta) * 1.851_937_051_982_466;
        assert!((v / expected - 1.0).abs() < 1e-9);
    }

    #[test]
    fn table_interpolation_and_validation() {
        let env = SincEnvelope::default();
        let rows = [(-1e6, 1e-18), (1e6, 1e-18)];
        let f = |x: f64| if x.abs() <= 1e6 { 1e-18 } else { 0.0 };
        let a = envelope_amplitude_integral(&Psd::Table(&rows), &env, 25e6).unwrap();
        let b = envelope_amplitude_integral(&Psd::Function(&f), &env, 25e6).unwrap();
        assert!((a / b - 1.0).abs() < 1e-6);
        let bad = [(0.0, -1.0)];
        assert!(broadband_penalty_db(&Psd::Table(&bad), 1.0, &env, 25e6).is_err());
        let neg = |_f: f64| -1.0;
        assert!(broadband_penalty_db(&Psd::Function(&neg), 1.0, &env, 25e6).is_err());
    }
}
