//! Mesoband noise: wider than one code line spacing, narrow next to the
//! 2 MHz main lobe.
//!
//! Across such a band the code envelope is treated as flat at its value at
//! the band center, and each tone's residual to its nearest line is taken as
//! uniform on `[0, 500 Hz]`. With `N` tones of power `P0 = P / N` the
//! correlator output is
//!
//! ```text
//! W = s * sqrt(2 P0) * A0 sinc(pi fc Ta) * sqrt(1 kHz) * sum_n sinc(pi df_n Td) exp(j theta_n)
//! ```
//!
//! and, with independent tones, `E|W|^2 = s^2 * 2 P * line_power(fc) * E[sinc^2(pi df Td)]`.
//! The mean power is independent of `N`, so doubling the bandwidth at a fixed
//! density costs 3 dB and moving the center follows the envelope.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ReceiverParams;
use crate::cacode::{SincEnvelope, LINE_SPACING_HZ};
use crate::error::{invalid, Error, Result};
use crate::quad;
use crate::units::sinc;

/// Amplitude factor `s` applied to `sqrt(2 P0)` in the mesoband sum. One
/// makes the model the tone-by-tone sum of single-tone residues, which is
/// what the time-domain correlator reproduces.
pub const MESOBAND_AMPLITUDE_SCALE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesoband {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub total_power_w: f64,
    pub n_tones: usize,
}

impl Mesoband {
    /// A continuous band seen by the integrator as `bw * Td` lines.
    pub fn continuous(center_hz: f64, bandwidth_hz: f64, total_power_w: f64, rx: &ReceiverParams) -> Self {
        let n_tones = (bandwidth_hz * rx.integration_time_s).round().max(1.0) as usize;
        Self {
            center_hz,
            bandwidth_hz,
            total_power_w,
            n_tones,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MesobandMode {
    Expectation,
    MonteCarlo { realizations: usize, seed: u64 },
}

/// `E[sinc^2(pi df Td)]` for `df` uniform on `[0, 500 Hz]`.
pub fn mean_residual_coupling(integration_time_s: f64) -> f64 {
    let half = LINE_SPACING_HZ / 2.0;
    let integral = quad::integrate(|df| sinc(PI * df * integration_time_s).powi(2), 0.0, half, 10.0, 1e-12);
    integral / half
}

pub fn mesoband_correlator_power(
    band: &Mesoband,
    env: &SincEnvelope,
    rx: &ReceiverParams,
    mode: MesobandMode,
) -> Result<f64> {
    if !(band.bandwidth_hz >= LINE_SPACING_HZ) {
        return Err(Error::NotMesoband {
            bandwidth_hz: band.bandwidth_hz,
        });
    }
    if !(band.total_power_w >= 0.0 && band.total_power_w.is_finite()) {
        return Err(invalid(format!(
            "total power must be non-negative, got {}",
            band.total_power_w
        )));
    }
    if band.n_tones == 0 {
        return Err(invalid("mesoband needs at least one tone"));
    }
    let per_tone = band.total_power_w / band.n_tones as f64;
    let envelope = env.line_power(band.center_hz);
    let scale = MESOBAND_AMPLITUDE_SCALE.powi(2) * 2.0 * per_tone * envelope;
    match mode {
        MesobandMode::Expectation => Ok(scale * band.n_tones as f64 * mean_residual_coupling(rx.integration_time_s)),
        MesobandMode::MonteCarlo { realizations, seed } => {
            if realizations == 0 {
                return Err(invalid("at least one realization is required"));
            }
            let half = LINE_SPACING_HZ / 2.0;
            let mut total = 0.0;
            for r in 0..realizations {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                let mut sum = Complex64::new(0.0, 0.0);
                for _ in 0..band.n_tones {
                    let df = rng.random_range(0.0..=half);
                    let theta = rng.random_range(0.0..TAU);
                    sum += Complex64::from_polar(sinc(PI * df * rx.integration_time_s), theta);
                }
                total += sum.norm_sqr();
            }
            Ok(scale * total / realizations as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::ratio_to_db;

    fn band(center: f64, bw: f64, p: f64) -> Mesoband {
        Mesoband {
            center_hz: center,
            bandwidth_hz: bw,
            total_power_w: p,
            n_tones: 42,
        }
    }

    #[test]
    fn mean_coupling_matches_closed_form() {
        // (1 / X) * integral_0^X sin^2 u / u^2 du with X = 2.5 pi, via
        // integral = Si(2X) - sin^2(X) / X and Si(5 pi) = 1.63396...
        let x = 2.5 * PI;
        let si_5pi = 1.633_964_846_102_835_5;
        let expected = (si_5pi - x.sin().powi(2) / x) / x;
        assert!((mean_residual_coupling(5e-3) - expected).abs() < 1e-9);
    }

    #[test]
    fn bandwidth_doubling_at_fixed_density() {
        let env = SincEnvelope::default();
        let rx = ReceiverParams::default();
        let a = mesoband_correlator_power(&band(0.0, 20e3, 1e-12), &env, &rx, MesobandMode::Expectation).unwrap();
        let b = mesoband_correlator_power(&band(0.0, 40e3, 2e-12), &env, &rx, MesobandMode::Expectation).unwrap();
        assert!((ratio_to_db(b / a) - ratio_to_db(2.0)).abs() < 1e-9);
    }

    #[test]
    fn center_shift_follows_envelope() {
        let env = SincEnvelope::default();
        let rx = ReceiverParams::default();
        let a = mesoband_correlator_power(&band(0.0, 20e3, 1e-12), &env, &rx, MesobandMode::Expectation).unwrap();
        let b = mesoband_correlator_power(&band(550e3, 20e3, 1e-12), &env, &rx, MesobandMode::Expectation).unwrap();
        assert!((ratio_to_db(b / a) - env.relative_db(0.0, 550e3)).abs() < 1e-9);
    }

    #[test]
    fn zero_power_and_narrow_band() {
        let env = SincEnvelope::default();
        let rx = ReceiverParams::default();
        assert_eq!(
            mesoband_correlator_power(&band(0.0, 20e3, 0.0), &env, &rx, MesobandMode::Expectation).unwrap(),
            0.0
        );
        assert!(matches!(
            mesoband_correlator_power(&band(0.0, 999.0, 1.0), &env, &rx, MesobandMode::Expectation),
            Err(Error::NotMesoband { .. })
        ));
    }

    #[test]
    fn monte_carlo_converges_to_expectation() {
        let env = SincEnvelope::default();
        let rx = ReceiverParams::default();
        let b = band(0.0, 20e3, 1e-12);
        let e = mesoband_correlator_power(&b, &env, &rx, MesobandMode::Expectation).unwrap();
        let m = mesoband_correlator_power(
            &b,
            &env,
            &rx,
            MesobandMode::MonteCarlo {
                realizations: 1000,
                seed: 11,
            },
        )
        .unwrap();
        assert!(ratio_to_db(m / e).abs() < 0.5);
        let again = mesoband_correlator_power(
            &b,
            &env,
            &rx,
            MesobandMode::MonteCarlo {
                realizations: 1000,
                seed: 11,
            },
        )
        .unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn continuous_tone_count() {
        let b = Mesoband::continuous(0.0, 20e3, 1.0, &ReceiverParams::default());
        assert_eq!(b.n_tones, 100);
    }
}
