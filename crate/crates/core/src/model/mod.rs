//! Correlator-output interference model.
//!
//! After the replica is aligned, a tone at offset `f` leaves a residue at the
//! correlator output through the code line `k` nearest to it:
//!
//! ```text
//! a = sqrt(2 P) * conj(C_k) * sinc(pi * df * Td) * exp(j theta)
//! ```
//!
//! where `df = f - k * 1 kHz` and `Td` is the coherent integration time. The
//! residues of a multitone interferer add as complex numbers before the
//! magnitude is taken, and the squared sum joins the thermal noise in the
//! SNR denominator. C/N0 is that SNR referred to a `1 / Ts` bandwidth.
//!
//! [`Coupling::Envelope`] swaps `C_k` for the smooth sinc envelope so the
//! result no longer depends on a particular satellite's code.

pub mod broadband;
pub mod mesoband;

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cacode::{nearest_line, CodeSpectrum, SincEnvelope, LINE_SPACING_HZ};
use crate::error::{invalid, Error, Result};
use crate::noise::{NoiseSpectrum, Tone};
use crate::units::{dbm_to_watts, ratio_to_db, sinc};

pub use broadband::{broadband_penalty_db, envelope_amplitude_integral, Psd, DEFAULT_HALF_BAND_HZ};
pub use mesoband::{
    mean_residual_coupling, mesoband_correlator_power, Mesoband, MesobandMode, MESOBAND_AMPLITUDE_SCALE,
};

/// Receiver-side constants of the model. Powers are referred to the
/// correlator input, i.e. after the front-end gain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverParams {
    /// Coherent integration time `Td`.
    pub integration_time_s: f64,
    /// Output sample period `Ts`; C/N0 is the SNR over a `1 / Ts` bandwidth.
    pub output_period_s: f64,
    /// Thermal noise power in the `1 / Ts` correlator bandwidth.
    pub thermal_noise_w: f64,
    pub signal_power_w: f64,
    /// Residual Doppler between signal and replica.
    pub doppler_hz: f64,
    /// Gain between the antenna reference plane and the correlator input.
    pub front_end_gain_db: f64,
    /// Lowest acceptable C/N0.
    pub cn0_floor_db_hz: f64,
}

impl Default for ReceiverParams {
    /// -128.5 dBm signal and -172 dBm/Hz noise density at the antenna, both
    /// lifted by a 55 dB front end: 43.5 dB-Hz without interference.
    fn default() -> Self {
        let integration_time_s = 5e-3;
        Self {
            integration_time_s,
            output_period_s: integration_time_s,
            thermal_noise_w: dbm_to_watts(-117.0) / integration_time_s,
            signal_power_w: dbm_to_watts(-73.5),
            doppler_hz: 0.0,
            front_end_gain_db: 55.0,
            cn0_floor_db_hz: 35.0,
        }
    }
}

impl ReceiverParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("integration time", self.integration_time_s),
            ("output period", self.output_period_s),
            ("thermal noise power", self.thermal_noise_w),
            ("signal power", self.signal_power_w),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [
            ("Doppler", self.doppler_hz),
            ("front-end gain", self.front_end_gain_db),
            ("C/N0 floor", self.cn0_floor_db_hz),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Set the thermal term from a noise density at the correlator input.
    pub fn with_noise_density_dbm_hz(mut self, dbm_per_hz: f64) -> Self {
        self.thermal_noise_w = dbm_to_watts(dbm_per_hz) / self.output_period_s;
        self
    }

    pub fn with_signal_power_dbm(mut self, dbm: f64) -> Self {
        self.signal_power_w = dbm_to_watts(dbm);
        self
    }

    /// Set `Td` and `Ts` together, keeping the noise density fixed.
    pub fn with_integration_time(mut self, seconds: f64) -> Self {
        let density = self.noise_density_w_per_hz();
        self.integration_time_s = seconds;
        self.output_period_s = seconds;
        self.thermal_noise_w = density / seconds;
        self
    }

    pub fn noise_density_w_per_hz(&self) -> f64 {
        self.thermal_noise_w * self.output_period_s
    }

    /// `sinc^2(pi * doppler * Td)`; exactly one when the replica is on frequency.
    pub fn doppler_factor(&self) -> f64 {
        if self.doppler_hz == 0.0 {
            1.0
        } else {
            sinc(PI * self.doppler_hz * self.integration_time_s).powi(2)
        }
    }

    /// C/N0 with no interference.
    pub fn clean_cn0_db_hz(&self) -> f64 {
        cn0_from_interference(0.0, self).cn0_db_hz
    }

    /// Largest interference power that keeps C/N0 at or above `threshold_db_hz`.
    /// Negative when the threshold is out of reach even without interference.
    pub fn interference_budget_w(&self, threshold_db_hz: f64) -> f64 {
        let snr = 10f64.powf((threshold_db_hz - ratio_to_db(1.0 / self.output_period_s)) / 10.0);
        self.signal_power_w * self.doppler_factor() / snr - self.thermal_noise_w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cn0Result {
    pub cn0_db_hz: f64,
    pub snr_db: f64,
    /// Squared magnitude of the summed tone residues.
    pub interference_power_w: f64,
    pub thermal_power_w: f64,
}

/// C/N0 for a given interference power at the correlator output.
pub fn cn0_from_interference(interference_power_w: f64, rx: &ReceiverParams) -> Cn0Result {
    let snr = rx.signal_power_w * rx.doppler_factor() / (rx.thermal_noise_w + interference_power_w);
    let snr_db = ratio_to_db(snr);
    Cn0Result {
        cn0_db_hz: snr_db + ratio_to_db(1.0 / rx.output_period_s),
        snr_db,
        interference_power_w,
        thermal_power_w: rx.thermal_noise_w,
    }
}

/// Which code spectrum the interference couples through.
#[derive(Clone, Debug)]
pub enum Coupling {
    /// One satellite's exact line spectrum.
    Exact(CodeSpectrum),
    /// The code-averaged sinc envelope.
    Envelope(SincEnvelope),
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling::Envelope(SincEnvelope::default())
    }
}

impl Coupling {
    /// Complex residue of `tone` at the correlator output, ignoring the tone
    /// phase.
    pub fn residue(&self, tone: &Tone, rx: &ReceiverParams) -> Result<Complex64> {
        let (k, df) = nearest_line(tone.offset_hz);
        let amp = (2.0 * tone.power_w).sqrt() * sinc(PI * df * rx.integration_time_s);
        match self {
            Coupling::Exact(spectrum) => {
                let c = spectrum.coefficient(k).ok_or(Error::OutOfSpan {
                    offset_hz: tone.offset_hz,
                    span_hz: spectrum.span_hz(),
                })?;
                Ok(c.conj() * amp)
            }
            Coupling::Envelope(env) => Ok(Complex64::new(
                amp * env.value(tone.offset_hz) * LINE_SPACING_HZ.sqrt(),
                0.0,
            )),
        }
    }

    /// Residue including the tone's own phase.
    fn phased_residue(&self, tone: &Tone, rx: &ReceiverParams) -> Result<Complex64> {
        Ok(self.residue(tone, rx)? * Complex64::from_polar(1.0, tone.phase_rad))
    }
}

/// How tone phases enter the coherent sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phasing {
    /// Use the phases stored in the spectrum; one coherent sum.
    Given,
    /// Mean over uniformly random phases in closed form, `sum |a_n|^2`.
    Expected,
    /// Mean over `realizations` seeded draws of uniform random phases.
    Random { realizations: usize, seed: u64 },
}

impl Default for Phasing {
    fn default() -> Self {
        Phasing::Random {
            realizations: 1000,
            seed: 0,
        }
    }
}

/// Correlator power of a single tone through the exact code lines,
/// `2 P |C_k|^2 sinc^2(pi df Td)`.
pub fn cwi_correlator_power_exact(tone: &Tone, spectrum: &CodeSpectrum, rx: &ReceiverParams) -> Result<f64> {
    Ok(Coupling::Exact(spectrum.clone()).phased_residue(tone, rx)?.norm_sqr())
}

/// Correlator power of a single tone through the sinc envelope,
/// `2 P A0^2 sinc^2(pi f Ta) * 1 kHz * sinc^2(pi df Td)`.
pub fn cwi_correlator_power_sinc(tone: &Tone, env: &SincEnvelope, rx: &ReceiverParams) -> f64 {
    Coupling::Envelope(*env)
        .phased_residue(tone, rx)
        .map(|r| r.norm_sqr())
        .unwrap_or(0.0)
}

/// `|a_n|^2` for every tone, in spectrum order.
pub fn tone_contributions(noise: &NoiseSpectrum, coupling: &Coupling, rx: &ReceiverParams) -> Result<Vec<f64>> {
    noise
        .tones()
        .iter()
        .map(|t| coupling.residue(t, rx).map(|r| r.norm_sqr()))
        .collect()
}

/// Squared magnitude of the summed tone residues, averaged according to
/// `phasing` in linear power.
pub fn multitone_interference_power(
    noise: &NoiseSpectrum,
    coupling: &Coupling,
    rx: &ReceiverParams,
    phasing: Phasing,
) -> Result<f64> {
    match phasing {
        Phasing::Given => {
            let mut sum = Complex64::new(0.0, 0.0);
            for t in noise.tones() {
                sum += coupling.phased_residue(t, rx)?;
            }
            Ok(sum.norm_sqr())
        }
        Phasing::Expected => noise
            .tones()
            .iter()
            .map(|t| coupling.phased_residue(t, rx).map(|r| r.norm_sqr()))
            .sum(),
        Phasing::Random { realizations, seed } => {
            if realizations == 0 {
                return Err(invalid("at least one phase realization is required"));
            }
            let residues = noise
                .tones()
                .iter()
                .map(|t| coupling.residue(t, rx))
                .collect::<Result<Vec<_>>>()?;
            Ok(random_phase_mean(&residues, realizations, seed))
        }
    }
}

/// Mean of `|sum_n a_n exp(j phi_n)|^2` over seeded uniform phase draws.
/// Realization `r` draws from ChaCha stream `r`, so results do not depend on
/// evaluation order.
pub(crate) fn random_phase_mean(residues: &[Complex64], realizations: usize, seed: u64) -> f64 {
    let mut total = 0.0;
    for r in 0..realizations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let mut sum = Complex64::new(0.0, 0.0);
        for a in residues {
            let (s, c) = rng.random_range(0.0..TAU).sin_cos();
            sum += a * Complex64::new(c, s);
        }
        total += sum.norm_sqr();
    }
    total / realizations as f64
}

/// Predicted C/N0 under `noise`.
pub fn cn0(noise: &NoiseSpectrum, coupling: &Coupling, rx: &ReceiverParams, phasing: Phasing) -> Result<Cn0Result> {
    rx.validate()?;
    let interference = multitone_interference_power(noise, coupling, rx, phasing)?;
    Ok(cn0_from_interference(interference, rx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cacode::CaCode;
    use crate::noise::{make_cwi, make_mesoband, PhasePolicy};
    use proptest::prelude::*;

    fn spectrum() -> CodeSpectrum {
        CaCode::generate(1).unwrap().spectrum(2).unwrap()
    }

    #[test]
    fn on_line_tone_couples_fully() {
        let s = spectrum();
        let rx = ReceiverParams::default();
        let t = Tone::new(37e3, 1e-12, 0.4).unwrap();
        let p = cwi_correlator_power_exact(&t, &s, &rx).unwrap();
        let expected = 2.0 * 1e-12 * s.line_power(37).unwrap();
        assert!((p - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn one_over_td_residual_is_a_null() {
        let s = spectrum();
        let rx = ReceiverParams::default();
        let t = Tone::new(37e3 + 200.0, 1e-12, 0.0).unwrap();
        assert!(cwi_correlator_power_exact(&t, &s, &rx).unwrap() < 1e-40);
    }

    #[test]
    fn half_line_residual_suppression() {
        let s = spectrum();
        let rx = ReceiverParams::default();
        let on = cwi_correlator_power_exact(&Tone::new(37e3, 1e-12, 0.0).unwrap(), &s, &rx).unwrap();
        // 37.5 kHz rounds to line 38; compare against that line.
        let on38 = cwi_correlator_power_exact(&Tone::new(38e3, 1e-12, 0.0).unwrap(), &s, &rx).unwrap();
        let off = cwi_correlator_power_exact(&Tone::new(37.5e3, 1e-12, 0.0).unwrap(), &s, &rx).unwrap();
        let expected = sinc(PI * 500.0 * 5e-3).powi(2);
        assert!((off / on38 - expected).abs() < 1e-12);
        assert!(on > 0.0);
    }

    #[test]
    fn out_of_span_is_an_error() {
        let s = CaCode::generate(1).unwrap().spectrum(1).unwrap();
        let t = Tone::new(1.5e6, 1e-12, 0.0).unwrap();
        assert!(matches!(
            cwi_correlator_power_exact(&t, &s, &ReceiverParams::default()),
            Err(Error::OutOfSpan { .. })
        ));
    }

    #[test]
    fn envelope_coupling_examples() {
        let env = SincEnvelope::default();
        let rx = ReceiverParams::default();
        let p = 1e-12;
        let at0 = cwi_correlator_power_sinc(&Tone::new(0.0, p, 0.0).unwrap(), &env, &rx);
        let expected = 2.0 * p * env.amplitude().powi(2) * LINE_SPACING_HZ;
        assert!((at0 - expected).abs() < 1e-12 * expected);
        let null = cwi_correlator_power_sinc(&Tone::new(1.023e6, p, 0.0).unwrap(), &env, &rx);
        assert!(null < 1e-30 * at0);
        let at550 = cwi_correlator_power_sinc(&Tone::new(550e3, p, 0.0).unwrap(), &env, &rx);
        assert!((ratio_to_db(at550 / at0) + 4.6135).abs() < 1e-3);
    }

    #[test]
    fn single_tone_reduction_is_bitwise() {
        let s = spectrum();
        let rx = ReceiverParams::default();
        let noise = make_cwi(3e-13, 123_456.0, 1.1).unwrap();
        let tone = noise.tones()[0];
        let exact = Coupling::Exact(s.clone());
        let cwi = cwi_correlator_power_exact(&tone, &s, &rx).unwrap();
        for phasing in [Phasing::Given, Phasing::Expected] {
            assert_eq!(multitone_interference_power(&noise, &exact, &rx, phasing).unwrap(), cwi);
        }
        let env = SincEnvelope::default();
        let cwi = cwi_correlator_power_sinc(&tone, &env, &rx);
        let coupling = Coupling::Envelope(env);
        assert_eq!(
            multitone_interference_power(&noise, &coupling, &rx, Phasing::Given).unwrap(),
            cwi
        );
        let random = multitone_interference_power(
            &noise,
            &coupling,
            &rx,
            Phasing::Random {
                realizations: 10,
                seed: 1,
            },
        )
        .unwrap();
        assert!((random - cwi).abs() < 1e-12 * cwi);
    }

    #[test]
    fn two_coherent_tones_quadruple() {
        let env = SincEnvelope::default();
        let rx = ReceiverParams::default();
        // Same residual (0 Hz) and equal envelope magnitude at +/-f.
        let tones = vec![
            Tone::new(-20e3, 1e-12, 0.5).unwrap(),
            Tone::new(20e3, 1e-12, 0.5).unwrap(),
        ];
        let pair = NoiseSpectrum::new(tones.clone(), "pair").unwrap();
        let single = cwi_correlator_power_sinc(&tones[0], &env, &rx);
        let both = multitone_interference_power(&pair, &Coupling::Envelope(env), &rx, Phasing::Given).unwrap();
        assert!((both / single - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_interference_cn0() {
        let rx = ReceiverParams::default();
        let r = cn0(&NoiseSpectrum::empty("none"), &Coupling::default(), &rx, Phasing::Given).unwrap();
        let expected = ratio_to_db(rx.signal_power_w / rx.thermal_noise_w) + ratio_to_db(1.0 / rx.output_period_s);
        assert!((r.cn0_db_hz - expected).abs() < 1e-12);
        assert!((r.cn0_db_hz - 43.5).abs() < 1e-9);
        assert!((r.cn0_db_hz - (r.snr_db + ratio_to_db(200.0))).abs() < 1e-12);
    }

    #[test]
    fn interference_equal_to_thermal_costs_3db() {
        let rx = ReceiverParams::default();
        let clean = cn0_from_interference(0.0, &rx);
        let hit = cn0_from_interference(rx.thermal_noise_w, &rx);
        assert!((clean.snr_db - hit.snr_db - ratio_to_db(2.0)).abs() < 1e-12);
    }

    #[test]
    fn doppler_penalty() {
        let rx = ReceiverParams {
            doppler_hz: 100.0,
            ..ReceiverParams::default()
        };
        let expected = ReceiverParams::default().clean_cn0_db_hz() + ratio_to_db(sinc(PI * 0.5).powi(2));
        assert!((rx.clean_cn0_db_hz() - expected).abs() < 1e-12);
    }

    #[test]
    fn budget_round_trip() {
        let rx = ReceiverParams::default();
        let budget = rx.interference_budget_w(35.0);
        assert!((cn0_from_interference(budget, &rx).cn0_db_hz - 35.0).abs() < 1e-9);
    }

    #[test]
    fn random_phasing_approaches_expectation() {
        let rx = ReceiverParams::default();
        let noise = make_mesoband(0.0, 20e3, 1e-12, 42, PhasePolicy::Zero).unwrap();
        let c = Coupling::default();
        let e = multitone_interference_power(&noise, &c, &rx, Phasing::Expected).unwrap();
        let r = multitone_interference_power(&noise, &c, &rx, Phasing::default()).unwrap();
        assert!(ratio_to_db(r / e).abs() < 0.5);
    }

    #[test]
    fn invalid_params_rejected() {
        let rx = ReceiverParams {
            thermal_noise_w: 0.0,
            ..ReceiverParams::default()
        };
        assert!(cn0(&NoiseSpectrum::empty(""), &Coupling::default(), &rx, Phasing::Given).is_err());
    }

    proptest! {
        #[test]
        fn linear_in_power(alpha_db in -40.0f64..40.0, seed in 0u64..50, exact in any::<bool>()) {
            let rx = ReceiverParams::default();
            let noise = make_mesoband(120e3, 30e3, 1e-12, 25, PhasePolicy::Random { seed }).unwrap();
            let coupling = if exact { Coupling::Exact(spectrum()) } else { Coupling::default() };
            let alpha = crate::units::db_to_ratio(alpha_db);
            for phasing in [Phasing::Given, Phasing::Expected, Phasing::Random { realizations: 20, seed }] {
                let a = multitone_interference_power(&noise, &coupling, &rx, phasing).unwrap();
                let b = multitone_interference_power(&noise.scale_power(alpha_db), &coupling, &rx, phasing).unwrap();
                prop_assert!((b - alpha * a).abs() <= 1e-9 * alpha * a);
            }
        }

        #[test]
        fn cn0_non_increasing_in_tone_power(idx in 0usize..25, bump_db in 0.0f64..30.0) {
            let rx = ReceiverParams::default();
            let noise = make_mesoband(-40e3, 30e3, 1e-13, 25, PhasePolicy::Random { seed: 4 }).unwrap();
            let mut tones = noise.tones().to_vec();
            tones[idx].power_w *= crate::units::db_to_ratio(bump_db);
            let louder = NoiseSpectrum::new(tones, "louder").unwrap();
            let c = Coupling::Exact(spectrum());
            let before = cn0(&noise, &c, &rx, Phasing::Expected).unwrap().cn0_db_hz;
            let after = cn0(&louder, &c, &rx, Phasing::Expected).unwrap().cn0_db_hz;
            prop_assert!(after <= before + 1e-12);
        }
    }
}
