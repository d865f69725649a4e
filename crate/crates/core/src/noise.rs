//! Interference as a finite set of tones.
//!
//! Every interference shape handled by the crate (CWI, multitone, mesoband,
//! rectangular partial/broadband, ingested analyzer traces) is reduced to a
//! list of [`Tone`]s at signed offsets from the L1 carrier. The correlator is
//! linear, so its response to each tone can be evaluated separately and the
//! contributions summed.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cacode::LINE_SPACING_HZ;
use crate::error::{invalid, Result};
use crate::units::db_to_ratio;

/// One interference tone, `sqrt(2 P) exp(j (2 pi f t + theta))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    /// Signed offset from the L1 carrier.
    pub offset_hz: f64,
    pub power_w: f64,
    /// In `[0, 2 pi)`.
    pub phase_rad: f64,
}

impl Tone {
    pub fn new(offset_hz: f64, power_w: f64, phase_rad: f64) -> Result<Self> {
        if !offset_hz.is_finite() {
            return Err(invalid(format!("tone offset must be finite, got {offset_hz}")));
        }
        if !(power_w >= 0.0 && power_w.is_finite()) {
            return Err(invalid(format!(
                "tone power must be finite and non-negative, got {power_w}"
            )));
        }
        if !phase_rad.is_finite() {
            return Err(invalid("tone phase must be finite"));
        }
        Ok(Self {
            offset_hz,
            power_w,
            phase_rad: phase_rad.rem_euclid(TAU),
        })
    }
}

/// How constructors assign tone phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhasePolicy {
    Zero,
    Random { seed: u64 },
}

impl PhasePolicy {
    pub(crate) fn phases(self, n: usize) -> Vec<f64> {
        match self {
            PhasePolicy::Zero => vec![0.0; n],
            PhasePolicy::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.random_range(0.0..TAU)).collect()
            }
        }
    }
}

/// Sorted set of tones with unique offsets.
///
/// `cell_hz`, when set, is the slice of spectrum each tone stands for (tone
/// spacing of a synthesized band, or the bin width of an ingested trace). It
/// lets the set be read back as a sampled power spectral density and tells
/// the compliance classifier which gaps are real.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    tones: Vec<Tone>,
    label: String,
    cell_hz: Option<f64>,
}

impl NoiseSpectrum {
    pub fn new(mut tones: Vec<Tone>, label: impl Into<String>) -> Result<Self> {
        for t in &tones {
            Tone::new(t.offset_hz, t.power_w, t.phase_rad)?;
        }
        tones.sort_by(|a, b| a.offset_hz.total_cmp(&b.offset_hz));
        if let Some(w) = tones.windows(2).find(|w| w[0].offset_hz == w[1].offset_hz) {
            return Err(invalid(format!("duplicate tone offset {} Hz", w[0].offset_hz)));
        }
        Ok(Self {
            tones,
            label: label.into(),
            cell_hz: None,
        })
    }

    pub fn empty(label: impl Into<String>) -> Self {
        Self {
            tones: Vec::new(),
            label: label.into(),
            cell_hz: None,
        }
    }

    pub fn with_cell_hz(mut self, cell_hz: f64) -> Result<Self> {
        if !(cell_hz > 0.0 && cell_hz.is_finite()) {
            return Err(invalid(format!("cell width must be positive, got {cell_hz}")));
        }
        self.cell_hz = Some(cell_hz);
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn tones(&self) -> &[Tone] {
        &self.tones
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn cell_hz(&self) -> Option<f64> {
        self.cell_hz
    }

    pub fn len(&self) -> usize {
        self.tones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tones.is_empty()
    }

    pub fn total_power_w(&self) -> f64 {
        self.tones.iter().map(|t| t.power_w).sum()
    }

    pub fn max_abs_offset_hz(&self) -> f64 {
        self.tones.iter().map(|t| t.offset_hz.abs()).fold(0.0, f64::max)
    }

    /// Multiply every tone power by `10^(delta_db / 10)`.
    pub fn scale_power(&self, delta_db: f64) -> Self {
        let k = db_to_ratio(delta_db);
        let tones = self
            .tones
            .iter()
            .map(|t| Tone {
                power_w: t.power_w * k,
                ..*t
            })
            .collect();
        Self {
            tones,
            label: self.label.clone(),
            cell_hz: self.cell_hz,
        }
    }

    /// Same tones with every phase replaced by `phase_rad`.
    pub fn with_uniform_phase(&self, phase_rad: f64) -> Self {
        let phase = phase_rad.rem_euclid(TAU);
        Self {
            tones: self.tones.iter().map(|t| Tone { phase_rad: phase, ..*t }).collect(),
            label: self.label.clone(),
            cell_hz: self.cell_hz,
        }
    }

    /// Merge each run of `factor` adjacent tones into one tone carrying their
    /// summed power at the power-weighted mean offset. Cell width scales by
    /// `factor`.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("decimation factor must be at least 1"));
        }
        let tones = self
            .tones
            .chunks(factor)
            .map(|chunk| {
                let power: f64 = chunk.iter().map(|t| t.power_w).sum();
                let offset = if power > 0.0 {
                    chunk.iter().map(|t| t.offset_hz * t.power_w).sum::<f64>() / power
                } else {
                    chunk.iter().map(|t| t.offset_hz).sum::<f64>() / chunk.len() as f64
                };
                Tone {
                    offset_hz: offset,
                    power_w: power,
                    phase_rad: chunk[0].phase_rad,
                }
            })
            .collect();
        let mut out = NoiseSpectrum::new(tones, self.label.clone())?;
        out.cell_hz = self.cell_hz.map(|c| c * factor as f64);
        Ok(out)
    }

    /// Sampled power spectral density `(offset_hz, W/Hz)`, one sample per
    /// tone. Each tone's power is spread over its cell; without a cell width
    /// the local tone spacing is used.
    pub fn psd_table(&self) -> Vec<(f64, f64)> {
        let n = self.tones.len();
        (0..n)
            .map(|i| {
                let t = &self.tones[i];
                let width = self.cell_hz.unwrap_or_else(|| local_spacing(&self.tones, i));
                (t.offset_hz, t.power_w / width)
            })
            .collect()
    }
}

/// Midpoint cell width around tone `i`; a lone tone gets one line spacing.
fn local_spacing(tones: &[Tone], i: usize) -> f64 {
    let n = tones.len();
    match (i.checked_sub(1), (i + 1 < n).then_some(i + 1)) {
        (Some(a), Some(b)) => (tones[b].offset_hz - tones[a].offset_hz) / 2.0,
        (Some(a), None) => tones[i].offset_hz - tones[a].offset_hz,
        (None, Some(b)) => tones[b].offset_hz - tones[i].offset_hz,
        (None, None) => LINE_SPACING_HZ,
    }
}

/// Single continuous-wave tone.
pub fn make_cwi(power_w: f64, offset_hz: f64, phase_rad: f64) -> Result<NoiseSpectrum> {
    let tone = Tone::new(offset_hz, power_w, phase_rad)?;
    NoiseSpectrum::new(vec![tone], format!("cwi@{offset_hz}Hz"))
}

/// `n_tones` equal-power tones spanning `[center - bw/2, center + bw/2]`
/// with spacing `bw / (n_tones - 1)`.
pub fn make_mesoband(
    center_hz: f64,
    bandwidth_hz: f64,
    total_power_w: f64,
    n_tones: usize,
    phase_policy: PhasePolicy,
) -> Result<NoiseSpectrum> {
    if !(bandwidth_hz > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth_hz}")));
    }
    if bandwidth_hz < LINE_SPACING_HZ {
        return Err(invalid(format!(
            "mesoband noise needs at least {LINE_SPACING_HZ} Hz of bandwidth, got {bandwidth_hz}"
        )));
    }
    if !(total_power_w >= 0.0 && total_power_w.is_finite()) {
        return Err(invalid(format!(
            "total power must be non-negative, got {total_power_w}"
        )));
    }
    if n_tones < 2 {
        return Err(invalid("mesoband noise needs at least two tones"));
    }
    let spacing = bandwidth_hz / (n_tones - 1) as f64;
    if spacing >= LINE_SPACING_HZ {
        log::warn!("mesoband tone spacing {spacing:.1} Hz does not guarantee a tone on every code line");
    }
    let power = total_power_w / n_tones as f64;
    let start = center_hz - bandwidth_hz / 2.0;
    let tones = phase_policy
        .phases(n_tones)
        .into_iter()
        .enumerate()
        .map(|(i, phase)| Tone {
            offset_hz: start + i as f64 * spacing,
            power_w: power,
            phase_rad: phase,
        })
        .collect();
    NoiseSpectrum::new(tones, format!("mesoband {bandwidth_hz}Hz@{center_hz}Hz x{n_tones}"))?.with_cell_hz(spacing)
}

/// Flat power spectral density over `[center - bw/2, center + bw/2]`,
/// discretized into tones `tone_spacing_hz` apart, each carrying
/// `psd * spacing`.
pub fn make_rectangular(
    center_hz: f64,
    bandwidth_hz: f64,
    psd_w_per_hz: f64,
    tone_spacing_hz: f64,
    phase_policy: PhasePolicy,
) -> Result<NoiseSpectrum> {
    if !(tone_spacing_hz > 0.0) {
        return Err(invalid(format!("tone spacing must be positive, got {tone_spacing_hz}")));
    }
    if !(bandwidth_hz > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth_hz}")));
    }
    if !(psd_w_per_hz >= 0.0 && psd_w_per_hz.is_finite()) {
        return Err(invalid(format!("PSD must be non-negative, got {psd_w_per_hz}")));
    }
    let n = (bandwidth_hz / tone_spacing_hz + 1e-9).floor() as usize + 1;
    let start = center_hz - (n - 1) as f64 / 2.0 * tone_spacing_hz;
    let power = psd_w_per_hz * tone_spacing_hz;
    let tones = phase_policy
        .phases(n)
        .into_iter()
        .enumerate()
        .map(|(i, phase)| Tone {
            offset_hz: start + i as f64 * tone_spacing_hz,
            power_w: power,
            phase_rad: phase,
        })
        .collect();
    NoiseSpectrum::new(tones, format!("rect {bandwidth_hz}Hz@{center_hz}Hz"))?.with_cell_hz(tone_spacing_hz)
}

/// Free-function form of [`NoiseSpectrum::scale_power`].
pub fn scale_power(spectrum: &NoiseSpectrum, delta_db: f64) -> NoiseSpectrum {
    spectrum.scale_power(delta_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cwi_constructor() {
        let s = make_cwi(1e-12, 0.0, 0.0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.tones()[0].offset_hz, 0.0);
        assert_eq!(s.total_power_w(), 1e-12);
        assert!(make_cwi(0.0, 5e3, 1.0).unwrap().total_power_w() == 0.0);
        assert!(make_cwi(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn mesoband_42_tones_over_20khz() {
        let s = make_mesoband(0.0, 20e3, 1e-10, 42, PhasePolicy::Random { seed: 3 }).unwrap();
        assert_eq!(s.len(), 42);
        let spacing = s.tones()[1].offset_hz - s.tones()[0].offset_hz;
        assert!((spacing - 20e3 / 41.0).abs() < 1e-9);
        assert!((spacing - 487.8).abs() < 0.1);
        assert_eq!(s.tones()[0].offset_hz, -10e3);
        assert!((s.tones()[41].offset_hz - 10e3).abs() < 1e-9);
        assert!((s.total_power_w() - 1e-10).abs() < 1e-24);
    }

    #[test]
    fn mesoband_zero_power_and_errors() {
        let s = make_mesoband(0.0, 20e3, 0.0, 42, PhasePolicy::Zero).unwrap();
        assert!(s.tones().iter().all(|t| t.power_w == 0.0));
        assert!(make_mesoband(0.0, 0.0, 1.0, 42, PhasePolicy::Zero).is_err());
        assert!(make_mesoband(0.0, 500.0, 1.0, 42, PhasePolicy::Zero).is_err());
        assert!(make_mesoband(0.0, 20e3, -1.0, 42, PhasePolicy::Zero).is_err());
        assert!(make_mesoband(0.0, 20e3, 1.0, 1, PhasePolicy::Zero).is_err());
    }

    #[test]
    fn mesoband_is_seed_deterministic() {
        let a = make_mesoband(550e3, 20e3, 1.0, 42, PhasePolicy::Random { seed: 9 }).unwrap();
        let b = make_mesoband(550e3, 20e3, 1.0, 42, PhasePolicy::Random { seed: 9 }).unwrap();
        let c = make_mesoband(550e3, 20e3, 1.0, 42, PhasePolicy::Random { seed: 10 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rectangular_counts_and_power() {
        let p = 1e-15;
        let s = make_rectangular(0.0, 100e3, p, 200.0, PhasePolicy::Zero).unwrap();
        assert_eq!(s.len(), 501);
        assert!((s.total_power_w() - p * 1e5).abs() <= p * 200.0 + 1e-30);
        assert_eq!(s.tones()[0].offset_hz, -50e3);
        assert!(make_rectangular(0.0, 1e5, p, 0.0, PhasePolicy::Zero).is_err());
    }

    #[test]
    fn duplicate_offsets_rejected() {
        let t = Tone::new(10.0, 1.0, 0.0).unwrap();
        assert!(NoiseSpectrum::new(vec![t, t], "dup").is_err());
    }

    #[test]
    fn scale_power_examples() {
        let s = make_mesoband(0.0, 20e3, 1e-9, 42, PhasePolicy::Random { seed: 1 }).unwrap();
        assert_eq!(s.scale_power(0.0), s);
        let down = s.scale_power(-10.0);
        for (a, b) in s.tones().iter().zip(down.tones()) {
            assert!((b.power_w - 0.1 * a.power_w).abs() < 1e-24);
            assert_eq!(a.phase_rad, b.phase_rad);
        }
    }

    #[test]
    fn decimate_conserves_power() {
        let s = make_rectangular(0.0, 10e3, 1e-12, 50.0, PhasePolicy::Zero).unwrap();
        let d = s.decimate(2).unwrap();
        assert_eq!(d.len(), (s.len() + 1) / 2);
        assert!((d.total_power_w() - s.total_power_w()).abs() < 1e-20);
        assert_eq!(d.cell_hz(), Some(100.0));
    }

    #[test]
    fn psd_table_uses_cell() {
        let s = make_rectangular(0.0, 1e3, 2e-12, 100.0, PhasePolicy::Zero).unwrap();
        assert!(s.psd_table().iter().all(|&(_, p)| (p - 2e-12).abs() < 1e-24));
    }

    proptest! {
        #[test]
        fn scale_round_trip(db in -60.0f64..60.0, seed in 0u64..1000) {
            let s = make_mesoband(1e3, 40e3, 1e-11, 17, PhasePolicy::Random { seed }).unwrap();
            let back = s.scale_power(db).scale_power(-db);
            for (a, b) in s.tones().iter().zip(back.tones()) {
                prop_assert!((a.power_w - b.power_w).abs() <= 1e-12 * a.power_w);
            }
        }

        #[test]
        fn mesoband_partitions_total_power(p in 0.0f64..1e-3, n in 2usize..200, bw in 1e3f64..2e5) {
            let s = make_mesoband(0.0, bw, p, n, PhasePolicy::Zero).unwrap();
            prop_assert!((s.total_power_w() - p).abs() <= 1e-12 * p.max(1e-300));
            prop_assert_eq!(s.len(), n);
        }
    }
}
