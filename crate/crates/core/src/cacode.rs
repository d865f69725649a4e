//! GPS L1 C/A Gold codes and their spectra.
//!
//! A C/A code is 1023 antipodal chips clocked at 1.023 MHz, so it repeats
//! every millisecond. Because it is periodic, its spectrum is a set of
//! discrete lines spaced 1 kHz apart whose magnitudes follow the
//! `sin(pi f Ta) / (pi f Ta)` shape of the rectangular chip pulse. Interference
//! couples into the correlator through these lines, which is why both the
//! exact line spectrum ([`CodeSpectrum`]) and its smooth approximation
//! ([`SincEnvelope`]) live here.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::units::sinc;

pub const CODE_LENGTH: usize = 1023;
pub const CHIP_RATE_HZ: f64 = 1.023e6;
pub const CHIP_DURATION_S: f64 = 1.0 / CHIP_RATE_HZ;
pub const CODE_PERIOD_S: f64 = 1e-3;
/// Spacing of the code's spectral lines, `1 / CODE_PERIOD_S`.
pub const LINE_SPACING_HZ: f64 = 1e3;
pub const MAX_PRN: u8 = 32;

/// G2 phase-selector taps (1-based register stages) for PRN 1..=32.
const G2_TAPS: [(usize, usize); 32] = [
    (2, 6),
    (3, 7),
    (4, 8),
    (5, 9),
    (1, 9),
    (2, 10),
    (1, 8),
    (2, 9),
    (3, 10),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (1, 4),
    (2, 5),
    (3, 6),
    (4, 7),
    (5, 8),
    (6, 9),
    (1, 3),
    (4, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 6),
    (2, 7),
    (3, 8),
    (4, 9),
];

/// One satellite's spreading code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaCode {
    prn: u8,
    chips: Vec<i8>,
}

/// Generate the C/A code for `prn` (1..=32). Binary 1 maps to `+1`, 0 to `-1`.
pub fn generate_ca_code(prn: u8) -> Result<CaCode> {
    CaCode::generate(prn)
}

impl CaCode {
    /// ```
    /// let a = l1emc::CaCode::generate(1)?;
    /// let b = l1emc::CaCode::generate(2)?;
    /// assert_eq!(&a.to_bit_string()[..10], "1100100000");
    /// assert!((0..1023).all(|lag| a.correlation(&b, lag).abs() <= 65));
    /// # Ok::<(), l1emc::Error>(())
    /// ```
    pub fn generate(prn: u8) -> Result<Self> {
        if !(1..=MAX_PRN).contains(&prn) {
            return Err(invalid(format!("PRN must be in 1..={MAX_PRN}, got {prn}")));
        }
        let (t1, t2) = G2_TAPS[usize::from(prn - 1)];
        let mut g1 = [1u8; 10];
        let mut g2 = [1u8; 10];
        let mut chips = Vec::with_capacity(CODE_LENGTH);
        for _ in 0..CODE_LENGTH {
            let bit = g1[9] ^ g2[t1 - 1] ^ g2[t2 - 1];
            chips.push(if bit == 1 { 1 } else { -1 });

            // G1 = 1 + x^3 + x^10, G2 = 1 + x^2 + x^3 + x^6 + x^8 + x^9 + x^10
            let f1 = g1[2] ^ g1[9];
            let f2 = g2[1] ^ g2[2] ^ g2[5] ^ g2[7] ^ g2[8] ^ g2[9];
            g1.copy_within(0..9, 1);
            g2.copy_within(0..9, 1);
            g1[0] = f1;
            g2[0] = f2;
        }
        Ok(Self { prn, chips })
    }

    pub fn prn(&self) -> u8 {
        self.prn
    }

    pub fn chips(&self) -> &[i8] {
        &self.chips
    }

    pub fn chip_rate_hz(&self) -> f64 {
        CHIP_RATE_HZ
    }

    pub fn chip_duration_s(&self) -> f64 {
        CHIP_DURATION_S
    }

    /// Debug dump as 1023 characters of `0`/`1`.
    pub fn to_bit_string(&self) -> String {
        self.chips.iter().map(|&c| if c > 0 { '1' } else { '0' }).collect()
    }

    /// Raw circular correlation `sum_n self[n] * other[(n + lag) mod 1023]`.
    pub fn correlation(&self, other: &CaCode, lag: usize) -> i32 {
        let lag = lag % CODE_LENGTH;
        let (head, tail) = other.chips.split_at(lag);
        self.chips
            .iter()
            .zip(tail.iter().chain(head.iter()))
            .map(|(&a, &b)| i32::from(a) * i32::from(b))
            .sum()
    }

    /// Correlation divided by the code length; 1 at zero lag with itself.
    pub fn normalized_correlation(&self, other: &CaCode, lag: usize) -> f64 {
        f64::from(self.correlation(other, lag)) / CODE_LENGTH as f64
    }

    pub fn spectrum(&self, harmonic_span: usize) -> Result<CodeSpectrum> {
        code_spectrum(self, harmonic_span)
    }
}

/// Fourier-series line spectrum of one code period.
///
/// Line `k` sits at `k * 1 kHz` from the carrier. Lines are kept for
/// `|k| <= 1023 * harmonic_span` and renormalized so their powers sum to one.
#[derive(Clone, Debug)]
pub struct CodeSpectrum {
    prn: u8,
    harmonic_span: usize,
    max_index: i64,
    coefficients: Vec<Complex64>,
}

/// Compute `C_k` of the rectangular-chip waveform:
/// `C_k = (1/1023) DFT[k mod 1023] * sinc(pi k / 1023) * exp(-j pi k / 1023)`.
pub fn code_spectrum(code: &CaCode, harmonic_span: usize) -> Result<CodeSpectrum> {
    if harmonic_span < 1 {
        return Err(invalid("harmonic span must be at least 1"));
    }
    let n = CODE_LENGTH;
    let mut dft: Vec<Complex64> = code.chips.iter().map(|&c| Complex64::new(f64::from(c), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut dft);

    let max_index = (n * harmonic_span) as i64;
    let mut coefficients = Vec::with_capacity(2 * max_index as usize + 1);
    for k in -max_index..=max_index {
        let base = dft[k.rem_euclid(n as i64) as usize] / n as f64;
        let x = std::f64::consts::PI * k as f64 / n as f64;
        // Exact zeros at the chip-rate nulls.
        let pulse = if k != 0 && k % n as i64 == 0 { 0.0 } else { sinc(x) };
        coefficients.push(base * Complex64::from_polar(pulse, -x));
    }
    let total: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
    let scale = total.sqrt().recip();
    for c in &mut coefficients {
        *c *= scale;
    }
    Ok(CodeSpectrum {
        prn: code.prn,
        harmonic_span,
        max_index,
        coefficients,
    })
}

impl CodeSpectrum {
    pub fn prn(&self) -> u8 {
        self.prn
    }

    pub fn harmonic_span(&self) -> usize {
        self.harmonic_span
    }

    /// Largest retained line index.
    pub fn max_index(&self) -> i64 {
        self.max_index
    }

    /// Highest frequency offset covered, in Hz.
    pub fn span_hz(&self) -> f64 {
        self.max_index as f64 * LINE_SPACING_HZ
    }

    pub fn line_spacing_hz(&self) -> f64 {
        LINE_SPACING_HZ
    }

    pub fn coefficient(&self, k: i64) -> Option<Complex64> {
        if k.abs() > self.max_index {
            return None;
        }
        Some(self.coefficients[(k + self.max_index) as usize])
    }

    pub fn line_power(&self, k: i64) -> Option<f64> {
        self.coefficient(k).map(|c| c.norm_sqr())
    }

    pub fn total_power(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `(k, C_k)` pairs in ascending `k`.
    pub fn lines(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        (-self.max_index..).zip(self.coefficients.iter().copied())
    }
}

/// Nearest spectral line to a frequency offset and the residual `offset - k * 1 kHz`.
pub fn nearest_line(offset_hz: f64) -> (i64, f64) {
    let k = (offset_hz / LINE_SPACING_HZ).round();
    (k as i64, offset_hz - k * LINE_SPACING_HZ)
}

/// Smooth approximation of the code spectrum, `A0 sinc(pi f Ta)`.
///
/// `A0` is chosen so the envelope carries unit power,
/// `integral A0^2 sinc^2(pi f Ta) df = 1`, which gives `A0 = sqrt(Ta)`. The
/// envelope is therefore an amplitude *density*: the expected power of a
/// single code line at `f` is `A0^2 sinc^2(pi f Ta) * 1 kHz`
/// ([`SincEnvelope::line_power`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SincEnvelope {
    amplitude: f64,
    chip_duration_s: f64,
}

impl Default for SincEnvelope {
    fn default() -> Self {
        Self::new(CHIP_DURATION_S)
    }
}

impl SincEnvelope {
    pub fn new(chip_duration_s: f64) -> Self {
        Self {
            amplitude: chip_duration_s.sqrt(),
            chip_duration_s,
        }
    }

    /// `A0`.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn chip_duration_s(&self) -> f64 {
        self.chip_duration_s
    }

    /// Signed envelope `A0 sinc(pi f Ta)`.
    pub fn value(&self, offset_hz: f64) -> f64 {
        let x = offset_hz * self.chip_duration_s;
        // Exact zeros at multiples of the chip rate.
        if x != 0.0 && (x - x.round()).abs() < 1e-12 {
            return 0.0;
        }
        self.amplitude * sinc(std::f64::consts::PI * x)
    }

    /// Power spectral density of the envelope, per Hz.
    pub fn density(&self, offset_hz: f64) -> f64 {
        self.value(offset_hz).powi(2)
    }

    /// Expected `|C_k|^2` of a line near `offset_hz`.
    pub fn line_power(&self, offset_hz: f64) -> f64 {
        self.density(offset_hz) * LINE_SPACING_HZ
    }

    /// Envelope change from `from_hz` to `to_hz` in dB (power ratio).
    pub fn relative_db(&self, from_hz: f64, to_hz: f64) -> f64 {
        20.0 * (self.value(to_hz).abs() / self.value(from_hz).abs()).log10()
    }
}

/// Envelope value of the GPS L1 C/A code at `offset_hz`.
pub fn sinc_envelope(offset_hz: f64) -> f64 {
    SincEnvelope::default().value(offset_hz)
}
