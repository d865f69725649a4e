//! Time-domain correlator simulator.
//!
//! Synthesizes the complex baseband input of a single aligned channel,
//!
//! ```text
//! r(t) = sqrt(Ps) c(t) exp(j 2 pi fd t) + sum_n sqrt(2 Pn) exp(j (2 pi fn t + theta_n)) + w(t)
//! ```
//!
//! multiplies it by the code replica, integrates over each `Td` window and
//! dumps. The signal power is taken from the mean of the dumps and the noise
//! power from their variance, which gives an estimate of C/N0 that shares no
//! code with the analytical model.
//!
//! Each window restarts local time at zero and draws fresh tone phases, so
//! the dump-to-dump variance measures the phase-averaged interference power.
//! A tone whose phase never changed would otherwise add a constant to every
//! dump and be invisible to a variance estimate.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::io::{self, Read, Write};
use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::cacode::{CaCode, CHIP_RATE_HZ};
use crate::error::{invalid, Result};
use crate::model::ReceiverParams;
use crate::noise::NoiseSpectrum;
use crate::units::ratio_to_db;

/// Magic bytes opening a waveform dump.
pub const WAVEFORM_MAGIC: [u8; 8] = *b"L1EMCIQ\0";
pub const WAVEFORM_VERSION: u32 = 1;

/// Simulation settings. The integration time comes from
/// [`ReceiverParams::integration_time_s`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sample_rate_hz: f64,
    pub n_integrations: usize,
    pub seed: u64,
    /// Replica delay relative to the received code; zero is aligned.
    pub code_phase_samples: i64,
    pub include_thermal: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 10e6,
            n_integrations: 500,
            seed: 0,
            code_phase_samples: 0,
            include_thermal: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz >= 2.0 * CHIP_RATE_HZ && self.sample_rate_hz.is_finite()) {
            return Err(invalid(format!(
                "sample rate must be at least {} Hz, got {}",
                2.0 * CHIP_RATE_HZ,
                self.sample_rate_hz
            )));
        }
        if self.n_integrations == 0 {
            return Err(invalid("at least one integration window is required"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// `|mean dump|^2`.
    pub signal_peak_power_w: f64,
    /// Unbiased variance of the dumps.
    pub noise_power_w: f64,
    /// Infinite when the dumps carry no noise at all.
    pub empirical_cn0_db_hz: f64,
    /// Ratio of the per-sample thermal variance to the in-band noise power
    /// `N0_w`, i.e. `10 log10(fs Td)`. The white noise fills the whole
    /// sampled band and the dump keeps `1 / (fs Td)` of it.
    pub thermal_correction_db: f64,
    pub samples_per_window: usize,
}

/// Run one simulation.
///
/// The correlator is linear, so each window's dump is assembled from the
/// replica correlation of every input component (signal, each tone, the
/// thermal samples) rather than from the summed waveform. The per-tone
/// correlations only depend on where the window falls in the code period
/// and are computed once per distinct position.
pub fn simulate(code: &CaCode, noise: &NoiseSpectrum, rx: &ReceiverParams, cfg: &SimConfig) -> Result<SimResult> {
    let synth = Synthesizer::new(code, noise, rx, cfg)?;
    let n = synth.n;
    let mut cache: HashMap<usize, WindowGains> = HashMap::new();
    let mut dumps = Vec::with_capacity(cfg.n_integrations);
    for w in 0..cfg.n_integrations {
        let dump = match synth.window_key(w) {
            Some(key) => {
                let gains = cache.entry(key).or_insert_with(|| synth.gains(w));
                synth.dump(w, gains)
            }
            None => synth.dump(w, &synth.gains(w)),
        };
        dumps.push(dump);
    }
    let m = dumps.len() as f64;
    let mean = dumps.iter().sum::<Complex64>() / m;
    let noise_power_w = if dumps.len() > 1 {
        dumps.iter().map(|d| (d - mean).norm_sqr()).sum::<f64>() / (m - 1.0)
    } else {
        log::warn!("a single window gives no noise estimate");
        0.0
    };
    let signal_peak_power_w = mean.norm_sqr();
    let empirical_cn0_db_hz = if noise_power_w > 0.0 {
        ratio_to_db(signal_peak_power_w / noise_power_w) + ratio_to_db(1.0 / rx.output_period_s)
    } else {
        f64::INFINITY
    };
    Ok(SimResult {
        signal_peak_power_w,
        noise_power_w,
        empirical_cn0_db_hz,
        thermal_correction_db: ratio_to_db(n as f64),
        samples_per_window: n,
    })
}

/// Simulate `noise_template` scaled by each entry of `db_offsets`, in order.
/// Every point reuses `cfg.seed`.
pub fn sweep_power(
    code: &CaCode,
    noise_template: &NoiseSpectrum,
    rx: &ReceiverParams,
    cfg: &SimConfig,
    db_offsets: &[f64],
) -> Result<Vec<(f64, SimResult)>> {
    if db_offsets.is_empty() {
        return Err(invalid("sweep needs at least one power offset"));
    }
    db_offsets
        .iter()
        .map(|&db| {
            let noise = noise_template.scale_power(db);
            simulate(code, &noise, rx, cfg).map(|r| (db, r))
        })
        .collect()
}

/// Write `windows` integration windows of the synthesized input.
///
/// Layout, all little-endian: 8 magic bytes `L1EMCIQ\0`, `u32` version,
/// `u32` reserved (zero), `f64` sample rate in Hz, `u64` sample count, then
/// interleaved `f32` I/Q pairs.
pub fn write_waveform<W: Write>(
    mut out: W,
    code: &CaCode,
    noise: &NoiseSpectrum,
    rx: &ReceiverParams,
    cfg: &SimConfig,
    windows: usize,
) -> Result<u64> {
    let synth = Synthesizer::new(code, noise, rx, cfg)?;
    let count = (synth.n * windows) as u64;
    out.write_all(&WAVEFORM_MAGIC)?;
    out.write_all(&WAVEFORM_VERSION.to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    out.write_all(&cfg.sample_rate_hz.to_le_bytes())?;
    out.write_all(&count.to_le_bytes())?;
    let mut buf = vec![Complex64::new(0.0, 0.0); synth.n];
    let mut bytes = Vec::with_capacity(8 * synth.n);
    for w in 0..windows {
        synth.window(w, &mut buf);
        bytes.clear();
        for s in &buf {
            bytes.extend_from_slice(&(s.re as f32).to_le_bytes());
            bytes.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
        out.write_all(&bytes)?;
    }
    out.flush()?;
    Ok(count)
}

/// Read a dump written by [`write_waveform`]; returns the sample rate and
/// the samples.
pub fn read_waveform<R: Read>(mut input: R) -> Result<(f64, Vec<Complex32>)> {
    let mut header = [0u8; 32];
    input.read_exact(&mut header)?;
    if header[..8] != WAVEFORM_MAGIC {
        return Err(bad_data("not a waveform dump"));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    if version != WAVEFORM_VERSION {
        return Err(bad_data(&format!("unsupported waveform version {version}")));
    }
    let rate = f64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
    let count = u64::from_le_bytes(header[24..32].try_into().expect("8 bytes"));
    let count = usize::try_from(count).map_err(|_| bad_data("sample count too large"))?;
    let mut samples = Vec::with_capacity(count.min(1 << 24));
    let mut pair = [0u8; 8];
    for _ in 0..count {
        input.read_exact(&mut pair)?;
        samples.push(Complex32::new(
            f32::from_le_bytes(pair[..4].try_into().expect("4 bytes")),
            f32::from_le_bytes(pair[4..].try_into().expect("4 bytes")),
        ));
    }
    Ok((rate, samples))
}

fn bad_data(msg: &str) -> crate::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_owned()).into()
}

/// Precomputed state shared by every window of a run.
struct Synthesizer<'a> {
    code: &'a CaCode,
    n: usize,
    sample_rate_milli: u64,
    seed: u64,
    code_phase: i64,
    signal_amp: f64,
    doppler_step: Complex64,
    /// `(fft bin, amplitude)` for tones on the `1 / Td` grid.
    grid: Vec<(usize, f64)>,
    /// `(phase step per sample, amplitude)` for the rest.
    free: Vec<(Complex64, f64)>,
    ifft: Option<Arc<dyn Fft<f64>>>,
    thermal_sigma: Option<f64>,
    /// Code period in samples, when it is a whole number.
    code_period_samples: Option<usize>,
}

/// Unit-amplitude replica correlations of the deterministic inputs over one
/// window.
struct WindowGains {
    replica: Vec<f64>,
    signal: Complex64,
    grid: Vec<Complex64>,
    free: Vec<Complex64>,
}

impl<'a> Synthesizer<'a> {
    fn new(code: &'a CaCode, noise: &NoiseSpectrum, rx: &ReceiverParams, cfg: &SimConfig) -> Result<Self> {
        rx.validate()?;
        cfg.validate()?;
        let fs = cfg.sample_rate_hz;
        let n = (rx.integration_time_s * fs).round() as usize;
        if n < 2 {
            return Err(invalid("integration window holds fewer than two samples"));
        }
        let mut grid = Vec::new();
        let mut free = Vec::new();
        for t in noise.tones() {
            if t.offset_hz.abs() >= fs / 2.0 {
                return Err(invalid(format!(
                    "tone at {} Hz aliases at a sample rate of {fs} Hz",
                    t.offset_hz
                )));
            }
            let amp = (2.0 * t.power_w).sqrt();
            let bin = t.offset_hz * n as f64 / fs;
            if (bin - bin.round()).abs() < 1e-9 * bin.abs().max(1.0) {
                grid.push(((bin.round() as i64).rem_euclid(n as i64) as usize, amp));
            } else {
                free.push((Complex64::from_polar(1.0, TAU * t.offset_hz / fs), amp));
            }
        }
        let ifft = (!grid.is_empty()).then(|| FftPlanner::new().plan_fft_inverse(n));
        let thermal_sigma = cfg
            .include_thermal
            .then(|| (rx.thermal_noise_w * n as f64 / 2.0).sqrt());
        Ok(Self {
            code,
            n,
            sample_rate_milli: (fs * 1e3).round() as u64,
            seed: cfg.seed,
            code_phase: cfg.code_phase_samples,
            signal_amp: rx.signal_power_w.sqrt(),
            doppler_step: Complex64::from_polar(1.0, TAU * rx.doppler_hz / fs),
            grid,
            free,
            ifft,
            thermal_sigma,
            code_period_samples: {
                let milli = (fs * 1e3).round() as u64;
                (milli % 1_000_000 == 0).then_some((milli / 1_000_000) as usize)
            },
        })
    }

    fn chip(&self, sample: i64) -> f64 {
        // chip index = floor(sample * 1.023e6 / fs), in exact integers. The
        // chip sequence repeats after fs * 1000 samples (a whole number of
        // code periods), which also folds negative indices.
        let num = 1_023_000_000u64;
        let g = sample.rem_euclid(self.sample_rate_milli as i64) as u64;
        let idx = match g.checked_mul(num) {
            Some(p) => p / self.sample_rate_milli,
            None => (u128::from(g) * u128::from(num) / u128::from(self.sample_rate_milli)) as u64,
        };
        f64::from(self.code.chips()[(idx % self.code.chips().len() as u64) as usize])
    }

    fn replica(&self, w: usize, out: &mut [f32]) {
        let start = (w * self.n) as i64 - self.code_phase;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.chip(start + i as i64) as f32;
        }
    }

    /// Windows with equal keys see the same code segment.
    fn window_key(&self, w: usize) -> Option<usize> {
        self.code_period_samples.map(|p| (w * self.n) % p)
    }

    fn gains(&self, w: usize) -> WindowGains {
        let n = self.n;
        let scale = 1.0 / n as f64;
        let mut replica32 = vec![0.0f32; n];
        self.replica(w, &mut replica32);
        let replica: Vec<f64> = replica32.into_iter().map(f64::from).collect();

        let start = (w * n) as i64;
        let mut carrier = Complex64::new(1.0, 0.0);
        let mut signal = Complex64::new(0.0, 0.0);
        for (i, &c) in replica.iter().enumerate() {
            signal += carrier * (self.chip(start + i as i64) * c);
            carrier *= self.doppler_step;
            if i % 4096 == 4095 {
                carrier /= carrier.norm();
            }
        }
        signal *= self.signal_amp * scale;

        let grid = match &self.ifft {
            Some(ifft) => {
                let mut spec: Vec<Complex64> = replica.iter().map(|&c| Complex64::new(c, 0.0)).collect();
                ifft.process(&mut spec);
                self.grid.iter().map(|&(bin, _)| spec[bin] * scale).collect()
            }
            None => Vec::new(),
        };

        let free = self
            .free
            .iter()
            .map(|&(step, _)| {
                let mut ph = Complex64::new(1.0, 0.0);
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, &c) in replica.iter().enumerate() {
                    acc += ph * c;
                    ph *= step;
                    if i % 4096 == 4095 {
                        ph /= ph.norm();
                    }
                }
                acc * scale
            })
            .collect();

        WindowGains {
            replica,
            signal,
            grid,
            free,
        }
    }

    /// Dump of window `w`. Draws the same random numbers in the same order
    /// as [`Synthesizer::window`].
    fn dump(&self, w: usize, gains: &WindowGains) -> Complex64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(w as u64);
        let mut acc = gains.signal;
        for (&(_, amp), g) in self.grid.iter().zip(&gains.grid) {
            let theta: f64 = rng.random_range(0.0..TAU);
            acc += Complex64::from_polar(amp, theta) * g;
        }
        for (&(_, amp), g) in self.free.iter().zip(&gains.free) {
            let theta: f64 = rng.random_range(0.0..TAU);
            acc += Complex64::from_polar(amp, theta) * g;
        }
        if let Some(sigma) = self.thermal_sigma {
            let mut thermal = Complex64::new(0.0, 0.0);
            for &c in &gains.replica {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                thermal += Complex64::new(re, im) * c;
            }
            acc += thermal * (sigma / self.n as f64);
        }
        acc
    }

    fn window(&self, w: usize, buf: &mut [Complex64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(w as u64);

        let start = (w * self.n) as i64;
        let mut carrier = Complex64::new(self.signal_amp, 0.0);
        for (i, b) in buf.iter_mut().enumerate() {
            *b = carrier * self.chip(start + i as i64);
            carrier *= self.doppler_step;
            if i % 4096 == 4095 {
                carrier *= self.signal_amp / carrier.norm();
            }
        }

        if let Some(ifft) = &self.ifft {
            let mut spec = vec![Complex64::new(0.0, 0.0); self.n];
            for &(bin, amp) in &self.grid {
                let theta: f64 = rng.random_range(0.0..TAU);
                spec[bin] = Complex64::from_polar(amp, theta);
            }
            ifft.process(&mut spec);
            for (b, s) in buf.iter_mut().zip(&spec) {
                *b += s;
            }
        }

        for &(step, amp) in &self.free {
            let theta: f64 = rng.random_range(0.0..TAU);
            let mut ph = Complex64::from_polar(amp, theta);
            for (i, b) in buf.iter_mut().enumerate() {
                *b += ph;
                ph *= step;
                if i % 4096 == 4095 {
                    ph *= amp / ph.norm();
                }
            }
        }

        if let Some(sigma) = self.thermal_sigma {
            for b in buf.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *b += Complex64::new(re, im) * sigma;
            }
        }
    }
}
