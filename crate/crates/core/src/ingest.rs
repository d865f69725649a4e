//! Spectrum-analyzer captures.
//!
//! Capture files are UTF-8 CSV with `#` header lines followed by
//! `frequency_hz,level` rows (LF or CRLF line ends, `.` as decimal
//! separator):
//!
//! ```text
//! # unit: dBm/Hz
//! # rbw_hz: 1000
//! # correction_db: -20
//! 1575400000,-120.5
//! 1575401000,-119.8
//! ```
//!
//! `unit` is `dBm` (power per trace point) or `dBm/Hz` (density) and
//! `rbw_hz` the analyzer resolution bandwidth; both are required.
//! `correction_db` may repeat and is added to every level. Other `# key:
//! value` lines are kept as metadata. Frequencies are absolute and must
//! strictly increase. A file with headers and no rows is an empty capture.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{NoiseSpectrum, PhasePolicy, Tone};
use crate::units::{db_to_ratio, dbm_to_watts, watts_to_dbm, L1_CARRIER_HZ};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelUnit {
    Dbm,
    DbmPerHz,
}

impl LevelUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            LevelUnit::Dbm => "dBm",
            LevelUnit::DbmPerHz => "dBm/Hz",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureMetadata {
    /// `# correction_db` values, in file order.
    pub corrections_db: Vec<f64>,
    /// Any other `# key: value` header lines.
    pub fields: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCapture {
    /// `(absolute frequency in Hz, level)`, strictly increasing in frequency.
    pub points: Vec<(f64, f64)>,
    pub level_unit: LevelUnit,
    pub rbw_hz: f64,
    pub metadata: CaptureMetadata,
}

impl SpectrumCapture {
    /// Write in the capture file format.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# unit: {}", self.level_unit.as_str());
        let _ = writeln!(out, "# rbw_hz: {}", self.rbw_hz);
        for c in &self.metadata.corrections_db {
            let _ = writeln!(out, "# correction_db: {c}");
        }
        for (k, v) in &self.metadata.fields {
            let _ = writeln!(out, "# {k}: {v}");
        }
        for (f, l) in &self.points {
            let _ = writeln!(out, "{f},{l}");
        }
        out
    }

    /// A `dBm` capture with one point per tone, for exporting synthesized
    /// spectra. Zero-power tones are left out.
    pub fn from_spectrum(noise: &NoiseSpectrum, carrier_hz: f64, rbw_hz: f64) -> Result<Self> {
        if !(rbw_hz > 0.0) {
            return Err(invalid("rbw must be positive"));
        }
        Ok(Self {
            points: noise
                .tones()
                .iter()
                .filter(|t| t.power_w > 0.0)
                .map(|t| (carrier_hz + t.offset_hz, watts_to_dbm(t.power_w)))
                .collect(),
            level_unit: LevelUnit::Dbm,
            rbw_hz,
            metadata: CaptureMetadata::default(),
        })
    }

    /// Sum of the capture's power in watts over `[lo, hi]`, corrections
    /// included. Density traces are integrated with the same cell widths
    /// [`to_noise_spectrum`] uses.
    pub fn integrated_power_w(&self, lo_hz: f64, hi_hz: f64, extra_corrections_db: &[f64]) -> f64 {
        let k = db_to_ratio(self.correction_total(extra_corrections_db));
        let kept: Vec<(f64, f64)> = self
            .points
            .iter()
            .copied()
            .filter(|(f, _)| *f >= lo_hz && *f <= hi_hz)
            .collect();
        point_powers(&kept, self.level_unit, self.rbw_hz)
            .iter()
            .map(|(_, p)| p * k)
            .sum()
    }

    fn correction_total(&self, extra: &[f64]) -> f64 {
        self.metadata.corrections_db.iter().chain(extra).sum()
    }
}

/// Watts per point before corrections. A density trace sampled more finely
/// than its rbw is integrated over midpoint cells; otherwise each point
/// stands for one rbw.
fn point_powers(points: &[(f64, f64)], unit: LevelUnit, rbw_hz: f64) -> Vec<(f64, f64)> {
    match unit {
        LevelUnit::Dbm => points.iter().map(|&(f, l)| (f, dbm_to_watts(l))).collect(),
        LevelUnit::DbmPerHz => {
            let dense = is_dense(points, rbw_hz);
            (0..points.len())
                .map(|i| {
                    let (f, l) = points[i];
                    let width = if dense { cell_width(points, i) } else { rbw_hz };
                    (f, dbm_to_watts(l) * width)
                })
                .collect()
        }
    }
}

fn is_dense(points: &[(f64, f64)], rbw_hz: f64) -> bool {
    if points.len() < 2 {
        return false;
    }
    let mean_spacing = (points[points.len() - 1].0 - points[0].0) / (points.len() - 1) as f64;
    mean_spacing < rbw_hz * (1.0 - 1e-9)
}

fn cell_width(points: &[(f64, f64)], i: usize) -> f64 {
    let n = points.len();
    let left = if i > 0 {
        points[i].0 - points[i - 1].0
    } else {
        points[1].0 - points[0].0
    };
    let right = if i + 1 < n {
        points[i + 1].0 - points[i].0
    } else {
        points[n - 1].0 - points[n - 2].0
    };
    0.5 * (left + right)
}

/// Parse capture text.
pub fn parse_capture(text: &str) -> Result<SpectrumCapture> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut unit: Option<LevelUnit> = None;
    let mut rbw: Option<f64> = None;
    let mut metadata = CaptureMetadata::default();
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut first_data_line = None;
    let mut last_line = 0;

    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
        let err = |message: String| Error::Parse { line: line_no, message };
        if line.is_empty() {
            continue;
        }
        last_line = line_no;
        if let Some(rest) = line.strip_prefix('#') {
            let Some((key, value)) = rest.split_once(':') else {
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "unit" => {
                    if unit.is_some() {
                        return Err(err("unit declared twice".into()));
                    }
                    unit = Some(match value {
                        "dBm" => LevelUnit::Dbm,
                        "dBm/Hz" => LevelUnit::DbmPerHz,
                        other => return Err(err(format!("unknown unit `{other}`; expected dBm or dBm/Hz"))),
                    });
                }
                "rbw_hz" => {
                    if rbw.is_some() {
                        return Err(err("rbw_hz declared twice".into()));
                    }
                    let v: f64 = value
                        .parse()
                        .map_err(|_| err(format!("rbw_hz `{value}` is not a number")))?;
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(err(format!("rbw_hz must be positive, got {value}")));
                    }
                    rbw = Some(v);
                }
                "correction_db" => {
                    let v: f64 = value
                        .parse()
                        .map_err(|_| err(format!("correction_db `{value}` is not a number")))?;
                    if !v.is_finite() {
                        return Err(err("correction_db must be finite".into()));
                    }
                    metadata.corrections_db.push(v);
                }
                _ => metadata.fields.push((key.to_owned(), value.to_owned())),
            }
            continue;
        }

        if first_data_line.is_none() {
            first_data_line = Some(line_no);
            if unit.is_none() {
                return Err(err("data before the `# unit:` header".into()));
            }
            if rbw.is_none() {
                return Err(err("data before the `# rbw_hz:` header".into()));
            }
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(err(format!(
                "expected `frequency_hz,level`, found {} fields",
                fields.len()
            )));
        }
        let freq: f64 = fields[0]
            .parse()
            .map_err(|_| err(format!("frequency `{}` is not a number", fields[0])))?;
        let level: f64 = fields[1]
            .parse()
            .map_err(|_| err(format!("level `{}` is not a number", fields[1])))?;
        if !freq.is_finite() || freq < 0.0 {
            return Err(err(format!(
                "frequency must be finite and non-negative, got {}",
                fields[0]
            )));
        }
        if !level.is_finite() {
            return Err(err(format!("level must be finite, got {}", fields[1])));
        }
        if let Some(&(prev, _)) = points.last() {
            if freq == prev {
                return Err(err(format!("duplicate frequency {freq} Hz")));
            }
            if freq < prev {
                return Err(err(format!("frequency {freq} Hz is below the previous {prev} Hz")));
            }
        }
        points.push((freq, level));
    }

    let end = last_line.max(1);
    let level_unit = unit.ok_or_else(|| Error::Parse {
        line: end,
        message: "missing `# unit:` header".into(),
    })?;
    let rbw_hz = rbw.ok_or_else(|| Error::Parse {
        line: end,
        message: "missing `# rbw_hz:` header".into(),
    })?;
    Ok(SpectrumCapture {
        points,
        level_unit,
        rbw_hz,
        metadata,
    })
}

pub fn read_capture(path: impl AsRef<Path>) -> Result<SpectrumCapture> {
    parse_capture(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub carrier_hz: f64,
    /// Added to every level on top of the file's own corrections.
    pub corrections_db: Vec<f64>,
    /// Points further than this from the carrier are dropped.
    pub half_band_hz: f64,
    /// Tones this many dB below the strongest are dropped; `None` keeps all.
    pub floor_db: Option<f64>,
    pub phase_seed: u64,
    /// Density cells at least twice this wide are spread over equal-power
    /// tones on a carrier-aligned grid with this spacing, so continuous
    /// noise meets the code lines the way it does in the integrator. Use
    /// `1 / Td`; `None` keeps one tone per cell.
    pub tone_spacing_hz: Option<f64>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            carrier_hz: L1_CARRIER_HZ,
            corrections_db: Vec::new(),
            half_band_hz: 25e6,
            floor_db: Some(40.0),
            phase_seed: 0,
            tone_spacing_hz: Some(200.0),
        }
    }
}

/// Convert a capture into tones at offsets from the carrier.
///
/// `dBm` points become one tone each. `dBm/Hz` points are integrated to
/// power; when the trace is sampled more finely than its rbw, the points
/// are summed into rbw-wide bins so the tone count tracks the measurement
/// resolution rather than the trace length. Density cells are then spread
/// over [`IngestOptions::tone_spacing_hz`].
pub fn to_noise_spectrum(capture: &SpectrumCapture, opts: &IngestOptions) -> Result<NoiseSpectrum> {
    if !(opts.half_band_hz > 0.0) {
        return Err(invalid("analysis band must be positive"));
    }
    let lo = opts.carrier_hz - opts.half_band_hz;
    let hi = opts.carrier_hz + opts.half_band_hz;
    let kept: Vec<(f64, f64)> = capture
        .points
        .iter()
        .copied()
        .filter(|(f, _)| *f >= lo && *f <= hi)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyBand);
    }
    let k = db_to_ratio(capture.correction_total(&opts.corrections_db));
    let powers = point_powers(&kept, capture.level_unit, capture.rbw_hz);

    let (bins, cell): (Vec<(f64, f64)>, f64) =
        if capture.level_unit == LevelUnit::DbmPerHz && is_dense(&kept, capture.rbw_hz) {
            let rbw = capture.rbw_hz;
            let start = kept[0].0;
            // Bin j collects points in [start + j rbw, start + (j + 1) rbw)
            // and sits at their mean frequency.
            let mut bins: Vec<(i64, f64, f64, usize)> = Vec::new();
            for &(f, p) in &powers {
                let idx = ((f - start) / rbw).floor() as i64;
                match bins.last_mut() {
                    Some((j, acc, fsum, n)) if *j == idx => {
                        *acc += p;
                        *fsum += f;
                        *n += 1;
                    }
                    _ => bins.push((idx, p, f, 1)),
                }
            }
            (
                bins.into_iter().map(|(_, p, fsum, n)| (fsum / n as f64, p)).collect(),
                rbw,
            )
        } else {
            // Points further apart than the rbw are separate tones, each one
            // rbw wide.
            let cell = median_spacing(&kept).map_or(capture.rbw_hz, |s| s.min(capture.rbw_hz));
            (powers, cell)
        };

    let peak = bins.iter().map(|b| b.1).fold(0.0, f64::max);
    let floor = opts.floor_db.map_or(0.0, |db| peak * db_to_ratio(-db));
    let mut kept_bins: Vec<(f64, f64)> = bins.into_iter().filter(|b| b.1 >= floor).collect();
    let mut cell = cell;
    if let (LevelUnit::DbmPerHz, Some(spacing)) = (capture.level_unit, opts.tone_spacing_hz) {
        if !(spacing > 0.0) {
            return Err(invalid("tone spacing must be positive"));
        }
        if cell >= 2.0 * spacing {
            kept_bins = spread(&kept_bins, cell, spacing, opts.carrier_hz);
            cell = spacing;
        }
    }
    let phases = PhasePolicy::Random { seed: opts.phase_seed }.phases(kept_bins.len());
    let tones = kept_bins
        .iter()
        .zip(phases)
        .map(|(&(f, p), phase)| Tone::new(f - opts.carrier_hz, p * k, phase))
        .collect::<Result<Vec<_>>>()?;
    if tones.is_empty() {
        return Err(Error::EmptyBand);
    }
    NoiseSpectrum::new(tones, "capture")?.with_cell_hz(cell)
}

/// Spread each `(frequency, power)` cell of width `cell` evenly over the
/// grid points `carrier + m * spacing` inside `[f - cell/2, f + cell/2)`.
fn spread(bins: &[(f64, f64)], cell: f64, spacing: f64, carrier_hz: f64) -> Vec<(f64, f64)> {
    let mut grid: BTreeMap<i64, f64> = BTreeMap::new();
    for &(f, p) in bins {
        let off = f - carrier_hz;
        let first = ((off - cell / 2.0) / spacing).ceil() as i64;
        let last = ((off + cell / 2.0) / spacing).ceil() as i64 - 1;
        if last < first {
            *grid.entry((off / spacing).round() as i64).or_default() += p;
            continue;
        }
        let share = p / (last - first + 1) as f64;
        for m in first..=last {
            *grid.entry(m).or_default() += share;
        }
    }
    grid.into_iter()
        .map(|(m, p)| (carrier_hz + m as f64 * spacing, p))
        .collect()
}

fn median_spacing(points: &[(f64, f64)]) -> Option<f64> {
    let mut d: Vec<f64> = points.windows(2).map(|w| w[1].0 - w[0].0).collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}
