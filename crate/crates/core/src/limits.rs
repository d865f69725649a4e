//! Emission limits derived from a C/N0 threshold, and compliance checks.
//!
//! A baseline noise shape is characterized once: the power at which the
//! predicted C/N0 falls to the threshold. Limits for other centers and
//! bandwidths follow from the envelope and from the bandwidth scaling of
//! mesoband noise, without re-running the model. All limit powers are
//! referred to the antenna plane; `gain_reference_db` records the front-end
//! gain that was taken out.
//!
//! Mesoband levels are powers measured in the baseline bandwidth, i.e. a
//! density quoted per reference bandwidth. At a fixed density the coupled
//! power grows with the occupied bandwidth, so doubling the bandwidth lowers
//! the level by 3 dB while the total power a band may carry is unchanged.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cacode::{SincEnvelope, LINE_SPACING_HZ};
use crate::error::{invalid, Error, Result};
use crate::model::broadband::{broadband_penalty_db, Psd, DEFAULT_HALF_BAND_HZ};
use crate::model::{
    cn0_from_interference, multitone_interference_power, tone_contributions, Coupling, Phasing, ReceiverParams,
};
use crate::noise::{make_mesoband, make_rectangular, NoiseSpectrum, PhasePolicy, Tone};
use crate::quad;
use crate::units::{db_to_ratio, ratio_to_db, sinc, watts_to_dbm};

/// Default C/N0 at which the broadband anchor is placed. This is a tool
/// default for "lock is lost", not a property of any receiver.
pub const DEFAULT_LOSS_OF_LOCK_DB_HZ: f64 = 25.0;

/// Occupied-bandwidth boundaries between the noise classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    /// Below this a spectrum is narrowband.
    pub narrowband_max_hz: f64,
    /// Up to this a spectrum is mesoband; above, broadband.
    pub mesoband_max_hz: f64,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        Self {
            narrowband_max_hz: LINE_SPACING_HZ,
            mesoband_max_hz: 200e3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum NoiseClass {
    Narrowband,
    Mesoband { bandwidth_hz: f64 },
    Broadband,
}

impl NoiseClass {
    pub fn classify(bandwidth_hz: f64, thresholds: &ClassThresholds) -> Self {
        if bandwidth_hz < thresholds.narrowband_max_hz {
            NoiseClass::Narrowband
        } else if bandwidth_hz <= thresholds.mesoband_max_hz {
            NoiseClass::Mesoband { bandwidth_hz }
        } else {
            NoiseClass::Broadband
        }
    }

    /// Bandwidth written to the limit table: 0 for narrowband, the band for
    /// mesoband, the characterization band for broadband.
    fn table_bandwidth(&self, broadband_hz: f64) -> f64 {
        match *self {
            NoiseClass::Narrowband => 0.0,
            NoiseClass::Mesoband { bandwidth_hz } => bandwidth_hz,
            NoiseClass::Broadband => broadband_hz,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            NoiseClass::Narrowband => "narrowband",
            NoiseClass::Mesoband { .. } => "mesoband",
            NoiseClass::Broadband => "broadband",
        }
    }
}

/// Power at which the predicted C/N0 equals the threshold, in dBm at the
/// antenna plane.
///
/// The template's shape is kept and its total power varied. Interference
/// power is linear in the tone powers for a fixed shape and phase draw, so
/// the coupling ratio is computed once and the bisection runs on the total
/// power in dB. Returns `-inf` when the threshold equals the clean C/N0 and
/// `+inf` when the template does not couple at all.
///
/// ```
/// use l1emc::{find_baseline_limit, make_mesoband, Coupling, PhasePolicy, Phasing, ReceiverParams};
///
/// let rx = ReceiverParams::default();
/// let template = make_mesoband(0.0, 20e3, 1e-3, 101, PhasePolicy::Zero)?;
/// let dbm = find_baseline_limit(&template, &Coupling::default(), Phasing::Expected, &rx, 35.0)?;
/// assert!((dbm + 107.24).abs() < 0.01);
/// # Ok::<(), l1emc::Error>(())
/// ```
pub fn find_baseline_limit(
    template: &NoiseSpectrum,
    coupling: &Coupling,
    phasing: Phasing,
    rx: &ReceiverParams,
    threshold_db_hz: f64,
) -> Result<f64> {
    rx.validate()?;
    let clean = rx.clean_cn0_db_hz();
    if threshold_db_hz > clean + 1e-9 {
        return Err(Error::Configuration(format!(
            "threshold {threshold_db_hz} dB-Hz is above the interference-free C/N0 of {clean:.3} dB-Hz"
        )));
    }
    if (threshold_db_hz - clean).abs() <= 1e-9 {
        return Ok(f64::NEG_INFINITY);
    }
    let total = template.total_power_w();
    if !(total > 0.0) {
        return Err(invalid("noise template carries no power"));
    }
    let gain = multitone_interference_power(template, coupling, rx, phasing)? / total;
    if !(gain > 0.0) {
        log::warn!("template does not couple into the correlator; limit is unbounded");
        return Ok(f64::INFINITY);
    }
    let predicted = |dbm: f64| cn0_from_interference(gain * 1e-3 * db_to_ratio(dbm), rx).cn0_db_hz;

    let guess = watts_to_dbm(rx.interference_budget_w(threshold_db_hz) / gain);
    let (mut lo, mut hi) = (guess - 60.0, guess + 60.0);
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if predicted(mid) > threshold_db_hz {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dbm = 0.5 * (lo + hi);
    let miss = (predicted(dbm) - threshold_db_hz).abs();
    if miss > 0.05 {
        return Err(Error::Configuration(format!(
            "bisection ended {miss:.3} dB from the threshold"
        )));
    }
    Ok(dbm - rx.front_end_gain_db)
}

/// A noise band by center offset and width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
}

impl Band {
    pub fn new(center_hz: f64, bandwidth_hz: f64) -> Self {
        Self {
            center_hz,
            bandwidth_hz,
        }
    }
}

/// Move a mesoband limit from one center and bandwidth to another:
/// `limit + 20 log10(env(from) / env(to)) - 10 log10(bw_to / bw_from)`.
///
/// Returns `+inf` (with a warning) when the target sits on an envelope null.
pub fn scale_limit(baseline_dbm: f64, from: Band, to: Band, env: &SincEnvelope) -> Result<f64> {
    for b in [from, to] {
        if !(b.bandwidth_hz > 0.0 && b.bandwidth_hz.is_finite()) {
            return Err(invalid(format!("bandwidth must be positive, got {}", b.bandwidth_hz)));
        }
        if b.bandwidth_hz < LINE_SPACING_HZ || b.bandwidth_hz > 200e3 {
            log::warn!(
                "{} Hz is outside the mesoband range; bandwidth scaling is approximate",
                b.bandwidth_hz
            );
        }
    }
    Ok(envelope_shift_db(baseline_dbm, from.center_hz, to.center_hz, env)?
        - ratio_to_db(to.bandwidth_hz / from.bandwidth_hz))
}

fn envelope_shift_db(dbm: f64, from_hz: f64, to_hz: f64, env: &SincEnvelope) -> Result<f64> {
    let a = env.value(from_hz).abs();
    let b = env.value(to_hz).abs();
    if a == 0.0 {
        return Err(invalid(format!(
            "reference offset {from_hz} Hz sits on an envelope null"
        )));
    }
    if b == 0.0 {
        log::warn!("offset {to_hz} Hz sits on an envelope null; limit is unbounded");
        return Ok(f64::INFINITY);
    }
    Ok(dbm + 20.0 * (a / b).log10())
}

/// The characterized case a curve is anchored to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub center_hz: f64,
    /// 0 for a single tone.
    pub bandwidth_hz: f64,
    /// Total power at the antenna plane.
    #[serde(with = "float_text")]
    pub power_dbm: f64,
    pub threshold_db_hz: f64,
}

impl Baseline {
    /// Characterize an `n_tones` mesoband through the sinc envelope with
    /// phase-averaged coupling.
    pub fn mesoband(
        center_hz: f64,
        bandwidth_hz: f64,
        n_tones: usize,
        rx: &ReceiverParams,
        threshold_db_hz: f64,
    ) -> Result<Self> {
        let template = make_mesoband(center_hz, bandwidth_hz, 1e-3, n_tones, PhasePolicy::Zero)?;
        let power_dbm = find_baseline_limit(&template, &Coupling::default(), Phasing::Expected, rx, threshold_db_hz)?;
        Ok(Self {
            center_hz,
            bandwidth_hz,
            power_dbm,
            threshold_db_hz,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitPoint {
    pub offset_hz: f64,
    /// Tone power for narrowband curves, power in the baseline bandwidth
    /// for mesoband curves, total power for the broadband curve.
    #[serde(with = "float_text")]
    pub max_power_dbm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitCurve {
    pub noise_class: NoiseClass,
    /// Sorted by offset.
    pub points: Vec<LimitPoint>,
    pub baseline: Baseline,
    /// Front-end gain removed to refer the limits to the antenna plane.
    pub gain_reference_db: f64,
}

impl LimitCurve {
    /// Point whose offset is closest to `offset_hz`.
    pub fn nearest(&self, offset_hz: f64) -> Option<&LimitPoint> {
        self.points.iter().min_by(|a, b| {
            (a.offset_hz - offset_hz)
                .abs()
                .total_cmp(&(b.offset_hz - offset_hz).abs())
        })
    }

    fn covers(&self, offset_hz: f64) -> bool {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => offset_hz >= a.offset_hz - 1.0 && offset_hz <= b.offset_hz + 1.0,
            _ => false,
        }
    }
}

fn sorted_offsets(offsets: &[f64]) -> Result<Vec<f64>> {
    if offsets.is_empty() {
        return Err(invalid("at least one offset is required"));
    }
    let mut v = offsets.to_vec();
    if v.iter().any(|f| !f.is_finite()) {
        return Err(invalid("offsets must be finite"));
    }
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

/// One mesoband curve per bandwidth, each point given by [`scale_limit`]
/// from the baseline. Curves follow the order of `bandwidths`.
pub fn build_limit_curve(
    baseline: &Baseline,
    bandwidths: &[f64],
    offsets: &[f64],
    env: &SincEnvelope,
    rx: &ReceiverParams,
) -> Result<Vec<LimitCurve>> {
    if bandwidths.is_empty() {
        return Err(invalid("at least one bandwidth is required"));
    }
    let offsets = sorted_offsets(offsets)?;
    let from = Band::new(baseline.center_hz, baseline.bandwidth_hz);
    bandwidths
        .iter()
        .map(|&bw| {
            let points = offsets
                .iter()
                .map(|&f| {
                    scale_limit(baseline.power_dbm, from, Band::new(f, bw), env).map(|p| LimitPoint {
                        offset_hz: f,
                        max_power_dbm: p,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LimitCurve {
                noise_class: NoiseClass::Mesoband { bandwidth_hz: bw },
                points,
                baseline: *baseline,
                gain_reference_db: rx.front_end_gain_db,
            })
        })
        .collect()
}

/// Worst-case single-tone limit: a tone sitting on a code line at each
/// offset, coupled through the envelope.
pub fn narrowband_curve(
    offsets: &[f64],
    env: &SincEnvelope,
    rx: &ReceiverParams,
    threshold_db_hz: f64,
) -> Result<LimitCurve> {
    let offsets = sorted_offsets(offsets)?;
    let at = |f: f64| -> Result<f64> {
        let probe = NoiseSpectrum::new(vec![Tone::new(f, 1e-3, 0.0)?], "probe")?;
        find_baseline_limit(
            &probe,
            &Coupling::Envelope(*env),
            Phasing::Expected,
            rx,
            threshold_db_hz,
        )
    };
    let points = offsets
        .iter()
        .map(|&f| {
            at(f).map(|p| LimitPoint {
                offset_hz: f,
                max_power_dbm: p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitCurve {
        noise_class: NoiseClass::Narrowband,
        points,
        baseline: Baseline {
            center_hz: 0.0,
            bandwidth_hz: 0.0,
            power_dbm: at(0.0)?,
            threshold_db_hz,
        },
        gain_reference_db: rx.front_end_gain_db,
    })
}

/// Flat noise over `+/- half_band_hz` that brings C/N0 down to
/// `loss_of_lock_db_hz`. The single point holds the total power over the
/// band.
pub fn broadband_curve(
    env: &SincEnvelope,
    rx: &ReceiverParams,
    loss_of_lock_db_hz: f64,
    half_band_hz: f64,
) -> Result<LimitCurve> {
    let spacing = 1.0 / rx.integration_time_s;
    let template = make_rectangular(
        0.0,
        2.0 * half_band_hz,
        1e-3 / (2.0 * half_band_hz),
        spacing,
        PhasePolicy::Zero,
    )?;
    let power_dbm = find_baseline_limit(
        &template,
        &Coupling::Envelope(*env),
        Phasing::Expected,
        rx,
        loss_of_lock_db_hz,
    )?;
    Ok(LimitCurve {
        noise_class: NoiseClass::Broadband,
        points: vec![LimitPoint {
            offset_hz: 0.0,
            max_power_dbm: power_dbm,
        }],
        baseline: Baseline {
            center_hz: 0.0,
            bandwidth_hz: 2.0 * half_band_hz,
            power_dbm,
            threshold_db_hz: loss_of_lock_db_hz,
        },
        gain_reference_db: rx.front_end_gain_db,
    })
}

/// A complete set of curves, as written to and read from a limit table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitSet {
    pub curves: Vec<LimitCurve>,
}

impl LimitSet {
    /// Narrowband, mesoband (one per bandwidth) and broadband curves for
    /// `rx`, anchored on a mesoband of `baseline_bw_hz` at the carrier.
    pub fn standard(
        rx: &ReceiverParams,
        threshold_db_hz: f64,
        baseline_bw_hz: f64,
        baseline_tones: usize,
        bandwidths: &[f64],
        offsets: &[f64],
        loss_of_lock_db_hz: f64,
    ) -> Result<Self> {
        let env = SincEnvelope::default();
        let baseline = Baseline::mesoband(0.0, baseline_bw_hz, baseline_tones, rx, threshold_db_hz)?;
        let mut curves = vec![narrowband_curve(offsets, &env, rx, threshold_db_hz)?];
        curves.extend(build_limit_curve(&baseline, bandwidths, offsets, &env, rx)?);
        curves.push(broadband_curve(&env, rx, loss_of_lock_db_hz, DEFAULT_HALF_BAND_HZ)?);
        Ok(Self { curves })
    }

    pub fn threshold_db_hz(&self) -> Option<f64> {
        self.curves
            .iter()
            .find(|c| !matches!(c.noise_class, NoiseClass::Broadband))
            .map(|c| c.baseline.threshold_db_hz)
    }

    fn narrowband(&self) -> Option<&LimitCurve> {
        self.curves.iter().find(|c| c.noise_class == NoiseClass::Narrowband)
    }

    fn broadband(&self) -> Option<&LimitCurve> {
        self.curves.iter().find(|c| c.noise_class == NoiseClass::Broadband)
    }

    /// Mesoband curve with the bandwidth closest to `bw` on a log scale.
    fn mesoband(&self, bw: f64) -> Option<(&LimitCurve, f64)> {
        self.curves
            .iter()
            .filter_map(|c| match c.noise_class {
                NoiseClass::Mesoband { bandwidth_hz } => Some((c, bandwidth_hz)),
                _ => None,
            })
            .min_by(|a, b| (a.1 / bw).ln().abs().total_cmp(&(b.1 / bw).ln().abs()))
    }

    /// Serialize as the limit table.
    ///
    /// ```text
    /// # l1emc limit table
    /// # curve: class=<name> bandwidth_hz=<f> gain_reference_db=<f> baseline_center_hz=<f> baseline_bandwidth_hz=<f> baseline_power_dbm=<f> threshold_db_hz=<f>
    /// offset_hz,bandwidth_hz,max_power_dbm
    /// <f>,<f>,<f>
    /// ```
    ///
    /// One `# curve:` line per curve; rows are matched to curves by
    /// bandwidth (0 for narrowband, the characterization band for
    /// broadband).
    pub fn to_table(&self, provenance: &[String]) -> String {
        let mut out = String::from("# l1emc limit table\n");
        for line in provenance {
            let _ = writeln!(out, "# {line}");
        }
        for c in &self.curves {
            let b = &c.baseline;
            let _ = writeln!(
                out,
                "# curve: class={} bandwidth_hz={} gain_reference_db={} baseline_center_hz={} baseline_bandwidth_hz={} baseline_power_dbm={} threshold_db_hz={}",
                c.noise_class.name(),
                c.noise_class.table_bandwidth(b.bandwidth_hz),
                c.gain_reference_db,
                b.center_hz,
                b.bandwidth_hz,
                b.power_dbm,
                b.threshold_db_hz
            );
        }
        out.push_str("offset_hz,bandwidth_hz,max_power_dbm\n");
        for c in &self.curves {
            let bw = c.noise_class.table_bandwidth(c.baseline.bandwidth_hz);
            for p in &c.points {
                let _ = writeln!(out, "{},{},{}", p.offset_hz, bw, p.max_power_dbm);
            }
        }
        out
    }

    /// Parse a table written by [`LimitSet::to_table`].
    pub fn from_table(text: &str) -> Result<Self> {
        let mut curves: Vec<(f64, LimitCurve)> = Vec::new();
        let mut seen_columns = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r').trim();
            let parse_err = |message: String| Error::Parse { line: line_no, message };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(spec) = rest.trim().strip_prefix("curve:") {
                    curves.push(parse_curve_header(spec).map_err(parse_err)?);
                }
                continue;
            }
            if !seen_columns {
                if line != "offset_hz,bandwidth_hz,max_power_dbm" {
                    return Err(parse_err(format!("expected the column header, found `{line}`")));
                }
                seen_columns = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(format!("`{s}` is not a number")))
            };
            let (offset_hz, bw, max_power_dbm) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
            if offset_hz.is_nan() || bw.is_nan() || max_power_dbm.is_nan() || !offset_hz.is_finite() {
                return Err(parse_err("offsets must be finite and values not NaN".into()));
            }
            let curve = curves
                .iter_mut()
                .find(|(b, _)| *b == bw)
                .ok_or_else(|| parse_err(format!("no curve declared for bandwidth {bw}")))?;
            curve.1.points.push(LimitPoint {
                offset_hz,
                max_power_dbm,
            });
        }
        if !seen_columns {
            return Err(Error::Parse {
                line: text.lines().count().max(1),
                message: "missing column header".into(),
            });
        }
        let curves = curves
            .into_iter()
            .map(|(_, mut c)| {
                c.points.sort_by(|a, b| a.offset_hz.total_cmp(&b.offset_hz));
                c
            })
            .collect();
        Ok(Self { curves })
    }
}

fn parse_curve_header(spec: &str) -> std::result::Result<(f64, LimitCurve), String> {
    let mut class = None;
    let mut values = std::collections::HashMap::new();
    for item in spec.split_whitespace() {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| format!("`{item}` is not key=value"))?;
        if k == "class" {
            class = Some(v.to_owned());
        } else {
            let x: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
            values.insert(k.to_owned(), x);
        }
    }
    let get = |k: &str| values.get(k).copied().ok_or_else(|| format!("curve header lacks {k}"));
    let bw = get("bandwidth_hz")?;
    let noise_class = match class.as_deref() {
        Some("narrowband") => NoiseClass::Narrowband,
        Some("mesoband") => NoiseClass::Mesoband { bandwidth_hz: bw },
        Some("broadband") => NoiseClass::Broadband,
        Some(other) => return Err(format!("unknown curve class `{other}`")),
        None => return Err("curve header lacks class".into()),
    };
    Ok((
        bw,
        LimitCurve {
            noise_class,
            points: Vec::new(),
            baseline: Baseline {
                center_hz: get("baseline_center_hz")?,
                bandwidth_hz: get("baseline_bandwidth_hz")?,
                power_dbm: get("baseline_power_dbm")?,
                threshold_db_hz: get("threshold_db_hz")?,
            },
            gain_reference_db: get("gain_reference_db")?,
        },
    ))
}

/// The tone or band that uses up the most of the interference budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offender {
    pub noise_class: NoiseClass,
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    /// Total power at the antenna plane.
    pub power_dbm: f64,
    #[serde(with = "float_text")]
    pub margin_db: f64,
}

/// Outcome of a compliance check. `pass` holds exactly when
/// `margin_db >= 0`, which is when `predicted_cn0_db_hz` reaches the
/// threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    /// Positive when compliant.
    #[serde(with = "float_text")]
    pub margin_db: f64,
    pub worst_offender: Option<Offender>,
    /// In curve mode, the C/N0 implied by the margin.
    #[serde(with = "float_text")]
    pub predicted_cn0_db_hz: f64,
}

/// Non-finite values are written as the strings `inf`, `-inf` and `nan`.
mod float_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Interference contributed by one contiguous band of a spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandContribution {
    pub noise_class: NoiseClass,
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub power_w: f64,
    /// Phase-averaged correlator power, `sum |a_n|^2` over the band.
    pub interference_w: f64,
}

/// Split `spectrum` into contiguous bands (tones no more than 1.5 cells
/// apart) and report each band's phase-averaged interference.
pub fn band_breakdown(
    spectrum: &NoiseSpectrum,
    coupling: &Coupling,
    rx: &ReceiverParams,
    thresholds: &ClassThresholds,
) -> Result<Vec<BandContribution>> {
    clusters(spectrum)
        .into_iter()
        .map(|g| {
            let s = NoiseSpectrum::new(g.tones.clone(), "band")?;
            let bw = g.width();
            Ok(BandContribution {
                noise_class: NoiseClass::classify(bw, thresholds),
                center_hz: g.center(),
                bandwidth_hz: bw,
                power_w: g.power_w(),
                interference_w: tone_contributions(&s, coupling, rx)?.iter().sum(),
            })
        })
        .collect()
}

pub enum CheckMode<'a> {
    /// Predict C/N0 for the whole spectrum and compare with the threshold.
    Direct,
    /// Compare each band of the spectrum with the applicable curve.
    Curve(&'a LimitSet),
}

/// A run of tones no further apart than 1.5 cells.
#[derive(Clone, Debug)]
struct Cluster {
    tones: Vec<Tone>,
    cell_hz: Option<f64>,
}

impl Cluster {
    /// Occupied bandwidth; a lone tone occupies none.
    fn width(&self) -> f64 {
        if self.tones.len() == 1 {
            return 0.0;
        }
        let span = self.tones.last().map_or(0.0, |t| t.offset_hz) - self.tones.first().map_or(0.0, |t| t.offset_hz);
        span.max(self.cell_hz.unwrap_or(0.0))
    }

    fn center(&self) -> f64 {
        0.5 * (self.tones.first().map_or(0.0, |t| t.offset_hz) + self.tones.last().map_or(0.0, |t| t.offset_hz))
    }

    fn power_w(&self) -> f64 {
        self.tones.iter().map(|t| t.power_w).sum()
    }

    fn offender(&self, thresholds: &ClassThresholds, margin_db: f64) -> Offender {
        let bw = self.width();
        Offender {
            noise_class: NoiseClass::classify(bw, thresholds),
            center_hz: self.center(),
            bandwidth_hz: bw,
            power_dbm: watts_to_dbm(self.power_w()),
            margin_db,
        }
    }
}

fn clusters(spectrum: &NoiseSpectrum) -> Vec<Cluster> {
    let cell = spectrum.cell_hz();
    let mut out: Vec<Cluster> = Vec::new();
    for &t in spectrum.tones().iter().filter(|t| t.power_w > 0.0) {
        let joins = match (cell, out.last().and_then(|c| c.tones.last())) {
            (Some(cell), Some(prev)) => t.offset_hz - prev.offset_hz <= 1.5 * cell,
            _ => false,
        };
        if joins {
            out.last_mut().expect("joins implies a cluster").tones.push(t);
        } else {
            out.push(Cluster {
                tones: vec![t],
                cell_hz: cell,
            });
        }
    }
    out
}

/// Check a measured spectrum, referred to the antenna plane, against the
/// threshold.
///
/// Direct mode predicts C/N0 through the sinc envelope with phase-averaged
/// coupling. Curve mode splits the spectrum into contiguous bands, compares
/// each with its curve and combines the per-band budget fractions; flat
/// broadband bands are rescaled from the broadband anchor by their share of
/// the envelope, shaped ones take the amplitude-weighted penalty. Bands a
/// curve cannot judge send the whole check to direct mode with a warning.
pub fn check_compliance(
    measured: &NoiseSpectrum,
    rx: &ReceiverParams,
    threshold_db_hz: f64,
    mode: CheckMode<'_>,
) -> Result<Verdict> {
    check_compliance_with(measured, rx, threshold_db_hz, mode, &ClassThresholds::default())
}

pub fn check_compliance_with(
    measured: &NoiseSpectrum,
    rx: &ReceiverParams,
    threshold_db_hz: f64,
    mode: CheckMode<'_>,
    thresholds: &ClassThresholds,
) -> Result<Verdict> {
    rx.validate()?;
    let budget = rx.interference_budget_w(threshold_db_hz);
    if budget < 0.0 {
        return Err(Error::Configuration(format!(
            "threshold {threshold_db_hz} dB-Hz is above the interference-free C/N0 of {:.3} dB-Hz",
            rx.clean_cn0_db_hz()
        )));
    }
    let groups = clusters(measured);
    if groups.is_empty() {
        return Ok(Verdict {
            pass: true,
            margin_db: f64::INFINITY,
            worst_offender: None,
            predicted_cn0_db_hz: cn0_from_interference(0.0, rx).cn0_db_hz,
        });
    }
    match mode {
        CheckMode::Direct => direct(&groups, measured, rx, budget, thresholds),
        CheckMode::Curve(set) => {
            if let Some(t) = set.threshold_db_hz() {
                if (t - threshold_db_hz).abs() > 1e-9 {
                    log::warn!("curves were built for {t} dB-Hz, checking against {threshold_db_hz} dB-Hz");
                }
            }
            match curve_margins(&groups, set, thresholds) {
                Some(margins) => {
                    let total = combine(margins.iter().copied());
                    let worst = margins
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(i, &m)| groups[i].offender(thresholds, m));
                    let implied = budget * db_to_ratio(-total);
                    Ok(Verdict {
                        pass: total >= 0.0,
                        margin_db: total,
                        worst_offender: worst,
                        predicted_cn0_db_hz: cn0_from_interference(implied, rx).cn0_db_hz,
                    })
                }
                None => {
                    log::warn!("spectrum does not fit the limit curves; falling back to direct mode");
                    direct(&groups, measured, rx, budget, thresholds)
                }
            }
        }
    }
}

fn combine(margins: impl Iterator<Item = f64>) -> f64 {
    let used: f64 = margins.map(|m| db_to_ratio(-m)).sum();
    if used == 0.0 {
        f64::INFINITY
    } else {
        -ratio_to_db(used)
    }
}

fn margin_db(budget: f64, interference: f64) -> f64 {
    if interference == 0.0 {
        f64::INFINITY
    } else if budget == 0.0 {
        f64::NEG_INFINITY
    } else {
        ratio_to_db(budget / interference)
    }
}

fn direct(
    groups: &[Cluster],
    measured: &NoiseSpectrum,
    rx: &ReceiverParams,
    budget: f64,
    thresholds: &ClassThresholds,
) -> Result<Verdict> {
    let at_correlator = measured.scale_power(rx.front_end_gain_db);
    let coupling = Coupling::default();
    let interference = multitone_interference_power(&at_correlator, &coupling, rx, Phasing::Expected)?;
    let margin = margin_db(budget, interference);
    let mut worst = None;
    let mut worst_i = -1.0;
    for g in groups {
        let s = NoiseSpectrum::new(g.tones.clone(), "cluster")?.scale_power(rx.front_end_gain_db);
        let i: f64 = tone_contributions(&s, &coupling, rx)?.iter().sum();
        if i > worst_i {
            worst_i = i;
            worst = Some(g.offender(thresholds, margin_db(budget, i)));
        }
    }
    let cn0 = cn0_from_interference(interference, rx).cn0_db_hz;
    Ok(Verdict {
        pass: margin >= 0.0,
        margin_db: margin,
        worst_offender: worst,
        predicted_cn0_db_hz: cn0,
    })
}

/// Margins per cluster, or `None` when some cluster has no usable curve.
fn curve_margins(groups: &[Cluster], set: &LimitSet, thresholds: &ClassThresholds) -> Option<Vec<f64>> {
    let env = SincEnvelope::default();
    groups
        .iter()
        .map(|g| {
            let power_dbm = watts_to_dbm(g.power_w());
            let bw = g.width();
            let center = g.center();
            let limit = match NoiseClass::classify(bw, thresholds) {
                NoiseClass::Narrowband => {
                    let curve = set.narrowband().filter(|c| c.covers(center))?;
                    let p = curve.nearest(center)?;
                    envelope_shift_db(p.max_power_dbm, p.offset_hz, center, &env).ok()?
                }
                NoiseClass::Mesoband { .. } => {
                    let (curve, curve_bw) = set.mesoband(bw)?;
                    if !curve.covers(center) {
                        return None;
                    }
                    let p = curve.nearest(center)?;
                    let level = scale_limit(
                        p.max_power_dbm,
                        Band::new(p.offset_hz, curve_bw),
                        Band::new(center, bw),
                        &env,
                    )
                    .ok()?;
                    // Level is per reference bandwidth; the band may carry
                    // it over its whole width.
                    level + ratio_to_db(bw / curve.baseline.bandwidth_hz)
                }
                NoiseClass::Broadband => return broadband_margin(g, set.broadband()?, &env),
            };
            Some(limit - power_dbm)
        })
        .collect()
}

/// Flat bands (PSD within 1 dB) are held to the anchor rescaled by the
/// envelope power they cover; shaped bands take the amplitude-weighted
/// penalty against the anchor density.
fn broadband_margin(g: &Cluster, curve: &LimitCurve, env: &SincEnvelope) -> Option<f64> {
    let cell = g.cell_hz?;
    let anchor = curve.points.first()?;
    let band = curve.baseline.bandwidth_hz;
    let half = band / 2.0;
    let p0 = 1e-3 * db_to_ratio(anchor.max_power_dbm) / band;
    let mut psd: Vec<(f64, f64)> = g.tones.iter().map(|t| (t.offset_hz, t.power_w / cell)).collect();
    let (lo, hi) = psd
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(_, p)| (lo.min(p), hi.max(p)));
    // Each tone stands for one cell, so the band reaches half a cell past
    // the outer tones.
    let first = psd[0];
    let last = psd[psd.len() - 1];
    let (a, b) = (first.0 - cell / 2.0, last.0 + cell / 2.0);
    if ratio_to_db(hi / lo) <= 1.0 {
        let ta = env.chip_duration_s();
        let coupled = |a: f64, b: f64| quad::integrate(|f| sinc(PI * f * ta).powi(2), a, b, 10e3, 1e-12);
        let share = coupled(a.max(-half), b.min(half));
        if share <= 0.0 {
            return Some(f64::INFINITY);
        }
        let mean_psd = g.power_w() / (b - a);
        Some(ratio_to_db(p0 * coupled(-half, half) / share / mean_psd))
    } else {
        psd.insert(0, (a, first.1));
        psd.push((b, last.1));
        broadband_penalty_db(&Psd::Table(&psd), p0, env, half).ok().map(|d| -d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cn0;
    use crate::noise::make_cwi;

    fn rx() -> ReceiverParams {
        ReceiverParams::default()
    }

    #[test]
    fn baseline_round_trip() {
        let rx = rx();
        let b = Baseline::mesoband(0.0, 20e3, 42, &rx, 35.0).unwrap();
        let noise = make_mesoband(0.0, 20e3, 1.0, 42, PhasePolicy::Zero)
            .unwrap()
            .scale_power(b.power_dbm - 30.0 + rx.front_end_gain_db);
        let r = cn0(&noise, &Coupling::default(), &rx, Phasing::Expected).unwrap();
        assert!((r.cn0_db_hz - 35.0).abs() < 0.05, "{}", r.cn0_db_hz);
    }

    #[test]
    fn boundary_and_unreachable_thresholds() {
        let rx = rx();
        let t = make_cwi(1e-3, 0.0, 0.0).unwrap();
        let c = Coupling::default();
        assert_eq!(
            find_baseline_limit(&t, &c, Phasing::Expected, &rx, rx.clean_cn0_db_hz()).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(matches!(
            find_baseline_limit(&t, &c, Phasing::Expected, &rx, 50.0),
            Err(Error::Configuration(_))
        ));
        let null = make_cwi(1e-3, 1.023e6, 0.0).unwrap();
        assert_eq!(
            find_baseline_limit(&null, &c, Phasing::Expected, &rx, 35.0).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn higher_threshold_lowers_the_limit() {
        let rx = rx();
        let a = Baseline::mesoband(0.0, 20e3, 42, &rx, 35.0).unwrap().power_dbm;
        let b = Baseline::mesoband(0.0, 20e3, 42, &rx, 38.0).unwrap().power_dbm;
        // The interference budget is Ps/SNR - N; compare against it directly.
        let budget = |t: f64| rx.interference_budget_w(t);
        assert!((a - b - ratio_to_db(budget(35.0) / budget(38.0))).abs() < 1e-5);
        assert!(a - b > 3.0);
    }

    #[test]
    fn scale_limit_examples() {
        let env = SincEnvelope::default();
        let b = Band::new(0.0, 20e3);
        assert_eq!(scale_limit(-90.0, b, b, &env).unwrap(), -90.0);
        let up = scale_limit(-90.0, b, Band::new(550e3, 20e3), &env).unwrap();
        assert!((up + 90.0 - 4.6135).abs() < 1e-3);
        let wide = scale_limit(-90.0, b, Band::new(0.0, 40e3), &env).unwrap();
        assert!((wide + 90.0 + ratio_to_db(2.0)).abs() < 1e-12);
        assert_eq!(
            scale_limit(-90.0, b, Band::new(1.023e6, 20e3), &env).unwrap(),
            f64::INFINITY
        );
        assert!(scale_limit(-90.0, b, Band::new(0.0, 0.0), &env).is_err());
    }

    #[test]
    fn curves_per_bandwidth() {
        let rx = rx();
        let env = SincEnvelope::default();
        let base = Baseline {
            center_hz: 0.0,
            bandwidth_hz: 20e3,
            power_dbm: -100.0,
            threshold_db_hz: 35.0,
        };
        let curves = build_limit_curve(&base, &[20e3], &[0.0], &env, &rx).unwrap();
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].points[0].max_power_dbm, -100.0);
        let curves = build_limit_curve(&base, &[20e3, 40e3, 80e3], &[0.0, 300e3, -300e3], &env, &rx).unwrap();
        assert_eq!(curves[1].points[0].offset_hz, -300e3);
        for w in curves.windows(2) {
            let step = w[1].points[1].max_power_dbm - w[0].points[1].max_power_dbm;
            assert!((step + 3.0103).abs() < 1e-4);
        }
    }

    #[test]
    fn table_round_trip() {
        let rx = rx();
        let set = LimitSet::standard(&rx, 35.0, 20e3, 42, &[20e3, 40e3], &[-1e6, 0.0, 1e6], 25.0).unwrap();
        let text = set.to_table(&["tool: test".into()]);
        let back = LimitSet::from_table(&text).unwrap();
        assert_eq!(back, set);
        let crlf = text.replace('\n', "\r\n");
        assert_eq!(LimitSet::from_table(&crlf).unwrap(), set);
        let broken = text.replace(
            "offset_hz,bandwidth_hz,max_power_dbm\n",
            "offset_hz,bandwidth_hz,max_power_dbm\n1,2\n",
        );
        assert!(matches!(LimitSet::from_table(&broken), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_spectrum_passes_with_infinite_margin() {
        let v = check_compliance(&NoiseSpectrum::empty("quiet"), &rx(), 35.0, CheckMode::Direct).unwrap();
        assert!(v.pass);
        assert_eq!(v.margin_db, f64::INFINITY);
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.contains("\"margin_db\":\"inf\""), "{json}");
        let back: Verdict = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn direct_and_curve_agree_on_a_mesoband() {
        let rx = rx();
        let set = LimitSet::standard(&rx, 35.0, 20e3, 42, &[20e3, 40e3, 80e3], &[0.0, 250e3, 550e3], 25.0).unwrap();
        for (center, bw, n, delta) in [(0.0, 20e3, 42, 0.0), (550e3, 40e3, 84, 3.0), (250e3, 80e3, 168, -3.0)] {
            let meso = set.mesoband(bw).unwrap().0;
            let level = meso
                .points
                .iter()
                .find(|p| p.offset_hz == center)
                .unwrap()
                .max_power_dbm;
            let limit = level + ratio_to_db(bw / 20e3);
            let noise = make_mesoband(center, bw, 1.0, n, PhasePolicy::Zero)
                .unwrap()
                .scale_power(limit - 30.0 + delta);
            let d = check_compliance(&noise, &rx, 35.0, CheckMode::Direct).unwrap();
            let c = check_compliance(&noise, &rx, 35.0, CheckMode::Curve(&set)).unwrap();
            assert!((c.margin_db + delta).abs() < 1e-6, "{c:?}");
            assert!((d.margin_db - c.margin_db).abs() < 0.5, "{d:?} {c:?}");
            assert_eq!(c.pass, c.margin_db >= 0.0);
            assert_eq!(c.predicted_cn0_db_hz >= 35.0 - 1e-9, c.margin_db >= -1e-9);
        }
    }

    #[test]
    fn flat_broadband_at_anchor_is_a_boundary_pass() {
        let rx = rx();
        let set = LimitSet::standard(&rx, 35.0, 20e3, 42, &[20e3], &[0.0], 25.0).unwrap();
        let anchor = set.broadband().unwrap().points[0].max_power_dbm;
        let cell = 100e3;
        let noise = make_rectangular(0.0, 50e6 - cell, 1.0, cell, PhasePolicy::Zero).unwrap();
        let noise = noise.scale_power(anchor - watts_to_dbm(noise.total_power_w()));
        let v = check_compliance(&noise, &rx, 35.0, CheckMode::Curve(&set)).unwrap();
        assert!(v.margin_db.abs() < 0.01, "{v:?}");
    }
}
