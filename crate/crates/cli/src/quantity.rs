//! Parsers for flag values carrying physical units.

use l1emc::units::{ratio_to_db, watts_to_dbm};

fn split_number(s: &str) -> Result<(f64, &str), String> {
    let s = s.trim();
    // Longest prefix that reads as a number; the rest is the unit.
    let end = (1..=s.len())
        .rev()
        .filter(|&i| s.is_char_boundary(i))
        .find(|&i| s[..i].parse::<f64>().is_ok())
        .ok_or_else(|| format!("`{s}` does not start with a number"))?;
    let (num, unit) = s.split_at(end);
    let value: f64 = num.parse().map_err(|_| format!("`{s}` does not start with a number"))?;
    if !value.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok((value, unit.trim()))
}

/// Power with an explicit unit: `dBm`, `W`, `mW`, `uW`, `nW` or `pW`.
/// Returns dBm.
pub fn power_dbm(s: &str) -> Result<f64, String> {
    let (v, unit) = split_number(s)?;
    let scale = match unit {
        "dBm" | "dbm" => return Ok(v),
        "dBW" | "dbw" => return Ok(v + 30.0),
        "W" => 1.0,
        "mW" => 1e-3,
        "uW" | "µW" => 1e-6,
        "nW" => 1e-9,
        "pW" => 1e-12,
        "" => return Err(format!("`{s}` needs a unit, e.g. -60dBm or 1nW")),
        other => return Err(format!("unknown power unit `{other}`")),
    };
    if v < 0.0 {
        return Err(format!("`{s}` is a negative power"));
    }
    Ok(watts_to_dbm(v * scale))
}

/// Power spectral density: `dBm/Hz` or `W/Hz`. Returns dBm/Hz.
pub fn density_dbm_hz(s: &str) -> Result<f64, String> {
    let (v, unit) = split_number(s)?;
    match unit {
        "dBm/Hz" | "dbm/hz" => Ok(v),
        "W/Hz" if v >= 0.0 => Ok(watts_to_dbm(v)),
        "W/Hz" => Err(format!("`{s}` is a negative density")),
        "" => Err(format!("`{s}` needs a unit, e.g. -150dBm/Hz")),
        other => Err(format!("unknown density unit `{other}`")),
    }
}

/// Frequency in `Hz`, `kHz`, `MHz` or `GHz`; a bare number is Hz.
pub fn frequency_hz(s: &str) -> Result<f64, String> {
    let (v, unit) = split_number(s)?;
    let scale = match unit.to_ascii_lowercase().as_str() {
        "" | "hz" => 1.0,
        "khz" => 1e3,
        "mhz" => 1e6,
        "ghz" => 1e9,
        _ => return Err(format!("unknown frequency unit `{unit}`")),
    };
    Ok(v * scale)
}

/// Duration in `s`, `ms` or `us`; a bare number is seconds.
pub fn duration_s(s: &str) -> Result<f64, String> {
    let (v, unit) = split_number(s)?;
    let scale = match unit {
        "" | "s" => 1.0,
        "ms" => 1e-3,
        "us" | "µs" => 1e-6,
        _ => return Err(format!("unknown time unit `{unit}`")),
    };
    if !(v > 0.0) {
        return Err(format!("`{s}` must be positive"));
    }
    Ok(v * scale)
}

/// Decibels, with or without a `dB` suffix.
pub fn decibels(s: &str) -> Result<f64, String> {
    let (v, unit) = split_number(s)?;
    match unit {
        "" | "dB" | "db" => Ok(v),
        "x" => {
            if v > 0.0 {
                Ok(ratio_to_db(v))
            } else {
                Err(format!("`{s}` is not a positive ratio"))
            }
        }
        _ => Err(format!("unknown unit `{unit}` for a dB value")),
    }
}

/// C/N0 in dB-Hz, with or without a `dB-Hz` suffix.
pub fn db_hz(s: &str) -> Result<f64, String> {
    let (v, unit) = split_number(s)?;
    match unit {
        "" | "dB-Hz" | "dBHz" | "dB/Hz" => Ok(v),
        _ => Err(format!("unknown unit `{unit}` for a C/N0 value")),
    }
}

/// Either a comma list or an inclusive `start:stop:step` range.
fn grid<F: Fn(&str) -> Result<f64, String>>(s: &str, item: F) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, d) = (item(start)?, item(stop)?, item(step)?);
            if !(d > 0.0) {
                return Err("range step must be positive".into());
            }
            if b < a {
                return Err("range stop is below its start".into());
            }
            let n = ((b - a) / d + 1e-9).floor() as usize + 1;
            if n > 1_000_000 {
                return Err(format!("range has {n} points"));
            }
            Ok((0..n).map(|i| a + i as f64 * d).collect())
        }
        [_] => s.split(',').map(|p| item(p.trim())).collect(),
        _ => Err(format!("`{s}` is neither a list nor start:stop:step")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid(pub Vec<f64>);

pub fn frequency_grid(s: &str) -> Result<FrequencyGrid, String> {
    grid(s, frequency_hz).map(FrequencyGrid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbGrid(pub Vec<f64>);

pub fn db_grid(s: &str) -> Result<DbGrid, String> {
    grid(s, decibels).map(DbGrid)
}
