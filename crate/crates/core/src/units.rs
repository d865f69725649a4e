//! Power and ratio conversions.
//!
//! Everything inside the crate is carried in watts and linear ratios; dB
//! values only appear at the edges. All dB quantities are power ratios
//! (`10 log10`).

/// GPS L1 carrier frequency.
pub const L1_CARRIER_HZ: f64 = 1_575.42e6;

#[inline]
pub fn db_to_ratio(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn ratio_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

#[inline]
pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * db_to_ratio(dbm)
}

/// Zero watts maps to negative infinity.
#[inline]
pub fn watts_to_dbm(watts: f64) -> f64 {
    ratio_to_db(watts / 1e-3)
}

/// Unnormalized sinc, `sin(x) / x`, with the removable singularity filled in.
#[inline]
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_round_trip() {
        for dbm in [-170.0, -60.0, 0.0, 13.5] {
            assert!((watts_to_dbm(dbm_to_watts(dbm)) - dbm).abs() < 1e-12);
        }
        assert_eq!(watts_to_dbm(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn sinc_values() {
        assert_eq!(sinc(0.0), 1.0);
        assert!(sinc(std::f64::consts::PI).abs() < 1e-15);
        assert!((sinc(std::f64::consts::FRAC_PI_2) - 2.0 / std::f64::consts::PI).abs() < 1e-15);
    }
}
