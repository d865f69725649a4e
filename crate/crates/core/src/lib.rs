//! Interference analysis for GPS L1 C/A receivers.
//!
//! The crate predicts how narrowband, mesoband and broadband emissions near
//! 1575.42 MHz degrade the post-correlation carrier-to-noise density of a C/A
//! receiver, derives emission limits from a C/N0 threshold, and checks
//! measured spectra against those limits. A time-domain correlator
//! ([`oracle`]) is included to validate the analytical models.
//!
//! Powers are in watts at the correlator input, after the front-end gain.
//!
//! ```
//! use l1emc::{cn0, make_cwi, Coupling, Phasing, ReceiverParams};
//!
//! let rx = ReceiverParams::default();
//! assert!((rx.clean_cn0_db_hz() - 43.5).abs() < 1e-9);
//!
//! let tone = make_cwi(1e-9, 3e3, 0.0)?;
//! let result = cn0(&tone, &Coupling::default(), &rx, Phasing::Expected)?;
//! assert!(result.cn0_db_hz < rx.clean_cn0_db_hz());
//! # Ok::<(), l1emc::Error>(())
//! ```

pub mod cacode;
pub mod error;
pub mod ingest;
pub mod limits;
pub mod model;
pub mod noise;
pub mod oracle;
pub mod quad;
pub mod units;

pub use cacode::{code_spectrum, generate_ca_code, sinc_envelope, CaCode, CodeSpectrum, SincEnvelope};
pub use error::{Error, Result};
pub use ingest::{parse_capture, read_capture, to_noise_spectrum, IngestOptions, LevelUnit, SpectrumCapture};
pub use limits::{
    band_breakdown, build_limit_curve, check_compliance, find_baseline_limit, scale_limit, Band, BandContribution,
    Baseline, CheckMode, LimitCurve, LimitSet, NoiseClass, Verdict,
};
pub use model::{cn0, cn0_from_interference, Cn0Result, Coupling, Phasing, ReceiverParams};
pub use noise::{make_cwi, make_mesoband, make_rectangular, NoiseSpectrum, PhasePolicy, Tone};
pub use oracle::{simulate, sweep_power, SimConfig, SimResult};
