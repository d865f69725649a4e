use std::fs;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use l1emc::cacode::{CaCode, CHIP_RATE_HZ};
use l1emc::ingest::{read_capture, to_noise_spectrum, IngestOptions, SpectrumCapture};
use l1emc::limits::{band_breakdown, check_compliance, CheckMode, ClassThresholds, LimitSet};
use l1emc::model::{cn0, Coupling, Phasing, ReceiverParams};
use l1emc::noise::{make_cwi, make_mesoband, make_rectangular, NoiseSpectrum, PhasePolicy};
use l1emc::oracle::{simulate, write_waveform, SimConfig, SimResult};
use l1emc::units::{db_to_ratio, dbm_to_watts, watts_to_dbm, L1_CARRIER_HZ};
use l1emc::{cn0_from_interference, Error, NoiseClass};
use serde::Deserialize;

use crate::cli::{
    AnalyzeArgs, CheckArgs, CouplingArgs, LimitArgs, NoiseArgs, PhasingArg, Plane, ReceiverArgs, SimArgs, SimulateArgs,
    SweepArgs, SweepMode,
};
use crate::report::{Cell, Report, Table};

/// Settings file read by `--config`.
///
/// ```toml
/// [receiver]
/// integration_time_s = 0.005
/// output_period_s = 0.005
/// thermal_noise_w = 3.99e-13
/// signal_power_w = 4.47e-11
/// doppler_hz = 0.0
/// front_end_gain_db = 55.0
/// cn0_floor_db_hz = 35.0
///
/// [simulation]
/// sample_rate_hz = 10e6
/// n_integrations = 500
/// code_phase_samples = 0
/// include_thermal = true
/// ```
///
/// Receiver powers here are at the correlator input. Missing keys keep
/// their defaults; unknown keys are an error.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    receiver: ReceiverParams,
    simulation: SimConfig,
}

/// Everything a command needs besides its own flags.
pub struct RunContext {
    pub seed: u64,
    pub command: &'static str,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn receiver(args: &ReceiverArgs, config: &ConfigFile) -> Result<ReceiverParams> {
    let mut rx = config.receiver.clone();
    if let Some(g) = args.gain {
        // The antenna-plane levels stay put; the correlator-side ones move.
        let delta = db_to_ratio(g - rx.front_end_gain_db);
        rx.signal_power_w *= delta;
        rx.thermal_noise_w *= delta;
        rx.front_end_gain_db = g;
    }
    if let Some(t) = args.integration_time {
        rx = rx.with_integration_time(t);
    }
    if let Some(p) = args.signal_power {
        let gain = rx.front_end_gain_db;
        rx = rx.with_signal_power_dbm(p + gain);
    }
    if let Some(d) = args.noise_density {
        let gain = rx.front_end_gain_db;
        rx = rx.with_noise_density_dbm_hz(d + gain);
    }
    if let Some(f) = args.doppler {
        rx.doppler_hz = f;
    }
    if let Some(t) = args.threshold {
        rx.cn0_floor_db_hz = t;
    }
    rx.validate()?;
    Ok(rx)
}

fn sim_config(args: &SimArgs, config: &ConfigFile, seed: u64) -> Result<SimConfig> {
    let mut cfg = config.simulation.clone();
    cfg.seed = seed;
    if let Some(r) = args.sample_rate {
        cfg.sample_rate_hz = r;
    }
    if let Some(n) = args.windows {
        cfg.n_integrations = n;
    }
    if let Some(p) = args.code_phase {
        cfg.code_phase_samples = p;
    }
    if args.no_thermal {
        cfg.include_thermal = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn provenance(ctx: &RunContext, rx: &ReceiverParams) -> Vec<(String, String)> {
    let antenna = |w: f64| watts_to_dbm(w) - rx.front_end_gain_db;
    vec![
        ("tool".into(), format!("l1emc {}", env!("CARGO_PKG_VERSION"))),
        ("command".into(), ctx.command.into()),
        ("seed".into(), ctx.seed.to_string()),
        (
            "receiver".into(),
            format!(
                "Td={} s, Ts={} s, signal={:.3} dBm, noise_density={:.3} dBm/Hz, gain={} dB, doppler={} Hz, threshold={} dB-Hz",
                rx.integration_time_s,
                rx.output_period_s,
                antenna(rx.signal_power_w),
                antenna(rx.noise_density_w_per_hz()),
                rx.front_end_gain_db,
                rx.doppler_hz,
                rx.cn0_floor_db_hz
            ),
        ),
    ]
}

/// The noise described by the flags, at the antenna plane.
fn noise(args: &NoiseArgs, rx: &ReceiverParams, seed: u64) -> Result<NoiseSpectrum> {
    let policy = if args.zero_phases {
        PhasePolicy::Zero
    } else {
        PhasePolicy::Random { seed }
    };
    let total_w = |bw: f64| -> Result<f64> {
        match (args.power, args.psd) {
            (Some(p), _) => Ok(dbm_to_watts(p)),
            (None, Some(d)) => Ok(dbm_to_watts(d) * bw),
            (None, None) => bail!("give the noise level with --power or --psd"),
        }
    };
    let spectrum = if args.cwi {
        if args.psd.is_some() {
            bail!("--psd does not apply to --cwi; use --power");
        }
        make_cwi(total_w(0.0)?, args.center, args.phase)?
    } else if let Some(bw) = args.mesoband {
        let n = args
            .tones
            .unwrap_or_else(|| (bw * rx.integration_time_s).round() as usize + 1);
        make_mesoband(args.center, bw, total_w(bw)?, n, policy)?
    } else if let Some(bw) = args.rect {
        let spacing = args.spacing.unwrap_or(1.0 / rx.integration_time_s);
        make_rectangular(args.center, bw, total_w(bw)? / bw, spacing, policy)?
    } else if let Some(path) = &args.capture {
        let capture = read_capture(path).with_context(|| format!("reading capture {}", path.display()))?;
        let opts = IngestOptions {
            carrier_hz: args.carrier.unwrap_or(L1_CARRIER_HZ),
            corrections_db: args.corrections.clone(),
            half_band_hz: args.half_band.unwrap_or(IngestOptions::default().half_band_hz),
            floor_db: if args.no_floor {
                None
            } else {
                Some(args.floor.unwrap_or(40.0))
            },
            phase_seed: seed,
            tone_spacing_hz: Some(1.0 / rx.integration_time_s),
        };
        match to_noise_spectrum(&capture, &opts) {
            Ok(s) => s,
            Err(Error::EmptyBand) => {
                log::warn!("capture has no points in the analysis band");
                NoiseSpectrum::empty(path.display().to_string())
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        unreachable!("clap requires one noise source")
    };
    let to_antenna = match args.input_plane {
        Plane::Antenna => 0.0,
        Plane::Correlator => -rx.front_end_gain_db,
    };
    Ok(spectrum.scale_power(args.atten + to_antenna))
}

fn exact_coupling(prn: u8, noise: &NoiseSpectrum) -> Result<Coupling> {
    let span = ((noise.max_abs_offset_hz() + 1e3) / CHIP_RATE_HZ).ceil().max(1.0) as usize;
    Ok(Coupling::Exact(CaCode::generate(prn)?.spectrum(span)?))
}

fn coupling(args: &CouplingArgs, noise: &NoiseSpectrum) -> Result<(Coupling, String)> {
    match args.prn {
        Some(prn) => Ok((exact_coupling(prn, noise)?, format!("prn {prn}"))),
        None => Ok((Coupling::default(), "envelope".into())),
    }
}

fn phasing(args: &CouplingArgs, seed: u64) -> Phasing {
    match args.phasing {
        PhasingArg::Given => Phasing::Given,
        PhasingArg::Expected => Phasing::Expected,
        PhasingArg::Random => Phasing::Random {
            realizations: args.realizations,
            seed,
        },
    }
}

fn dbm(w: f64) -> Cell {
    Cell::Num(watts_to_dbm(w), 2)
}

pub fn analyze(args: &AnalyzeArgs, ctx: &RunContext) -> Result<Report> {
    let config = load_config(args.rx.config.as_deref())?;
    let rx = receiver(&args.rx, &config)?;
    let noise = noise(&args.noise, &rx, ctx.seed)?;
    let at_correlator = noise.scale_power(rx.front_end_gain_db);
    let (coupling, coupling_name) = coupling(&args.coupling, &noise)?;
    let phasing = phasing(&args.coupling, ctx.seed);
    let result = cn0(&at_correlator, &coupling, &rx, phasing)?;
    let clean = rx.clean_cn0_db_hz();

    if let Some(path) = &args.export_capture {
        let rbw = noise.cell_hz().unwrap_or(1.0 / rx.integration_time_s);
        let carrier = args.noise.carrier.unwrap_or(L1_CARRIER_HZ);
        let capture = SpectrumCapture::from_spectrum(&noise, carrier, rbw)?;
        fs::write(path, capture.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }

    let mut report = Report {
        provenance: provenance(ctx, &rx),
        ..Report::default()
    };
    report.provenance.push(("noise".into(), noise.label().into()));
    report.summary("tones", Cell::Int(noise.len() as i64));
    report.summary("noise_power_dbm", dbm(noise.total_power_w()));
    report.summary("coupling", Cell::Text(coupling_name));
    report.summary(
        "phasing",
        Cell::Text(format!("{:?}", args.coupling.phasing).to_lowercase()),
    );
    report.summary("cn0_db_hz", Cell::Num(result.cn0_db_hz, 2));
    report.summary("clean_cn0_db_hz", Cell::Num(clean, 2));
    report.summary("degradation_db", Cell::Num(clean - result.cn0_db_hz, 2));
    report.summary("snr_db", Cell::Num(result.snr_db, 2));
    report.summary("interference_power_dbm", dbm(result.interference_power_w));
    report.summary("thermal_power_dbm", dbm(result.thermal_power_w));
    report.summary("threshold_db_hz", Cell::Num(rx.cn0_floor_db_hz, 2));
    report.summary("above_threshold", Cell::Bool(result.cn0_db_hz >= rx.cn0_floor_db_hz));

    let bands = band_breakdown(&at_correlator, &coupling, &rx, &ClassThresholds::default())?;
    let total: f64 = bands.iter().map(|b| b.interference_w).sum();
    let mut table = Table::new(
        "bands",
        &[
            "class",
            "center_hz",
            "bandwidth_hz",
            "power_dbm",
            "interference_dbm",
            "share_pct",
        ],
    );
    for b in &bands {
        table.push(vec![
            Cell::Text(class_name(&b.noise_class)),
            Cell::Num(b.center_hz, 0),
            Cell::Num(b.bandwidth_hz, 0),
            dbm(b.power_w / db_to_ratio(rx.front_end_gain_db)),
            dbm(b.interference_w),
            Cell::Num(
                if total > 0.0 {
                    100.0 * b.interference_w / total
                } else {
                    0.0
                },
                1,
            ),
        ]);
    }
    report.tables.push(table);
    Ok(report)
}

fn class_name(c: &NoiseClass) -> String {
    match c {
        NoiseClass::Narrowband => "narrowband".into(),
        NoiseClass::Mesoband { .. } => "mesoband".into(),
        NoiseClass::Broadband => "broadband".into(),
    }
}

/// Returns the report and, for CSV output, the limit table text.
pub fn limit(args: &LimitArgs, ctx: &RunContext) -> Result<(Report, String)> {
    let config = load_config(args.rx.config.as_deref())?;
    let rx = receiver(&args.rx, &config)?;
    let tones = args
        .baseline_tones
        .unwrap_or_else(|| (args.baseline_bw * rx.integration_time_s).round() as usize + 1);
    let set = LimitSet::standard(
        &rx,
        rx.cn0_floor_db_hz,
        args.baseline_bw,
        tones,
        &args.bandwidths.0,
        &args.offsets.0,
        args.loss_of_lock,
    )?;
    let mut report = Report {
        provenance: provenance(ctx, &rx),
        ..Report::default()
    };
    let lines: Vec<String> = report.provenance.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    let text = set.to_table(&lines);

    let baseline = set
        .curves
        .iter()
        .find(|c| matches!(c.noise_class, NoiseClass::Mesoband { .. }))
        .map(|c| c.baseline);
    if let Some(b) = baseline {
        report.summary("baseline_bandwidth_hz", Cell::Num(b.bandwidth_hz, 0));
        report.summary("baseline_power_dbm", Cell::Num(b.power_dbm, 2));
    }
    report.summary("threshold_db_hz", Cell::Num(rx.cn0_floor_db_hz, 2));
    report.summary("loss_of_lock_db_hz", Cell::Num(args.loss_of_lock, 2));
    let mut table = Table::new("limits", &["class", "bandwidth_hz", "offset_hz", "max_power_dbm"]);
    for c in &set.curves {
        let bw = match c.noise_class {
            NoiseClass::Narrowband => 0.0,
            NoiseClass::Mesoband { bandwidth_hz } => bandwidth_hz,
            NoiseClass::Broadband => c.baseline.bandwidth_hz,
        };
        for p in &c.points {
            table.push(vec![
                Cell::Text(class_name(&c.noise_class)),
                Cell::Num(bw, 0),
                Cell::Num(p.offset_hz, 0),
                Cell::Num(p.max_power_dbm, 2),
            ]);
        }
    }
    report.tables.push(table);
    report.object = Some(serde_json::to_value(&set)?);
    Ok((report, text))
}

/// Returns the report and whether the spectrum passed.
pub fn check(args: &CheckArgs, ctx: &RunContext) -> Result<(Report, bool)> {
    let config = load_config(args.rx.config.as_deref())?;
    let rx = receiver(&args.rx, &config)?;
    let noise = noise(&args.noise, &rx, ctx.seed)?;
    let set = match &args.limits {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(LimitSet::from_table(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    let mode = match &set {
        Some(s) => CheckMode::Curve(s),
        None => CheckMode::Direct,
    };
    let verdict = check_compliance(&noise, &rx, rx.cn0_floor_db_hz, mode)?;

    let mut report = Report {
        provenance: provenance(ctx, &rx),
        ..Report::default()
    };
    report.provenance.push(("noise".into(), noise.label().into()));
    report.provenance.push((
        "mode".into(),
        match &args.limits {
            Some(p) => format!("curves from {}", p.display()),
            None => "direct".into(),
        },
    ));
    report.summary("pass", Cell::Bool(verdict.pass));
    report.summary("margin_db", Cell::Num(verdict.margin_db, 2));
    report.summary("predicted_cn0_db_hz", Cell::Num(verdict.predicted_cn0_db_hz, 2));
    if let Some(w) = &verdict.worst_offender {
        report.summary("worst_class", Cell::Text(class_name(&w.noise_class)));
        report.summary("worst_center_hz", Cell::Num(w.center_hz, 0));
        report.summary("worst_bandwidth_hz", Cell::Num(w.bandwidth_hz, 0));
        report.summary("worst_power_dbm", Cell::Num(w.power_dbm, 2));
        report.summary("worst_margin_db", Cell::Num(w.margin_db, 2));
    }
    report.object = Some(serde_json::to_value(&verdict)?);
    Ok((report, verdict.pass))
}

fn sim_provenance(report: &mut Report, cfg: &SimConfig, prn: u8) {
    report.provenance.push((
        "simulation".into(),
        format!(
            "prn={prn}, sample_rate={} Hz, windows={}, code_phase={} samples, thermal={}",
            cfg.sample_rate_hz, cfg.n_integrations, cfg.code_phase_samples, cfg.include_thermal
        ),
    ));
}

fn warn_aliasing(noise: &NoiseSpectrum, cfg: &SimConfig) {
    if noise.max_abs_offset_hz() > cfg.sample_rate_hz / 2.0 {
        log::warn!(
            "noise extends to {} Hz, beyond the simulated band of +/-{} Hz, and will alias",
            noise.max_abs_offset_hz(),
            cfg.sample_rate_hz / 2.0
        );
    }
}

pub fn simulate_cmd(args: &SimulateArgs, ctx: &RunContext) -> Result<Report> {
    let config = load_config(args.rx.config.as_deref())?;
    let rx = receiver(&args.rx, &config)?;
    let cfg = sim_config(&args.sim, &config, ctx.seed)?;
    let noise = noise(&args.noise, &rx, ctx.seed)?;
    let at_correlator = noise.scale_power(rx.front_end_gain_db);
    warn_aliasing(&noise, &cfg);
    let code = CaCode::generate(args.sim.prn)?;
    let sim = simulate(&code, &at_correlator, &rx, &cfg)?;
    let analytic = analytic_cn0(args.sim.prn, &at_correlator, &rx)?;

    if let Some(path) = &args.dump {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_waveform(
            BufWriter::new(file),
            &code,
            &at_correlator,
            &rx,
            &cfg,
            args.dump_windows,
        )?;
    }

    let mut report = Report {
        provenance: provenance(ctx, &rx),
        ..Report::default()
    };
    report.provenance.push(("noise".into(), noise.label().into()));
    sim_provenance(&mut report, &cfg, args.sim.prn);
    report.summary("empirical_cn0_db_hz", Cell::Num(sim.empirical_cn0_db_hz, 2));
    report.summary("analytic_cn0_db_hz", Cell::Num(analytic, 2));
    report.summary("difference_db", Cell::Num(analytic - sim.empirical_cn0_db_hz, 2));
    report.summary("signal_peak_power_dbm", dbm(sim.signal_peak_power_w));
    report.summary("noise_power_dbm", dbm(sim.noise_power_w));
    report.summary("thermal_correction_db", Cell::Num(sim.thermal_correction_db, 2));
    report.summary("samples_per_window", Cell::Int(sim.samples_per_window as i64));
    Ok(report)
}

/// Phase-averaged prediction through the simulated satellite's own code
/// lines, which is what the correlator measures.
fn analytic_cn0(prn: u8, at_correlator: &NoiseSpectrum, rx: &ReceiverParams) -> Result<f64> {
    let coupling = exact_coupling(prn, at_correlator)?;
    Ok(cn0(at_correlator, &coupling, rx, Phasing::Expected)?.cn0_db_hz)
}

pub fn sweep(args: &SweepArgs, ctx: &RunContext) -> Result<Report> {
    let config = load_config(args.rx.config.as_deref())?;
    let rx = receiver(&args.rx, &config)?;
    let cfg = sim_config(&args.sim, &config, ctx.seed)?;
    let noise = noise(&args.noise, &rx, ctx.seed)?;
    let at_correlator = noise.scale_power(rx.front_end_gain_db);
    let levels = &args.levels.0;
    let analytic_on = args.mode != SweepMode::Oracle;
    let oracle_on = args.mode != SweepMode::Analytic;

    let analytic: Vec<Option<f64>> = if analytic_on {
        let coupling = exact_coupling(args.sim.prn, &at_correlator)?;
        // Interference scales with the noise power for a fixed shape.
        let base = cn0(&at_correlator, &coupling, &rx, Phasing::Expected)?.interference_power_w;
        levels
            .iter()
            .map(|&db| Some(cn0_from_interference(base * db_to_ratio(db), &rx).cn0_db_hz))
            .collect()
    } else {
        vec![None; levels.len()]
    };
    let oracle: Vec<Option<SimResult>> = if oracle_on {
        warn_aliasing(&noise, &cfg);
        let code = CaCode::generate(args.sim.prn)?;
        let jobs = args
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1);
        parallel_map(levels, jobs, |&db| {
            simulate(&code, &at_correlator.scale_power(db), &rx, &cfg)
        })?
        .into_iter()
        .map(Some)
        .collect()
    } else {
        vec![None; levels.len()]
    };

    let mut report = Report {
        provenance: provenance(ctx, &rx),
        ..Report::default()
    };
    report.provenance.push(("noise".into(), noise.label().into()));
    if oracle_on {
        sim_provenance(&mut report, &cfg, args.sim.prn);
    }
    let mut columns = vec!["level_db", "noise_power_dbm"];
    if analytic_on {
        columns.push("analytic_cn0_db_hz");
    }
    if oracle_on {
        columns.push("oracle_cn0_db_hz");
    }
    if analytic_on && oracle_on {
        columns.push("difference_db");
    }
    let mut table = Table::new("sweep", &columns);
    let mut worst: f64 = 0.0;
    for (i, &db) in levels.iter().enumerate() {
        let mut row = vec![Cell::Num(db, 2), dbm(noise.total_power_w() * db_to_ratio(db))];
        if let Some(a) = analytic[i] {
            row.push(Cell::Num(a, 2));
        }
        if let Some(o) = &oracle[i] {
            row.push(Cell::Num(o.empirical_cn0_db_hz, 2));
        }
        if let (Some(a), Some(o)) = (analytic[i], &oracle[i]) {
            let d = a - o.empirical_cn0_db_hz;
            worst = worst.max(d.abs());
            row.push(Cell::Num(d, 2));
        }
        table.push(row);
    }
    if analytic_on && oracle_on {
        report.summary("max_abs_difference_db", Cell::Num(worst, 2));
    }
    report.tables.push(table);
    Ok(report)
}

/// Map over `items` on up to `jobs` threads, keeping input order.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> l1emc::Result<R> + Sync,
) -> Result<Vec<R>> {
    let chunk = items.len().div_ceil(jobs).max(1);
    let results: Vec<l1emc::Result<Vec<R>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<l1emc::Result<Vec<R>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u32> = (0..37).collect();
        let out = parallel_map(&items, 4, |&x| Ok(x * 2)).unwrap();
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn gain_flag_keeps_antenna_levels() {
        let config = ConfigFile::default();
        let args = ReceiverArgs {
            config: None,
            signal_power: None,
            noise_density: None,
            gain: Some(40.0),
            integration_time: None,
            doppler: None,
            threshold: None,
        };
        let rx = receiver(&args, &config).unwrap();
        let d = ReceiverParams::default();
        assert!((rx.clean_cn0_db_hz() - d.clean_cn0_db_hz()).abs() < 1e-9);
        let antenna = watts_to_dbm(rx.signal_power_w) - rx.front_end_gain_db;
        assert!((antenna + 128.5).abs() < 1e-9);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(toml::from_str::<ConfigFile>("[receiver]\nintegration_time_s = 0.01\n").is_ok());
        assert!(toml::from_str::<ConfigFile>("[receiver]\nintegration = 0.01\n").is_err());
        assert!(toml::from_str::<ConfigFile>("[other]\n").is_err());
    }
}
