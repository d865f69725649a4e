use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use l1emc::ingest::{parse_capture, SpectrumCapture};
use l1emc::limits::find_baseline_limit;
use l1emc::model::{Coupling, Phasing, ReceiverParams};
use l1emc::noise::{NoiseSpectrum, Tone};
use l1emc::oracle::read_waveform;
use l1emc::units::L1_CARRIER_HZ;
use serde_json::Value;

fn l1emc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l1emc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn object(args: &[&str]) -> Value {
    let mut all = args.to_vec();
    all.extend(["--format", "object"]);
    let out = l1emc(&all);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_str(&stdout(&out)).unwrap()
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| v.as_str().unwrap().parse().unwrap())
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_single_tone() {
    let out = l1emc(&["analyze", "--cwi", "--power", "-60dBm", "--offset", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("cn0_db_hz"));
    assert!(text.contains("# tool: l1emc"));
    assert!(text.contains("narrowband"));
}

#[test]
fn bare_power_is_a_usage_error() {
    let out = l1emc(&["analyze", "--cwi", "--power", "-60"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("needs a unit"));
}

#[test]
fn missing_noise_source_is_a_usage_error() {
    assert_eq!(l1emc(&["analyze", "--power", "-60dBm"]).status.code(), Some(2));
}

#[test]
fn mesoband_offset_from_carrier_raises_cn0() {
    let at = |center: &str| {
        num(&object(&[
            "analyze",
            "--mesoband",
            "20kHz",
            "--center",
            center,
            "--power",
            "-100dBm",
            "--phasing",
            "expected",
        ])["cn0_db_hz"])
    };
    let diff = at("550kHz") - at("0");
    assert!((diff - 4.4).abs() <= 0.5, "difference {diff}");
}

#[test]
fn default_limit_curves_step_by_bandwidth() {
    let v = object(&["limit", "--offsets", "0"]);
    let curves = v["result"]["curves"].as_array().unwrap();
    let meso: Vec<(f64, f64)> = curves
        .iter()
        .filter(|c| c["noise_class"]["class"] == "mesoband")
        .map(|c| {
            (
                num(&c["noise_class"]["bandwidth_hz"]),
                num(&c["points"][0]["max_power_dbm"]),
            )
        })
        .collect();
    assert_eq!(meso.iter().map(|m| m.0).collect::<Vec<_>>(), vec![20e3, 40e3, 80e3]);
    for w in meso.windows(2) {
        assert!((w[1].1 - w[0].1 + 3.0103).abs() < 1e-3);
    }
}

#[test]
fn single_point_grid_echoes_the_baseline() {
    let v = object(&["limit", "--offsets", "0", "--bandwidths", "20kHz"]);
    let curve = v["result"]["curves"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["noise_class"]["class"] == "mesoband")
        .unwrap()
        .clone();
    assert_eq!(curve["points"].as_array().unwrap().len(), 1);
    assert!((num(&curve["points"][0]["max_power_dbm"]) - num(&curve["baseline"]["power_dbm"])).abs() < 1e-9);
}

fn limit_table(dir: &Path) -> std::path::PathBuf {
    let out = l1emc(&["limit", "--offsets", "-1MHz:1MHz:10kHz", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let path = dir.join("limits.csv");
    fs::write(&path, out.stdout).unwrap();
    path
}

fn baseline_dbm() -> f64 {
    let v = object(&["limit", "--offsets", "0", "--bandwidths", "20kHz"]);
    num(&v["result"]["curves"][1]["baseline"]["power_dbm"])
}

#[test]
fn limit_round_trips_through_check() {
    let dir = tempfile::tempdir().unwrap();
    let limits = limit_table(dir.path());
    let capture = dir.path().join("at_limit.csv");
    let power = format!("{}dBm", baseline_dbm());
    let out = l1emc(&[
        "analyze",
        "--mesoband",
        "20kHz",
        "--power",
        &power,
        "--export-capture",
        path_str(&capture),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let v = object(&["check", "--capture", path_str(&capture), "--limits", path_str(&limits)]);
    assert!(num(&v["result"]["margin_db"]).abs() <= 0.1, "{v}");

    let over = l1emc(&[
        "check",
        "--capture",
        path_str(&capture),
        "--limits",
        path_str(&limits),
        "--atten",
        "6",
    ]);
    assert_eq!(over.status.code(), Some(1));
}

#[test]
fn empty_capture_passes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    fs::write(&path, "# unit: dBm\n# rbw_hz: 1000\n").unwrap();
    let out = l1emc(&["check", "--capture", path_str(&path)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("inf"));
}

#[test]
fn malformed_capture_is_an_error_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "# unit: dBm\n# rbw_hz: 1000\n1575420000,-80\n1575421000,loud\n").unwrap();
    let out = l1emc(&["check", "--capture", path_str(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn flat_broadband_at_the_anchor_is_a_boundary_pass() {
    let dir = tempfile::tempdir().unwrap();
    let limits = limit_table(dir.path());
    let v = object(&["limit", "--offsets", "0"]);
    let anchor = v["result"]["curves"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["noise_class"]["class"] == "broadband")
        .map(|c| num(&c["points"][0]["max_power_dbm"]))
        .unwrap();
    let power = format!("{anchor}dBm");
    let out = l1emc(&[
        "check",
        "--rect",
        "50MHz",
        "--spacing",
        "1kHz",
        "--power",
        &power,
        "--limits",
        path_str(&limits),
        "--format",
        "object",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(num(&v["result"]["margin_db"]).abs() < 0.01);
}

/// Switching-supply-like comb: harmonics every 100 kHz, falling 1 dB per
/// harmonic, scaled to use four times the interference budget.
#[test]
fn over_limit_comb_fails_and_names_the_worst_harmonic() {
    let rx = ReceiverParams::default();
    let tones: Vec<Tone> = (-5..=5)
        .map(|k: i32| Tone::new(k as f64 * 100e3, 10f64.powf(-(k.abs() as f64) / 10.0), 0.0).unwrap())
        .collect();
    let comb = NoiseSpectrum::new(tones, "comb").unwrap();
    let limit = find_baseline_limit(&comb, &Coupling::default(), Phasing::Expected, &rx, rx.cn0_floor_db_hz).unwrap();
    let total = l1emc::units::watts_to_dbm(comb.total_power_w());
    let over = comb.scale_power(limit + 6.0 - total);
    let capture = SpectrumCapture::from_spectrum(&over, L1_CARRIER_HZ, 1e3).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("comb.csv");
    fs::write(&path, capture.to_csv()).unwrap();
    let limits = limit_table(dir.path());

    for extra in [vec![], vec!["--limits", path_str(&limits)]] {
        let mut args = vec!["check", "--capture", path_str(&path), "--format", "object"];
        args.extend(extra);
        let out = l1emc(&args);
        assert_eq!(out.status.code(), Some(1));
        let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
        let margin = num(&v["result"]["margin_db"]);
        assert!((margin + 6.0).abs() < 0.1, "margin {margin}");
        let worst = &v["result"]["worst_offender"];
        assert_eq!(worst["noise_class"]["class"], "narrowband");
        assert_eq!(num(&worst["center_hz"]), 0.0);
    }
}

#[test]
fn exported_capture_parses_and_reproduces_the_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rect.csv");
    let base = [
        "analyze",
        "--rect",
        "200kHz",
        "--center",
        "-300kHz",
        "--psd",
        "-155dBm/Hz",
        "--phasing",
        "expected",
    ];
    let mut args = base.to_vec();
    args.extend(["--export-capture", path_str(&path)]);
    let direct = num(&object(&args)["cn0_db_hz"]);
    let capture = parse_capture(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(capture.points.len(), 1001);
    let reread = num(&object(&["analyze", "--capture", path_str(&path), "--phasing", "expected"])["cn0_db_hz"]);
    assert!((direct - reread).abs() < 1e-6, "{direct} vs {reread}");
}

#[test]
fn simulate_is_deterministic() {
    let args = [
        "simulate",
        "--mesoband",
        "20kHz",
        "--power",
        "-100dBm",
        "--windows",
        "60",
        "--seed",
        "9",
    ];
    let a = l1emc(&args);
    let b = l1emc(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = l1emc(&[&args[..7], &["--seed", "10"]].concat());
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn simulate_dump_is_readable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("iq.bin");
    let out = l1emc(&[
        "simulate",
        "--cwi",
        "--power",
        "-110dBm",
        "--windows",
        "4",
        "--dump",
        path_str(&path),
        "--dump-windows",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let (rate, samples) = read_waveform(fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(rate, 10e6);
    assert_eq!(samples.len(), 100_000);
}

#[test]
fn sweep_bandwidth_pairs_are_three_db_apart() {
    let mut diffs = Vec::new();
    for prn in 1..=8 {
        let prn = prn.to_string();
        let at = |bw: &str| {
            let v = object(&[
                "sweep",
                "--mesoband",
                bw,
                "--psd",
                "-150dBm/Hz",
                "--levels",
                "10,20",
                "--mode",
                "analytic",
                "--prn",
                &prn,
            ]);
            v["sweep"]
                .as_array()
                .unwrap()
                .iter()
                .map(|r| num(&r["analytic_cn0_db_hz"]))
                .collect::<Vec<_>>()
        };
        let (a, b) = (at("20kHz"), at("40kHz"));
        diffs.push(a[1] - b[1]);
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    assert!((mean - 3.0).abs() <= 0.5, "mean {mean}, per PRN {diffs:?}");
}

#[test]
fn sweep_analytic_and_oracle_agree() {
    let v = object(&[
        "sweep",
        "--mesoband",
        "40kHz",
        "--center",
        "550kHz",
        "--power",
        "-100dBm",
        "--levels",
        "0:10:5",
        "--windows",
        "200",
        "--prn",
        "3",
    ]);
    let rows = v["sweep"].as_array().unwrap();
    assert_eq!(
        rows.iter().map(|r| num(&r["level_db"])).collect::<Vec<_>>(),
        vec![0.0, 5.0, 10.0]
    );
    assert!(num(&v["max_abs_difference_db"]) <= 2.1, "{v}");
}

#[test]
fn config_file_presets_the_receiver() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("rx.toml");
    fs::write(&good, "[receiver]\ncn0_floor_db_hz = 38.0\n").unwrap();
    let v = object(&["analyze", "--cwi", "--power", "-150dBm", "--config", path_str(&good)]);
    assert_eq!(num(&v["threshold_db_hz"]), 38.0);
    let v = object(&[
        "analyze",
        "--cwi",
        "--power",
        "-150dBm",
        "--config",
        path_str(&good),
        "--threshold",
        "30",
    ]);
    assert_eq!(num(&v["threshold_db_hz"]), 30.0);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[receiver]\nsignal_dbm = -130\n").unwrap();
    let out = l1emc(&["analyze", "--cwi", "--power", "-150dBm", "--config", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn receiver_flags_are_antenna_referred() {
    let v = object(&[
        "analyze",
        "--cwi",
        "--power",
        "0W",
        "--signal-power",
        "-130dBm",
        "--noise-density",
        "-174dBm/Hz",
    ]);
    assert!((num(&v["clean_cn0_db_hz"]) - 44.0).abs() < 1e-9);
}

#[test]
fn correlator_plane_input_matches_antenna_input() {
    let antenna = object(&["analyze", "--cwi", "--power", "-110dBm", "--phasing", "given"]);
    let correlator = object(&[
        "analyze",
        "--cwi",
        "--power",
        "-55dBm",
        "--input-plane",
        "correlator",
        "--phasing",
        "given",
    ]);
    assert!((num(&antenna["cn0_db_hz"]) - num(&correlator["cn0_db_hz"])).abs() < 1e-9);
}
