use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde_json::Value;

fn qkd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qkd"))
}

fn config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_calibrated.json")
}

fn json(cmd: &mut Command) -> Value {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn keyrate_at_field_values() {
    let v = json(qkd().args(["analyze", "keyrate", "--q", "0.0716", "--s", "2.409", "--fec", "1.2"]));
    let r = v["secure_fraction"].as_f64().unwrap();
    assert!((r - 0.165).abs() < 0.002, "{r}");
}

#[test]
fn snr_factors() {
    let v = json(qkd().args(["analyze", "snr", "--singles-snr", "1", "--ppair", "0.2236", "--window-ns", "1.3", "--rep-mhz", "320"]));
    assert!((v["pair_factor"].as_f64().unwrap() - 4.47).abs() < 0.03);
    assert!((v["window_factor"].as_f64().unwrap() - 1.202).abs() < 0.002);
}

#[test]
fn daylight_projection_degrades_with_irradiance() {
    let v = json(qkd().arg("analyze").arg("daylight").arg("--config").arg(config()).args([
        "--night-s",
        "20",
        "--irradiance",
        "0,500",
    ]));
    let pts = v.as_array().unwrap();
    assert_eq!(pts.len(), 2);
    assert!(pts[1]["qber"].as_f64().unwrap() > pts[0]["qber"].as_f64().unwrap());
    assert!(pts[1]["chsh"].as_f64().unwrap() < pts[0]["chsh"].as_f64().unwrap());
}

#[test]
fn invalid_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"run": {"duration_s": 10, "seed": 1}, "channel": {"detector_efficiency": 2}}"#).unwrap();
    let out = qkd().arg("simulate").arg("--config").arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("channel.detector_efficiency"));
}

#[test]
fn separate_processes_agree_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let (adir, bdir) = (dir.path().join("alice"), dir.path().join("bob"));
    let mut alice = qkd()
        .arg("alice")
        .arg("--config")
        .arg(config())
        .args(["--duration-s", "60", "--listen", "127.0.0.1:0", "--out-dir"])
        .arg(&adir)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(alice.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("alice listening on ").unwrap_or_else(|| panic!("{line}")).to_string();

    let bob = qkd()
        .arg("bob")
        .arg("--config")
        .arg(config())
        .args(["--duration-s", "60", "--connect", &addr, "--out-dir"])
        .arg(&bdir)
        .output()
        .unwrap();
    assert!(bob.status.success(), "{}", String::from_utf8_lossy(&bob.stderr));
    assert!(alice.wait().unwrap().success());

    let a = std::fs::read_to_string(adir.join("key_secure.hex")).unwrap();
    let b = std::fs::read_to_string(bdir.join("key_secure.hex")).unwrap();
    assert!(!a.trim().is_empty());
    assert_eq!(a, b);
    let ra: Value = serde_json::from_str(&std::fs::read_to_string(adir.join("report.json")).unwrap()).unwrap();
    let rb: Value = serde_json::from_str(&std::fs::read_to_string(bdir.join("report.json")).unwrap()).unwrap();
    assert_eq!(ra["transcript_sha256"], rb["transcript_sha256"]);
}

#[test]
fn extract_writes_requested_length() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.txt");
    let bits: String = (0..256).map(|i| if (i * 7 + 3) % 5 < 2 { '1' } else { '0' }).collect();
    std::fs::write(&input, bits).unwrap();
    let out = qkd().arg("extract").arg("--input").arg(&input).args(["--m", "32", "--backend", "toeplitz"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim().len(), 8);
}
