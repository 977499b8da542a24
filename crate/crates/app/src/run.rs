//! Running both parties of a scenario and writing the run artifacts.

use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::str::FromStr;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use qkd_core::bits::{pack_msb, to_hex};
use qkd_core::netlink::{loopback_pair, Role, Session, SessionConfig, TcpTransport, Transport};
use qkd_core::protocol::{rate_report, RateReport};
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::AppError;
use crate::feed::{ForwardedFeed, SimFeed};
use crate::party::{run_alice, run_bob, BobOptions, PartyOutput};

/// How the two in-process parties talk to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    #[default]
    Loopback,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loopback" => Ok(TransportKind::Loopback),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(AppError::Usage(format!("unknown transport {other:?}, expected tcp or loopback"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub transport: TransportKind,
    /// Keep a copy of every wire frame.
    pub capture_transcript: bool,
    pub bob: BobOptions,
    pub timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            transport: TransportKind::Loopback,
            capture_transcript: false,
            bob: BobOptions::default(),
            timeout: Duration::from_secs(60),
        }
    }
}

impl RunOptions {
    pub fn session_config(&self) -> SessionConfig {
        SessionConfig { timeout: self.timeout, capture: self.capture_transcript, ..Default::default() }
    }
}

/// Both parties' outputs and Bob's rate report.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub alice: PartyOutput,
    pub bob: PartyOutput,
    pub report: RateReport,
}

impl RunResult {
    pub fn keys_match(&self) -> bool {
        self.alice.secure_key == self.bob.secure_key
    }

    pub fn transcripts_match(&self) -> bool {
        self.alice.transcript_hash == self.bob.transcript_hash
    }
}

/// Rate report of one party's output over the run duration.
pub fn party_report(out: &PartyOutput, duration_s: f64) -> RateReport {
    let mut r = rate_report(&out.frame_stats(), &out.keys, duration_s);
    r.blocks_total = out.blocks.len();
    r.blocks_failed = out.blocks.iter().filter(|b| !b.confirmed).count();
    r
}

type TransportPair = (Box<dyn Transport>, Box<dyn Transport>);

fn transport_pair(kind: TransportKind) -> Result<TransportPair, AppError> {
    Ok(match kind {
        TransportKind::Loopback => {
            let (a, b) = loopback_pair();
            (Box::new(a), Box::new(b))
        }
        TransportKind::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| AppError::io(Path::new("127.0.0.1:0"), e))?;
            let addr = listener.local_addr().map_err(|e| AppError::io(Path::new("127.0.0.1:0"), e))?;
            let b = TcpTransport::connect(addr)?;
            let a = TcpTransport::accept(&listener)?;
            (Box::new(a), Box::new(b))
        }
    })
}

/// Run both parties of `cfg` in this process, Alice on her own thread.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunResult, AppError> {
    cfg.validate()?;
    let (ta, tb) = transport_pair(opts.transport)?;
    let (tx, rx) = mpsc::channel();
    let mut bob_feed = SimFeed::new(cfg, Role::Bob)?.with_forward(tx);
    let alice_cfg = cfg.clone();
    let session_cfg = opts.session_config();
    let alice_session_cfg = session_cfg.clone();
    let alice = thread::Builder::new()
        .name("alice".into())
        .spawn(move || {
            let mut session = Session::new(ta, Role::Alice, alice_session_cfg);
            run_alice(&mut session, &alice_cfg, &mut ForwardedFeed::new(rx))
        })
        .map_err(|e| AppError::Panic(e.to_string()))?;
    let bob = {
        let mut session = Session::new(tb, Role::Bob, session_cfg);
        run_bob(&mut session, cfg, &mut bob_feed, opts.bob)
    };
    drop(bob_feed);
    let alice = alice.join().map_err(|p| AppError::Panic(panic_text(&p)))?;
    let bob = bob?;
    let alice = alice?;
    let report = party_report(&bob, cfg.run.duration_s);
    Ok(RunResult { alice, bob, report })
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

#[derive(Serialize)]
struct FrameLine<'a> {
    frame: u64,
    time_s: f64,
    #[serde(rename = "S")]
    s: Option<f64>,
    #[serde(rename = "S_err")]
    s_err: Option<f64>,
    #[serde(rename = "Q")]
    q: Option<f64>,
    sifted: usize,
    chsh: usize,
    disclosed: usize,
    errors: usize,
    synced: usize,
    acquisitions: usize,
    status: &'a str,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    role: &'a str,
    report: &'a RateReport,
    secure_key_bits: usize,
    transcript_sha256: String,
    messages: u64,
    bytes: u64,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), AppError> {
    fs::write(path, contents).map_err(|e| AppError::io(path, e))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String, AppError> {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(&item)?);
        s.push('\n');
    }
    Ok(s)
}

/// Write one party's artifacts into `dir`: the frame log, per-frame CSV,
/// block and sync logs, the rate report, the secure key and, if captured,
/// the wire transcript.
pub fn write_party_artifacts(dir: &Path, out: &PartyOutput, duration_s: f64) -> Result<RateReport, AppError> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let frames = out.frames.iter().map(|f| FrameLine {
        frame: f.stats.frame_id,
        time_s: f.start_s,
        s: f.stats.s,
        s_err: f.stats.s_err,
        q: f.stats.q_est,
        sifted: f.stats.n_sifted,
        chsh: f.stats.n_chsh,
        disclosed: f.stats.n_disclosed,
        errors: f.stats.n_disclosed_errors,
        synced: f.synced,
        acquisitions: f.acquisitions,
        status: f.stats.status.as_str(),
    });
    write(&dir.join("frames.jsonl"), jsonl(frames)?)?;
    write(&dir.join("blocks.jsonl"), jsonl(&out.blocks)?)?;
    write(&dir.join("sync.jsonl"), jsonl(&out.offsets)?)?;

    let csv_path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["time_s", "sifted_bps", "S", "Q", "irradiance", "rain"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for f in &out.frames {
        let sifted_bps = if f.stats.q_est.is_some() { f.stats.n_sifted as f64 / f.stats.duration_s } else { 0.0 };
        w.write_record([
            f.start_s.to_string(),
            sifted_bps.to_string(),
            opt(f.stats.s),
            opt(f.stats.q_est),
            f.irradiance_wm2.to_string(),
            f.rain_mm_hr.to_string(),
        ])?;
    }
    w.flush().map_err(|e| AppError::io(&csv_path, e))?;

    let report = party_report(out, duration_s);
    let file = ReportFile {
        role: match out.role {
            Role::Alice => "alice",
            Role::Bob => "bob",
        },
        report: &report,
        secure_key_bits: out.secure_key.len(),
        transcript_sha256: hex::encode(out.transcript_hash),
        messages: out.messages,
        bytes: out.bytes,
    };
    write(&dir.join("report.json"), serde_json::to_string_pretty(&file)? + "\n")?;
    write(&dir.join("key_secure.bin"), pack_msb(&out.secure_key))?;
    write(&dir.join("key_secure.hex"), to_hex(&out.secure_key) + "\n")?;
    if !out.transcript.is_empty() {
        write(&dir.join("transcript.bin"), &out.transcript)?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct Summary<'a> {
    report: &'a RateReport,
    secure_key_bits: usize,
    keys_match: bool,
    transcripts_match: bool,
    transcript_sha256: String,
}

/// Write both parties' artifacts under `dir/alice` and `dir/bob` and a
/// summary at `dir/summary.json`.
pub fn write_run_artifacts(dir: &Path, cfg: &ScenarioConfig, run: &RunResult) -> Result<(), AppError> {
    write_party_artifacts(&dir.join("alice"), &run.alice, cfg.run.duration_s)?;
    write_party_artifacts(&dir.join("bob"), &run.bob, cfg.run.duration_s)?;
    let summary = Summary {
        report: &run.report,
        secure_key_bits: run.bob.secure_key.len(),
        keys_match: run.keys_match(),
        transcripts_match: run.transcripts_match(),
        transcript_sha256: hex::encode(run.bob.transcript_hash),
    };
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    write(&dir.join("config.json"), cfg.to_json_pretty() + "\n")
}
