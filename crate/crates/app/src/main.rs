use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qkd_app::analyze;
use qkd_app::calibrate::{self, CalibrationTargets};
use qkd_app::feed::{ScenarioSim, SimFeed};
use qkd_app::party::{run_alice, run_bob, BobOptions, PartyOutput};
use qkd_app::run::{run_scenario, write_party_artifacts, write_run_artifacts, RunOptions, TransportKind};
use qkd_app::{AppError, ScenarioConfig};
use qkd_core::bits::{from_str01, to_hex};
use qkd_core::cascade::cascade;
use qkd_core::extract::{extract, random_seed, Backend, DesignKind, ExtractorParams};
use qkd_core::netlink::{Role, Session, TcpTransport};
use qkd_core::protocol::CountTable;
use qkd_core::rng;
use qkd_core::sim::{pair_probability, write_events_jsonl};
use rand::Rng;

#[derive(Parser)]
#[command(name = "qkd", version, about = "Entanglement-based QKD simulator and two-party protocol runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run both parties of a scenario in one process.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "loopback")]
        transport: TransportKind,
        /// Save every wire frame to transcript.bin.
        #[arg(long)]
        capture_transcript: bool,
        /// Flip one bit of Bob's corrected keys before confirmation.
        #[arg(long)]
        tamper: bool,
    },
    /// Run Alice, waiting for Bob on a TCP address.
    Alice {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
    },
    /// Run Bob, connecting to Alice over TCP.
    Bob {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "127.0.0.1:7070")]
        connect: String,
    },
    /// Write the simulated detection streams of every acquisition as JSON Lines.
    Genevents {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Solve the free channel parameters for the reference operating point
    /// and print the calibrated config.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 470e3)]
        alice_singles_cps: f64,
        #[arg(long, default_value_t = 58e3)]
        bob_singles_cps: f64,
        #[arg(long, default_value_t = 0.0716)]
        qber: f64,
        #[arg(long, default_value_t = 120.0)]
        irradiance: f64,
        /// Write the calibrated config here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(subcommand)]
    Analyze(Analyze),
    /// Privacy-amplify a bit string.
    Extract {
        /// Input file of '0'/'1' characters.
        #[arg(long)]
        input: PathBuf,
        /// Output length in bits.
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value = "trevisan")]
        backend: String,
        #[arg(long, default_value = "polynomial")]
        design: String,
        /// Seed for the public extractor seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file for the extracted bits as hex; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run CASCADE on random keys with a given error rate.
    CascadeBench {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        q: f64,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum Analyze {
    /// Coincidence SNR from the singles SNR.
    Snr {
        #[arg(long)]
        singles_snr: f64,
        /// Pair probability per pulse; the default source's when absent.
        #[arg(long, alias = "p-pair")]
        ppair: Option<f64>,
        #[arg(long, default_value_t = 1.3)]
        window_ns: f64,
        /// Pump repetition rate in MHz.
        #[arg(long, default_value_t = 320.0)]
        rep_mhz: f64,
    },
    /// Project night-time counts to daylight irradiances.
    Daylight {
        #[arg(long)]
        config: PathBuf,
        /// JSON count table measured at night; simulated when absent.
        #[arg(long)]
        night: Option<PathBuf>,
        /// Seconds of night-time acquisition to simulate.
        #[arg(long, default_value_t = 600.0)]
        night_s: f64,
        #[arg(long, value_delimiter = ',', default_value = "0,120,250,500")]
        irradiance: Vec<f64>,
    },
    /// Asymptotic secure fraction.
    Keyrate {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        s: f64,
        #[arg(long, alias = "f-ec", default_value_t = 1.2)]
        fec: f64,
        #[arg(long, default_value_t = 0.11)]
        qber_max: f64,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl RunArgs {
    fn load(&self) -> Result<ScenarioConfig, AppError> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(d) = self.duration_s {
            cfg.run.duration_s = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), AppError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), AppError> {
    fs::write(path, contents).map_err(|e| AppError::io(path, e))
}

fn party_summary(out: &PartyOutput, dir: &Path, duration_s: f64) -> Result<(), AppError> {
    let report = write_party_artifacts(dir, out, duration_s)?;
    print_json(&report)
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Simulate { run, transport, capture_transcript, tamper } => {
            let cfg = run.load()?;
            let opts = RunOptions {
                transport,
                capture_transcript,
                bob: BobOptions { tamper_corrected_key: tamper },
                ..Default::default()
            };
            let result = run_scenario(&cfg, &opts)?;
            write_run_artifacts(&run.out_dir, &cfg, &result)?;
            print_json(&result.report)?;
            eprintln!(
                "secure key: {} bits, keys match: {}, transcripts match: {}",
                result.bob.secure_key.len(),
                result.keys_match(),
                result.transcripts_match()
            );
        }
        Command::Alice { run, listen } => {
            let cfg = run.load()?;
            let listener = TcpListener::bind(&listen).map_err(|e| AppError::io(Path::new(&listen), e))?;
            eprintln!("alice listening on {}", listener.local_addr().map_err(|e| AppError::io(Path::new(&listen), e))?);
            let transport = TcpTransport::accept(&listener)?;
            let mut session = Session::new(Box::new(transport), Role::Alice, RunOptions::default().session_config());
            let out = run_alice(&mut session, &cfg, &mut SimFeed::new(&cfg, Role::Alice)?)?;
            party_summary(&out, &run.out_dir, cfg.run.duration_s)?;
        }
        Command::Bob { run, connect } => {
            let cfg = run.load()?;
            let transport = TcpTransport::connect(&connect)?;
            let mut session = Session::new(Box::new(transport), Role::Bob, RunOptions::default().session_config());
            let out = run_bob(&mut session, &cfg, &mut SimFeed::new(&cfg, Role::Bob)?, BobOptions::default())?;
            drop(session);
            party_summary(&out, &run.out_dir, cfg.run.duration_s)?;
        }
        Command::Genevents { run } => {
            let cfg = run.load()?;
            let mut sim = ScenarioSim::new(&cfg)?;
            let windows = sim.timeline().windows.clone();
            fs::create_dir_all(&run.out_dir).map_err(|e| AppError::io(&run.out_dir, e))?;
            let open = |name: &str| {
                let p = run.out_dir.join(name);
                fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| AppError::io(&p, e))
            };
            let (mut a, mut b) = (open("alice.jsonl")?, open("bob.jsonl")?);
            let mut clocks = String::new();
            for w in &windows {
                let acq = sim.acquire(w.index)?;
                write_events_jsonl(&mut a, &acq.alice)?;
                write_events_jsonl(&mut b, &acq.bob)?;
                clocks.push_str(&serde_json::to_string(&serde_json::json!({
                    "acq": w.index,
                    "start_s": w.start_s,
                    "sync_fail": w.sync_fail,
                    "clock": sim.clock(w),
                }))?);
                clocks.push('\n');
            }
            write_file(&run.out_dir.join("acquisitions.jsonl"), clocks)?;
            eprintln!("wrote {} acquisitions to {}", windows.len(), run.out_dir.display());
        }
        Command::Calibrate { config, alice_singles_cps, bob_singles_cps, qber, irradiance, out } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            let targets = CalibrationTargets { alice_singles_cps, bob_singles_cps, qber, irradiance_wm2: irradiance };
            let cal = calibrate::calibrate(&cfg, &targets)?;
            calibrate::apply(&mut cfg, &cal);
            eprintln!("{}", serde_json::to_string_pretty(&cal)?);
            match out {
                Some(p) => write_file(&p, cfg.to_json_pretty() + "\n")?,
                None => println!("{}", cfg.to_json_pretty()),
            }
        }
        Command::Analyze(a) => analyze_cmd(a)?,
        Command::Extract { input, m, eps, backend, design, seed, out } => {
            let text = fs::read_to_string(&input).map_err(|e| AppError::io(&input, e))?;
            let x: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            let x = from_str01(&x).ok_or_else(|| AppError::Usage(format!("{} is not a 0/1 string", input.display())))?;
            let backend: Backend = serde_json::from_value(serde_json::Value::String(backend))?;
            let design: DesignKind = serde_json::from_value(serde_json::Value::String(design))?;
            let params = ExtractorParams { n: x.len(), m, eps, backend, design };
            let s = random_seed(params.seed_len()?, seed, 0);
            let y = extract(&x, &params, &s)?;
            match out {
                Some(p) => write_file(&p, to_hex(&y) + "\n")?,
                None => println!("{}", to_hex(&y)),
            }
            eprintln!("extracted {} bits from {} with a {}-bit seed", y.len(), x.len(), s.len());
        }
        Command::CascadeBench { n, q, runs, seed } => {
            let mut results = Vec::new();
            for i in 0..runs {
                let mut r = rng::substream(seed, "bench", i as u64);
                let a: Vec<bool> = (0..n).map(|_| r.random()).collect();
                let b: Vec<bool> = a.iter().map(|&x| x ^ (r.random::<f64>() < q)).collect();
                let cfg = qkd_app::config::ProtocolParams::default().cascade_config(r.random());
                let res = cascade(&a, &b, q, &cfg)?;
                results.push(serde_json::json!({
                    "run": i,
                    "leaked_bits": res.leaked_bits,
                    "f_ec": res.f_ec_realized,
                    "corrections": res.corrections,
                    "residual_error": res.residual_error_detected,
                }));
            }
            let mean_f = results.iter().map(|r| r["f_ec"].as_f64().unwrap_or(0.0)).sum::<f64>() / runs.max(1) as f64;
            print_json(&serde_json::json!({ "n": n, "q": q, "mean_f_ec": mean_f, "runs": results }))?;
        }
    }
    Ok(())
}

fn analyze_cmd(a: Analyze) -> Result<(), AppError> {
    match a {
        Analyze::Snr { singles_snr, ppair, window_ns, rep_mhz } => {
            let p = ppair.unwrap_or_else(|| pair_probability(&Default::default()));
            print_json(&analyze::snr(singles_snr, p, window_ns, 1e3 / rep_mhz)?)
        }
        Analyze::Daylight { config, night, night_s, irradiance } => {
            let cfg = ScenarioConfig::load(&config)?;
            let night: CountTable = match night {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| AppError::io(&p, e))?;
                    serde_json::from_str(&text)?
                }
                None => analyze::measure_counts(&cfg, 0.0, night_s, cfg.run.seed)?,
            };
            print_json(&analyze::daylight_from_config(&cfg, &night, &irradiance)?)
        }
        Analyze::Keyrate { q, s, fec, qber_max } => print_json(&analyze::keyrate(q, s, fec, qber_max)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
