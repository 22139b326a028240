use clap::{Args, Parser, Subcommand};
use ddsc_core::analysis::verify_bound;
use ddsc_core::detect::{replay_detection, DetectionTest};
use ddsc_core::informativity::synthesize;
use ddsc_core::io::{self, LoadedManifest, NoiseSpec};
use ddsc_core::sim::fixture;
use ddsc_core::sim::generate_init_data;
use ddsc_core::sim::scenario::{read_events, run_scenario, ScenarioConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "ddsc", version, about = "Data-driven stabilization of unknown switched linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a gain K_i and Lyapunov matrix P_i for every mode of a dataset.
    Synthesize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay an online record and eliminate modes until one survives.
    Detect {
        #[arg(long)]
        manifest: PathBuf,
        /// `inputs.csv,states.csv`
        #[arg(long)]
        online: String,
        #[command(flatten)]
        test: TestArg,
    },
    /// Check the stability bound on a closed-loop event log.
    VerifyBound {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        certs: PathBuf,
        /// Dataset manifest listing the true A_i, B_i.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
    },
    /// Run a closed-loop scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the benchmark system, its initialization datasets and scenario configs.
    Fixtures {
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TestArg {
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    q: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Synthesize { manifest, lambda, out } => cmd_synthesize(&manifest, lambda, &out),
        Command::Detect { manifest, online, test } => {
            let t = match test.q {
                Some(q) => DetectionTest::Noisy { q },
                None => DetectionTest::Noiseless,
            };
            cmd_detect(&manifest, &online, t)
        }
        Command::VerifyBound { log, certs, truth, lambda, c, q } => cmd_verify(&log, &certs, &truth, lambda, c, q),
        Command::Simulate { config, out } => cmd_simulate(&config, &out),
        Command::Fixtures { out } => cmd_fixtures(&out),
    };
    r.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn cmd_synthesize(manifest: &Path, lambda: f64, out: &Path) -> CliResult {
    let m = LoadedManifest::load(manifest)?;
    let data = m.datasets()?;
    let noise = m.noise_models(&data)?;
    let certs =
        data.iter().zip(&noise).map(|(d, w)| synthesize(d, w, lambda)).collect::<ddsc_core::Result<Vec<_>>>()?;
    let set = io::write_certificates(out, &certs, lambda)?;
    println!("lambda = {lambda}");
    for e in &set.modes {
        println!(
            "mode {}: beta = {:.6e}, lmi margin = {:.6e}, cond(P) = {:.4}",
            e.mode, e.beta, e.lmi_margin, e.p_condition
        );
    }
    println!("wrote {}", out.join(io::CERTIFICATE_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn fmt_modes(ms: &[usize]) -> String {
    let v: Vec<String> = ms.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", v.join(","))
}

fn cmd_detect(manifest: &Path, online: &str, test: DetectionTest) -> CliResult {
    let m = LoadedManifest::load(manifest)?;
    let init = m.datasets()?;
    let online = io::read_online_pair(online)?;
    let trace = replay_detection(&init, &online, test)?;
    for (k, s) in trace.steps.iter().enumerate() {
        println!("step {}: eliminated {} remaining {}", k + 1, fmt_modes(&s.eliminated), fmt_modes(&s.remaining));
    }
    if let Some(e) = &trace.error {
        println!("stopped: {e}");
    }
    let survivors = trace.survivors(init.len());
    match survivors.as_slice() {
        [i] => {
            println!("detected mode {}", i + 1);
            Ok(ExitCode::SUCCESS)
        }
        _ => {
            println!("undecided, surviving modes {}", fmt_modes(&survivors));
            Ok(ExitCode::FAILURE)
        }
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn cmd_verify(log: &Path, certs: &Path, truth: &Path, lambda: f64, c: f64, q: f64) -> CliResult {
    let records = read_events(log)?;
    let lyap: Vec<_> = io::read_certificates(certs)?.into_iter().map(|c| c.lyapunov).collect();
    let truth = LoadedManifest::load(truth)?.truth()?;
    let rep = verify_bound(&records, &lyap, &truth, lambda, c, q)?;
    let cert = &rep.certificate;
    let reg = &cert.regularity;
    println!("mu = {:.6}", cert.mu);
    println!("lambda_u = {:.6}", cert.growth.lambda_u);
    println!("tau = {:.6}", reg.tau());
    println!("eta = {:.6}", reg.eta);
    println!("condition = {:.6} ({})", cert.condition.value, if cert.condition.holds { "holds" } else { "violated" });
    println!("timer rules: {}", pass(rep.timer_rule_violations.is_empty()));
    match &rep.iss.envelope {
        Some(env) => println!(
            "envelope: {} (slack {:.3e}, final {:.6e})",
            pass(rep.iss.envelope_ok()),
            env.slack,
            env.final_envelope
        ),
        None => println!("envelope: not evaluated"),
    }
    println!("one-step: {} (margin {:.3e})", pass(rep.iss.one_step_ok()), rep.iss.one_step_margin);
    let ok = rep.timer_rule_violations.is_empty() && rep.iss.one_step_ok() && rep.iss.envelope_ok();
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_simulate(config: &Path, out: &Path) -> CliResult {
    let cfg: ScenarioConfig = serde_json::from_str(&std::fs::read_to_string(config)?)?;
    let run = run_scenario(&cfg)?;
    run.write(out)?;
    let s = &run.summary;
    println!("init seed {}", s.init_seed);
    println!("final |x| = {:.6e} (ratio {:.3e})", s.final_norm, s.norm_ratio);
    println!("sup |x| after t=50 = {:.6e}", s.sup_norm_after_50);
    println!("switches {}, detection episodes {}, restarts {}", s.switches, s.episodes.len(), s.detection_restarts);
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_fixtures(out: &Path) -> CliResult {
    std::fs::create_dir_all(out)?;
    let modes = fixture::modes();
    for (i, m) in modes.iter().enumerate() {
        io::write_matrix(&out.join(format!("A_{}.csv", i + 1)), &m.a)?;
        io::write_matrix(&out.join(format!("B_{}.csv", i + 1)), &m.b)?;
    }
    for k in 1..=4 {
        let path = out.join(format!("scenario_{k}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&ScenarioConfig::benchmark(k))?)?;
    }
    for k in [1, 3] {
        let cfg = ScenarioConfig::benchmark(k);
        let dir = out.join(if cfg.q > 0.0 { "noisy" } else { "noiseless" });
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.init);
        let data = modes
            .iter()
            .map(|m| generate_init_data(&mut rng, m, cfg.init_length, cfg.excitation, cfg.q))
            .collect::<ddsc_core::Result<Vec<_>>>()?;
        io::write_dataset(&dir, &data, NoiseSpec::from_q(cfg.q), Some(&modes))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.init + 1);
        let online = generate_init_data(&mut rng, &modes[2], 2 * (fixture::N + fixture::M), cfg.excitation, cfg.q)?;
        io::write_matrix(&dir.join("online_U.csv"), online.inputs())?;
        io::write_matrix(&dir.join("online_X.csv"), online.states())?;
    }
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}
