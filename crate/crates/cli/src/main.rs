use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use strawbot::bridge::{self, SimHost, StepPolicy};
use strawbot::geometry::Pose2;
use strawbot::harness::{
    self, evaluate_corpus, generate_corpus, read_trace, score, CorpusOptions, MissionReport,
    Thresholds,
};
use strawbot::run_mission;
use strawbot::sensor::{camera_pose, render_with, CameraMount, MountState, RenderOptions};
use strawbot::world::{default_scenario, minimal_scenario, ScenarioDoc, World};

#[derive(Parser)]
#[command(
    name = "strawbot",
    version,
    about = "Strawberry-arena simulator and autonomy stack"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Camera {
    Front,
    Rear,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Scenario JSON file, or the built-in `default` / `minimal`.
    #[arg(long, default_value = "default")]
    scenario: String,
    /// Overrides the scenario seed (noise streams and generated plants).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "off")]
    noise: Toggle,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a full mission, write trace.jsonl and report.json.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Threshold override, e.g. `harvest_success=0.95`. Repeatable.
        #[arg(long = "threshold", value_parser = parse_threshold)]
        thresholds: Vec<(String, f64)>,
    },
    /// Re-score a stored trace.
    Score {
        trace: PathBuf,
        /// Where to write report.json; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "threshold", value_parser = parse_threshold)]
        thresholds: Vec<(String, f64)>,
    },
    /// Write labeled synthetic frames for perception metrics.
    GenCorpus {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "on")]
        noise: Toggle,
        #[arg(long, default_value = "corpus")]
        out: PathBuf,
    },
    /// Render one camera frame to PPM (colour) and PGM (depth).
    Render {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Chassis pose `x,y,theta`; defaults to the scenario start pose.
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        pose: Option<Pose2>,
        #[arg(long, value_enum, default_value = "rear")]
        camera: Camera,
        /// Rear camera lift (m).
        #[arg(long, default_value_t = 0.0)]
        extension: f64,
        #[arg(long, default_value = "frame")]
        out: PathBuf,
    },
    /// Serve the wire protocol over HTTP with the sim stepping in real time.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn parse_threshold(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    let v: f64 = v.parse().map_err(|e| format!("{v}: {e}"))?;
    let mut probe = serde_json::to_value(Thresholds::default()).map_err(|e| e.to_string())?;
    probe[k] = v.into();
    serde_json::from_value::<Thresholds>(probe).map_err(|e| e.to_string())?;
    Ok((k.to_string(), v))
}

fn parse_pose(s: &str) -> Result<Pose2, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, theta] => Ok(Pose2::new(x, y, theta)),
        _ => Err("expected x,y,theta".into()),
    }
}

fn thresholds(overrides: &[(String, f64)]) -> Result<Thresholds> {
    let mut v = serde_json::to_value(Thresholds::default())?;
    for (k, x) in overrides {
        v[k.as_str()] = (*x).into();
    }
    Ok(serde_json::from_value(v)?)
}

fn load_scenario(args: &ScenarioArgs) -> Result<ScenarioDoc> {
    let doc = match args.scenario.as_str() {
        "default" => default_scenario(args.seed.unwrap_or(0)),
        "minimal" => minimal_scenario(),
        path => ScenarioDoc::from_file(Path::new(path))
            .with_context(|| format!("loading scenario {path}"))?,
    };
    let seed = args.seed.unwrap_or(doc.seed);
    let mut doc = doc.seeded(seed);
    harness::set_noise(&mut doc, args.noise == Toggle::On);
    Ok(doc)
}

fn compact(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x}")
    } else {
        format!("{x:.2}")
    }
}

fn print_summary(r: &MissionReport) {
    println!(
        "scenario {} seed {}: {} in {:.1} s sim",
        r.scenario,
        r.seed,
        if r.completed {
            "completed"
        } else {
            "did not complete"
        },
        r.sim_duration
    );
    for m in [
        &r.detection_accuracy,
        &r.harvest_success,
        &r.localization,
        &r.nav_speed,
    ] {
        println!(
            "  {:<20} {:.4} ({}/{}){}  threshold {}  {}",
            m.name,
            m.value,
            compact(m.numerator),
            compact(m.denominator),
            if m.vacuous { " vacuous" } else { "" },
            m.threshold,
            if m.pass { "PASS" } else { "FAIL" }
        );
    }
    if !r.flower_policy_violations.is_empty() {
        println!(
            "  flower count violations: {}",
            r.flower_policy_violations.join(", ")
        );
    }
    println!(
        "  healthy damage {}  trims {}  misses {}",
        r.healthy_damage, r.trims, r.misses
    );
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Cmd::Run {
            scenario,
            out,
            thresholds: overrides,
        } => {
            let th = thresholds(&overrides)?;
            let doc = load_scenario(&scenario)?;
            let world = World::from_scenario(doc)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let trace_path = out.join("trace.jsonl");
            let mut sink = BufWriter::new(fs::File::create(&trace_path)?);
            let t0 = Instant::now();
            let result = run_mission(world, &mut sink);
            sink.flush()?;
            drop(sink);
            let run = result?;
            let records = read_trace(BufReader::new(fs::File::open(&trace_path)?))?;
            let mut report = score(&records, &th)?;
            report.wall_clock = Some(t0.elapsed().as_secs_f64());
            fs::write(
                out.join("report.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            print_summary(&report);
            println!(
                "trace {} ({} records) sha256 {}",
                trace_path.display(),
                run.trace_records,
                run.trace_hash
            );
            Ok(verdict(report.pass))
        }
        Cmd::Score {
            trace,
            out,
            thresholds: overrides,
        } => {
            let th = thresholds(&overrides)?;
            let file =
                fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let report = score(&read_trace(BufReader::new(file))?, &th)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            match out {
                Some(p) => {
                    fs::write(&p, text)?;
                    print_summary(&report);
                }
                None => print!("{text}"),
            }
            Ok(verdict(report.pass))
        }
        Cmd::GenCorpus {
            n,
            seed,
            noise,
            out,
        } => {
            let opts = CorpusOptions {
                frames: n,
                seed,
                depth_noise_sigma: if noise == Toggle::On {
                    harness::DEPTH_NOISE_SIGMA
                } else {
                    0.0
                },
                ..Default::default()
            };
            let samples = generate_corpus(&opts);
            harness::write_corpus(&samples, &out)
                .with_context(|| format!("writing {}", out.display()))?;
            let m = evaluate_corpus(&samples, &Default::default());
            fs::write(
                out.join("metrics.json"),
                serde_json::to_string_pretty(&m)? + "\n",
            )?;
            println!(
                "{} frames in {}: accuracy {:.4} ({}/{})",
                m.frames,
                out.display(),
                m.accuracy,
                m.correct,
                m.seen
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Render {
            scenario,
            pose,
            camera,
            extension,
            out,
        } => {
            let doc = load_scenario(&scenario)?;
            let sigma = doc.perception.depth_noise_sigma;
            let seed = doc.seed;
            let world = World::from_scenario(doc)?;
            let mut robot = world.robot;
            if let Some(p) = pose {
                robot.chassis = p;
            }
            let cfg = world.config();
            if !(0.0..=cfg.actuator_stroke).contains(&extension) {
                bail!("extension {extension} outside [0, {}]", cfg.actuator_stroke);
            }
            robot.actuator_extension = extension;
            let mount = match camera {
                Camera::Front => CameraMount::FrontFixed,
                Camera::Rear => CameraMount::RearActuator,
            };
            let cam = camera_pose(&robot, &MountState::of(&robot, mount), cfg);
            let opts = RenderOptions {
                depth_noise_sigma: sigma,
                noise_seed: seed,
            };
            let (frame, _) = render_with(&world, &cam, &cfg.intrinsics, &opts);
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let rgb = out.with_extension("ppm");
            let depth = out.with_extension("pgm");
            fs::write(&rgb, frame.to_ppm())?;
            fs::write(&depth, frame.depth_to_pgm())?;
            println!("wrote {} and {}", rgb.display(), depth.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Serve {
            scenario,
            port,
            host,
        } => {
            let world = World::from_scenario(load_scenario(&scenario)?)?;
            let sim =
                SimHost::with_options(world, bridge::DEFAULT_QUEUE_CAPACITY, StepPolicy::RealTime);
            let server = bridge::serve(sim, &format!("{host}:{port}"))?;
            println!("listening on http://{}", server.addr());
            info!("serving until interrupted");
            loop {
                std::thread::park();
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STRAWBOT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
