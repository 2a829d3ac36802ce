//! `sgsim`: build gasket graphs, run rotor walks and sandpiles, and run the
//! seeded Monte Carlo experiments. Each run writes its results and a
//! `config.json` that can be replayed with `--config`.

mod output;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gasket_sim::divisible::{critical_threshold, MassLaw};
use gasket_sim::export;
use gasket_sim::harness::{self, CsvWriter, ExperimentKind, ExperimentSpec, SummaryFile};
use gasket_sim::render::{reflecting_example, render_svg, Overlay, RenderOptions};
use gasket_sim::sandpile::{laplacian_check, stabilize, Domain, HeightLaw, Sandpile, TopplePolicy};
use gasket_sim::{Half, LatticeCoord, PrefractalGraph, RotorConfig, RotorField, RotorLaw, WalkState};
use serde::{Deserialize, Serialize};

use output::OutDir;

const WORKERS_ENV: &str = "SGSIM_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "sgsim", version, about = "Rotor walks and sandpiles on the Sierpinski gasket")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Replay a config.json written by an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

/// What gets echoed to `config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    #[serde(flatten)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Write the vertices and edges of SG_n as JSON.
    BuildGraph {
        #[arg(long, default_value_t = 3)]
        level: u32,
        #[arg(long, default_value = "both")]
        half: Half,
    },
    /// Run one rotor walk from the origin and write its trace.
    RotorRun {
        #[arg(long, default_value_t = 4)]
        level: u32,
        #[arg(long, default_value = "both")]
        half: Half,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Step cap.
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        /// Rotor law as four probabilities, inline JSON or @file.
        #[arg(long)]
        law: Option<String>,
        /// Initial rotors as a JSON map {"a,b": index}, inline or @file; unset rotors come from the law.
        #[arg(long)]
        rotors: Option<String>,
        /// Stop at the first return to the origin.
        #[arg(long)]
        until_return: bool,
    },
    /// Frequency of reflecting cut sets under i.i.d. rotors.
    ReflectingStats {
        #[command(flatten)]
        run: TrialArgs,
        #[arg(long, default_value = "1..5", value_parser = parse_levels)]
        level: Levels,
        #[arg(long)]
        law: Option<String>,
    },
    /// Walks with reflecting corners at S_n must return before leaving S_n and its boundary.
    Lemma9Check {
        #[command(flatten)]
        run: TrialArgs,
        #[arg(long, default_value = "1..3", value_parser = parse_levels)]
        level: Levels,
        #[arg(long, default_value_t = 1 << 30)]
        cap: u64,
        #[arg(long)]
        law: Option<String>,
    },
    /// First return times to the origin on the infinite gasket.
    ReturnTimes {
        #[command(flatten)]
        run: TrialArgs,
        /// Largest level the walk may reach.
        #[arg(long, default_value_t = 8)]
        level: u32,
        #[arg(long, default_value_t = 1 << 24)]
        cap: u64,
        #[arg(long)]
        law: Option<String>,
    },
    /// Stabilize one sandpile on SG_n.
    SandpileStabilize {
        #[arg(long, default_value_t = 4)]
        level: u32,
        #[arg(long, default_value = "plus")]
        half: Half,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Height law [[h, p], ...], inline JSON or @file.
        #[arg(long)]
        law: Option<String>,
        /// Initial heights as an a,b,height CSV file; overrides --law.
        #[arg(long)]
        heights: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Policy::Fifo)]
        policy: Policy,
        #[arg(long, default_value_t = u64::MAX)]
        cap: u64,
    },
    /// Abelian explosion trials on SG_n⁺.
    Explosion {
        #[command(flatten)]
        run: TrialArgs,
        #[arg(long, default_value = "4..6", value_parser = parse_levels)]
        level: Levels,
        #[arg(long)]
        law: Option<String>,
        #[arg(long, default_value_t = u64::MAX)]
        cap: u64,
    },
    /// Divisible explosion trials on SG_n⁺.
    ExplosionDiv {
        #[command(flatten)]
        run: TrialArgs,
        #[arg(long, default_value = "4..6", value_parser = parse_levels)]
        level: Levels,
        /// Mass law [[m, p], ...] with mean 1.
        #[arg(long)]
        law: Option<String>,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        /// Sweep cap.
        #[arg(long, default_value_t = 10_000_000)]
        cap: u64,
    },
    /// Truncated Green functions of the simple and uniform rotor walks.
    GreenRatio {
        #[command(flatten)]
        run: TrialArgs,
        #[arg(long, default_value = "2", value_parser = parse_levels)]
        level: Levels,
        #[arg(long, default_value = "0,0", value_parser = parse_coord)]
        x: LatticeCoord,
        #[arg(long, default_value = "0,0", value_parser = parse_coord)]
        y: LatticeCoord,
        #[arg(long, default_value_t = 1 << 30)]
        cap: u64,
    },
    /// Standardized total mass of an i.i.d. sandpile.
    CltCheck {
        #[command(flatten)]
        run: TrialArgs,
        #[arg(long, default_value = "6", value_parser = parse_levels)]
        level: Levels,
        #[arg(long)]
        law: Option<String>,
    },
    /// Draw SG_n as SVG with an optional overlay.
    Render {
        #[arg(long, default_value_t = 2)]
        level: u32,
        #[arg(long, default_value = "both")]
        half: Half,
        #[arg(long, value_enum, default_value_t = OverlayKind::Rotors)]
        overlay: OverlayKind,
        /// Rotors JSON (rotors overlay) or a,b,height CSV (heights and odometer); inline or @file.
        #[arg(long)]
        input: Option<String>,
        /// Height law for a sampled pile when no input is given.
        #[arg(long)]
        law: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct TrialArgs {
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Policy {
    Fifo,
    Lifo,
    Random,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum OverlayKind {
    None,
    Rotors,
    Heights,
    Odometer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
struct Levels(Vec<u32>);

/// `3`, `1,2,5` or `1..5` (inclusive).
fn parse_levels(s: &str) -> Result<Levels, String> {
    let bad = || format!("expected N, A..B or a comma list of levels, got {s:?}");
    if let Some((a, b)) = s.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok(Levels((a..=b).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<_, _>>()
        .map(Levels)
}

fn parse_coord(s: &str) -> Result<LatticeCoord, String> {
    LatticeCoord::parse_key(s.trim().trim_start_matches('(').trim_end_matches(')'))
        .ok_or_else(|| format!("expected a,b lattice coordinates, got {s:?}"))
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<gasket_sim::Error> for CliError {
    fn from(e: gasket_sim::Error) -> Self {
        use gasket_sim::Error as E;
        match e {
            E::Capacity { .. } | E::InvalidLaw(_) | E::InvalidArgument(_) | E::UnknownVertex(_) | E::Json(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Resolves `@file` to the file's contents.
fn inline(value: &str) -> CliResult<String> {
    match value.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {path}: {e}"))),
        None => Ok(value.to_string()),
    }
}

fn inline_opt(value: &mut Option<String>) -> CliResult<()> {
    if let Some(v) = value {
        *v = inline(v)?.trim().to_string();
    }
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

fn rotor_law(law: &Option<String>) -> CliResult<RotorLaw> {
    law.as_deref().map_or(Ok(RotorLaw::uniform()), |s| parse_json("rotor law", s))
}

fn height_law(law: &Option<String>, default: &[(u32, f64)]) -> CliResult<HeightLaw> {
    match law {
        Some(s) => parse_json("height law", s),
        None => Ok(HeightLaw::new(default.to_vec())?),
    }
}

fn mass_law(law: &Option<String>) -> CliResult<MassLaw> {
    match law {
        Some(s) => parse_json("mass law", s),
        None => Ok(MassLaw::new(vec![(0.5, 0.5), (1.5, 0.5)])?),
    }
}

const SUPERCRITICAL: &[(u32, f64)] = &[(2, 0.5), (5, 0.5)];
const CRITICAL: &[(u32, f64)] = &[(2, 0.5), (4, 0.5)];

impl Command {
    /// Replace `@file` arguments by their contents so the echoed config is self-contained.
    fn inline_files(&mut self) -> CliResult<()> {
        match self {
            Command::RotorRun { law, rotors, .. } => {
                inline_opt(law)?;
                inline_opt(rotors)
            }
            Command::ReflectingStats { law, .. }
            | Command::Lemma9Check { law, .. }
            | Command::ReturnTimes { law, .. }
            | Command::SandpileStabilize { law, .. }
            | Command::Explosion { law, .. }
            | Command::ExplosionDiv { law, .. }
            | Command::CltCheck { law, .. } => inline_opt(law),
            Command::Render { law, input, .. } => {
                inline_opt(law)?;
                inline_opt(input)
            }
            Command::BuildGraph { .. } | Command::GreenRatio { .. } => Ok(()),
        }
    }

    fn experiment(&self) -> CliResult<Option<ExperimentSpec>> {
        let spec = |kind, levels: &Levels, run: &TrialArgs| {
            Some(ExperimentSpec::new(kind, levels.0.clone(), run.trials, run.seed))
        };
        Ok(match self {
            Command::ReflectingStats { run, level, law } => spec(
                ExperimentKind::ReflectingFrequency { rotor_law: rotor_law(law)? },
                level,
                run,
            ),
            Command::Lemma9Check { run, level, cap, law } => spec(
                ExperimentKind::ReflectingReturn {
                    rotor_law: rotor_law(law)?,
                    step_cap: *cap,
                },
                level,
                run,
            ),
            Command::ReturnTimes { run, level, cap, law } => spec(
                ExperimentKind::ReturnTimes {
                    rotor_law: rotor_law(law)?,
                    step_cap: *cap,
                    max_level: *level,
                },
                &Levels(vec![*level]),
                run,
            ),
            Command::Explosion { run, level, law, cap } => spec(
                ExperimentKind::AbelianExplosion {
                    height_law: height_law(law, SUPERCRITICAL)?,
                    topple_cap: *cap,
                },
                level,
                run,
            ),
            Command::ExplosionDiv {
                run,
                level,
                law,
                epsilon,
                cap,
            } => {
                let law = mass_law(law)?;
                critical_threshold(&law)?;
                spec(
                    ExperimentKind::DivisibleExplosion {
                        mass_law: law,
                        epsilon: *epsilon,
                        sweep_cap: *cap,
                    },
                    level,
                    run,
                )
            }
            Command::GreenRatio { run, level, x, y, cap } => spec(
                ExperimentKind::GreenRatio {
                    x: *x,
                    y: *y,
                    step_cap: *cap,
                },
                level,
                run,
            ),
            Command::CltCheck { run, level, law } => spec(
                ExperimentKind::Clt {
                    height_law: height_law(law, CRITICAL)?,
                },
                level,
                run,
            ),
            _ => None,
        })
    }
}

fn json_bytes<T: Serialize + ?Sized>(v: &T) -> CliResult<Vec<u8>> {
    Ok(export::to_json_bytes(v)?)
}

fn run_experiment(spec: &ExperimentSpec, out: &OutDir, workers: usize) -> CliResult<()> {
    spec.validate()?;
    let mut csv = CsvWriter::new(out.stream("records.csv")?, &spec.kind)?;
    let summary = harness::run_streaming(spec, workers, |r| csv.write(r))?;
    csv.finish()?.commit()?;
    out.write("summary.json", &json_bytes(&SummaryFile { spec, summary: &summary })?)?;
    for l in &summary.levels {
        let mut line = format!("level {}: {} trials", l.level, l.trials);
        if l.failures > 0 {
            line += &format!(", {} failed", l.failures);
        }
        if let Some(f) = l.indicator {
            line += &format!(", frequency {:.6} [{:.6}, {:.6}]", f.estimate, f.ci_low, f.ci_high);
        }
        if let Some(p) = &l.primary {
            line += &format!(", median {} mean {:.4}", p.median, p.mean);
        }
        if let Some(g) = &l.green {
            line += &format!(", G_srw {:.4} G_urw {:.4} ratio {:.4}", g.srw, g.urw, g.ratio);
        }
        if let Some(c) = &l.clt {
            line += &format!(", mean {:.4} variance {:.4} KS {:.4}", c.mean, c.variance, c.ks_distance);
            if c.small_sample_warning {
                line += " (small sample)";
            }
        }
        println!("{line}");
    }
    for c in &summary.correlations {
        println!("corr(A_{}, A_{}) = {:.5} (band {:.5})", c.m, c.n, c.correlation, c.band);
    }
    Ok(())
}

fn rotor_run(cmd: &Command, out: &OutDir) -> CliResult<()> {
    let Command::RotorRun {
        level,
        half,
        seed,
        steps,
        law,
        rotors,
        until_return,
    } = cmd
    else {
        unreachable!()
    };
    let g = PrefractalGraph::build(*level, *half)?;
    let field = RotorField::new(rotor_law(law)?, *seed);
    let initial = match rotors {
        Some(text) => {
            let map = parse_json("rotors", text)?;
            RotorConfig::import(&g, &map)?
        }
        None => RotorConfig::unset(&g),
    };
    let mut walk = WalkState::new(&g, LatticeCoord::ORIGIN, initial.clone(), Some(field))?;
    let start = walk.position();
    let mut trace = vec![(0, LatticeCoord::ORIGIN)];
    let mut status = "cap";
    for _ in 0..*steps {
        match walk.step(&g) {
            Ok(v) => {
                trace.push((walk.time(), g.coord(v)));
                if *until_return && v == start {
                    status = "returned";
                    break;
                }
            }
            Err(gasket_sim::Error::FrontierExceeded { .. }) => {
                status = "left_graph";
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut buf = Vec::new();
    export::write_trace_csv(&trace, &mut buf)?;
    out.write("trace.csv", &buf)?;
    out.write("rotors_initial.json", &export::rotors_json(&g, &initial)?)?;
    out.write("rotors_final.json", &export::rotors_json(&g, walk.rotors())?)?;
    let summary = serde_json::json!({
        "status": status,
        "steps": walk.time(),
        "final_position": g.coord(walk.position()).key(),
        "seed": seed,
    });
    out.write("summary.json", &json_bytes(&summary)?)?;
    println!("{status} after {} steps at {}", walk.time(), g.coord(walk.position()));
    Ok(())
}

fn initial_pile(g: &PrefractalGraph, heights: Option<&str>, law: &Option<String>, seed: u64) -> CliResult<Sandpile> {
    match heights {
        Some(text) => Ok(Sandpile::from_heights(export::read_field_csv(g, text, 0u32)?)),
        None => {
            let law = height_law(law, SUPERCRITICAL)?;
            let region = gasket_sim::Region::full(g);
            Ok(Sandpile::sample_iid(&region, &law, &mut gasket_sim::rng::trial_rng(seed)))
        }
    }
}

fn sandpile_stabilize(cmd: &Command, out: &OutDir) -> CliResult<()> {
    let Command::SandpileStabilize {
        level,
        half,
        seed,
        law,
        heights,
        policy,
        cap,
    } = cmd
    else {
        unreachable!()
    };
    let g = PrefractalGraph::build(*level, *half)?;
    let text = match heights {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| CliError::Config(format!("reading {}: {e}", p.display())))?),
        None => None,
    };
    let sigma = initial_pile(&g, text.as_deref(), law, *seed)?;
    let policy = match policy {
        Policy::Fifo => TopplePolicy::Fifo,
        Policy::Lifo => TopplePolicy::Lifo,
        Policy::Random => TopplePolicy::RandomOrder(*seed),
    };
    let domain = Domain::whole(&g);
    let r = stabilize(&domain, &sigma, policy, *cap)?;
    let col = |v: Vec<String>| v;
    let columns = [
        ("sigma", col(sigma.heights().iter().map(u32::to_string).collect())),
        ("final", col(r.final_heights.heights().iter().map(u32::to_string).collect())),
        ("topples", col(r.topples.iter().map(u64::to_string).collect())),
        ("odometer", col((0..g.len() as u32).map(|i| r.odometer(i).to_string()).collect())),
    ];
    let mut buf = Vec::new();
    export::write_fields_csv(&g, &columns, &mut buf)?;
    out.write("sandpile.csv", &buf)?;
    let origin = g.id(LatticeCoord::ORIGIN).map(|o| r.odometer(o));
    let summary = serde_json::json!({
        "vertices": g.len(),
        "total_mass": sigma.mass_in(domain.region()),
        "stable_mass": r.final_heights.mass_in(domain.region()),
        "sink_mass": r.sink_mass,
        "total_topples": r.total_topples(),
        "origin_odometer": origin,
        "laplacian_check": laplacian_check(&domain, &sigma, &r),
        "seed": seed,
    });
    out.write("summary.json", &json_bytes(&summary)?)?;
    println!(
        "stabilized {} vertices: {} topplings, {} chips to the sink, u(o) = {}",
        g.len(),
        r.total_topples(),
        r.sink_mass,
        origin.map_or("n/a".to_string(), |u| u.to_string())
    );
    Ok(())
}

fn render(cmd: &Command, out: &OutDir) -> CliResult<()> {
    let Command::Render {
        level,
        half,
        overlay,
        input,
        law,
        seed,
    } = cmd
    else {
        unreachable!()
    };
    let opts = RenderOptions::default();
    let svg = match overlay {
        OverlayKind::Rotors => {
            let (g, rotors) = match input {
                Some(text) => {
                    let g = PrefractalGraph::build(*level, *half)?;
                    let map = parse_json("rotors", text)?;
                    let r = RotorConfig::import(&g, &map)?;
                    (g, r)
                }
                None if *half == Half::Both && *level >= 1 => reflecting_example(*level)?,
                None => {
                    let g = PrefractalGraph::build(*level, *half)?;
                    let r = RotorConfig::from_field(&g, &RotorField::new(RotorLaw::uniform(), *seed));
                    (g, r)
                }
            };
            render_svg(&g, Overlay::Rotors(&rotors), &opts)?
        }
        OverlayKind::None => render_svg(&PrefractalGraph::build(*level, *half)?, Overlay::None, &opts)?,
        OverlayKind::Heights | OverlayKind::Odometer => {
            let g = PrefractalGraph::build(*level, *half)?;
            let sigma = initial_pile(&g, input.as_deref(), law, *seed)?;
            let r = stabilize(&Domain::whole(&g), &sigma, TopplePolicy::Fifo, u64::MAX)?;
            if matches!(overlay, OverlayKind::Heights) {
                render_svg(&g, Overlay::Heights(r.final_heights.heights()), &opts)?
            } else {
                let u: Vec<f64> = (0..g.len() as u32).map(|i| r.odometer(i) as f64).collect();
                render_svg(&g, Overlay::Odometer(&u), &opts)?
            }
        }
    };
    out.write("figure.svg", svg.as_bytes())?;
    println!("wrote {}", out.path("figure.svg").display());
    Ok(())
}

fn execute(config: &RunConfig, out_dir: &Path, workers: usize) -> CliResult<()> {
    let experiment = config.command.experiment()?;
    if let Some(spec) = &experiment {
        spec.validate()?;
    }
    let out = OutDir::create(out_dir)?;
    out.write("config.json", &json_bytes(config)?)?;
    if let Some(spec) = experiment {
        return run_experiment(&spec, &out, workers);
    }
    match &config.command {
        Command::BuildGraph { level, half } => {
            let g = PrefractalGraph::build(*level, *half)?;
            out.write("graph.json", &export::graph_json(&g)?)?;
            println!("SG_{level} ({}): {} vertices, {} edges", half.as_str(), g.len(), g.edge_count());
            Ok(())
        }
        cmd @ Command::RotorRun { .. } => rotor_run(cmd, &out),
        cmd @ Command::SandpileStabilize { .. } => sandpile_stabilize(cmd, &out),
        cmd @ Command::Render { .. } => render(cmd, &out),
        _ => unreachable!("experiments handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match (&cli.config, cli.command) {
        (Some(path), _) => {
            let parsed = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))
                .and_then(|text| parse_json::<RunConfig>("config", &text));
            match parsed {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            }
        }
        (None, Some(command)) => RunConfig { command },
        (None, None) => {
            eprintln!("a subcommand or --config is required; see --help");
            return ExitCode::from(2);
        }
    };
    let mut config = config;
    if let Err(e) = config.command.inline_files() {
        eprintln!("{e}");
        return ExitCode::from(2);
    }
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match execute(&config, &cli.out, workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Runtime(_) => 3,
            })
        }
    }
}
