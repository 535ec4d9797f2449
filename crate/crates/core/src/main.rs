use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use guided_planner::barrier::Barrier;
use guided_planner::data::{build_dataset, Dataset, LatticeConfig, Manifest, Split};
use guided_planner::geometry::{Scene, SceneFile, Track};
use guided_planner::harness::figures::{trace_panels, write_figure, Panel, SNAPSHOT_TIMES};
use guided_planner::harness::{
    bench_optimality, bench_warm_start, median_ratio, simulate, single_obstacle_scenes, Planner, RunConfig, Scenario,
};
use guided_planner::sampler::{sample_chains, sample_with_snapshots, Guide, Plan};
use guided_planner::scorenet::{load_checkpoint, save_checkpoint, train, ScoreNet};
use guided_planner::{Error, Result};

#[derive(Parser)]
#[command(name = "guided-planner", version, about = "Barrier-guided diffusion planner for racing trajectories")]
struct Cli {
    /// Run configuration (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, training and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the expert dataset.
    GenData,
    /// Train the score network on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Plan once on a scene and write the plan, diagnostics and snapshots.
    Sample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene file; the empty track when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Disable guidance.
        #[arg(long)]
        unguided: bool,
    },
    /// Closed-loop racing simulation.
    Simulate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenario script; the configured one when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Trace file; `<out>/trace.jsonl` when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Cold versus warm-start comparison.
    BenchWarm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Dynamic scenario; a crossing obstacle when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Plan length against the lattice oracle.
    BenchOpt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Render a trace, or the bare track, to SVG and CSV.
    Plot {
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Dataset whose track to draw; the configured track when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_scene(track: &Arc<Track>, manifest: &Manifest, path: Option<&Path>) -> Result<Scene> {
    match path {
        None => Ok(Scene::empty(track.clone())),
        Some(p) => {
            let file = SceneFile::load(p)?;
            if file.track_ref != manifest.track_ref {
                return Err(Error::InvalidArgument(format!(
                    "scene track {} differs from dataset track {}",
                    file.track_ref, manifest.track_ref
                )));
            }
            Scene::from_spec(track.clone(), &file.spec)
        }
    }
}

struct Context {
    cfg: RunConfig,
    manifest: Manifest,
    track: Arc<Track>,
    net: ScoreNet<f32>,
}

impl Context {
    fn load(cfg: &RunConfig, data: &Path, checkpoint: &Path) -> Result<Self> {
        let manifest = Manifest::load(data)?;
        let track = manifest.track()?;
        let net = load_checkpoint(checkpoint)?;
        Ok(Self {
            cfg: cfg.clone(),
            manifest,
            track,
            net,
        })
    }

    fn planner(&self) -> Result<Planner<'_>> {
        Planner::new(
            &self.net,
            self.track.clone(),
            self.cfg.barrier_config(&self.manifest)?,
            self.cfg.sampler_config(),
            self.cfg.warm_start.clone(),
        )
    }
}

#[derive(Serialize)]
struct SampleSummary {
    feasible: bool,
    score_evals: usize,
    clip_count: usize,
    frenet_length: f64,
}

#[derive(Serialize)]
struct OptSummary {
    scenes: usize,
    solved: usize,
    median_ratio: Option<f64>,
    empty_scene_ratio: Option<f64>,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = cli.out.as_path();
    create_dir(out)?;
    match cli.command {
        Command::GenData => {
            let ds = build_dataset(&cfg.data)?;
            let digest = ds.write(out)?;
            log::info!("{} records, sha256 {digest}", ds.records.len());
        }
        Command::Train { data } => {
            let ds = Dataset::load(&data)?;
            let samples = ds.samples(Split::Train);
            let mut net = ScoreNet::<f32>::new(cfg.scorenet.clone(), cfg.schedule, cfg.train.seed)?;
            let mut tcfg = cfg.train.clone();
            if tcfg.checkpoint_every > 0 && tcfg.checkpoint_dir.is_none() {
                tcfg.checkpoint_dir = Some(out.to_path_buf());
            }
            let report = train(&mut net, &samples, &tcfg)?;
            report.write_history(out.join("loss.csv"))?;
            save_checkpoint(&net, out.join("model.ckpt"))?;
            log::info!("final loss {:?}", report.history.last());
        }
        Command::Sample {
            data,
            checkpoint,
            scene,
            unguided,
        } => {
            let ctx = Context::load(&cfg, &data, &checkpoint)?;
            let scene = load_scene(&ctx.track, &ctx.manifest, scene.as_deref())?;
            let bcfg = cfg.barrier_config(&ctx.manifest)?;
            let mut scfg = cfg.sampler_config();
            if unguided {
                scfg = scfg.unguided();
            }
            let barrier = Barrier::new(&bcfg, &scene, scene.tau)?;
            let guide = Guide { barrier: &barrier };
            let guide = scfg.guidance.map(|_| &guide);
            let dim = 2 * ctx.track.n_stations();
            let sampled = sample_chains(&scfg, &ctx.net, guide, dim, [0])?;
            let plan = Plan::from_sample(&sampled.samples[0], &ctx.track, &bcfg.normalizer, scene.tau, &cfg.digest())?;
            plan.write(out.join("plan.json"))?;
            sampled.write_diagnostics(out.join("diagnostics.csv"))?;
            let traj = plan.trajectory();
            write_json(
                &out.join("summary.json"),
                &SampleSummary {
                    feasible: scene.fully_feasible(&traj, scene.tau)?,
                    score_evals: sampled.score_evals,
                    clip_count: sampled.clip_count,
                    frenet_length: traj.frenet_length(&ctx.track),
                },
            )?;
            let (_, snaps) = sample_with_snapshots(&scfg, &ctx.net, guide, dim, 0, &SNAPSHOT_TIMES)?;
            let panels: Vec<Panel> = snaps
                .iter()
                .map(|(t, x)| Panel {
                    title: format!("t = {t:.3}"),
                    obstacles: scene.obstacles.clone(),
                    trajectories: vec![(format!("t_{t:.3}"), bcfg.normalizer.denormalize(x))],
                    paths: Vec::new(),
                })
                .collect();
            write_figure(out, "denoising", &ctx.track, &panels)?;
        }
        Command::Simulate {
            data,
            checkpoint,
            scenario,
            trace,
        } => {
            let ctx = Context::load(&cfg, &data, &checkpoint)?;
            let mut lcfg = cfg.harness.closed_loop.clone();
            if let Some(p) = scenario {
                lcfg.scenario = Scenario::load(p)?;
            }
            let trace = trace.unwrap_or_else(|| out.join("trace.jsonl"));
            let file = std::fs::File::create(&trace).map_err(|e| Error::io(&trace, e))?;
            let mut w = std::io::BufWriter::new(file);
            let report = simulate(&ctx.planner()?, &lcfg, Some(&mut w))?;
            std::io::Write::flush(&mut w).map_err(|e| Error::io(&trace, e))?;
            write_json(&out.join("report.json"), &report)?;
            log::info!("{} collisions, {} fallbacks over {} plans", report.collisions, report.fallbacks, report.plans);
        }
        Command::BenchWarm {
            data,
            checkpoint,
            scene,
            scenario,
        } => {
            let ctx = Context::load(&cfg, &data, &checkpoint)?;
            let scene = load_scene(&ctx.track, &ctx.manifest, scene.as_deref())?;
            let scenario = match scenario {
                Some(p) => Scenario::load(p)?,
                None => Scenario::crossing(&ctx.track),
            };
            let b = &cfg.harness.bench;
            let result = bench_warm_start(
                &ctx.planner()?,
                &scene,
                b.warm_seeds,
                &scenario,
                b.warm_ticks,
                cfg.harness.closed_loop.replan_period,
            )?;
            result.write_csv(out.join("warm_start.csv"))?;
            write_json(&out.join("warm_start.json"), &result)?;
        }
        Command::BenchOpt { data, checkpoint } => {
            let ctx = Context::load(&cfg, &data, &checkpoint)?;
            let planner = ctx.planner()?;
            let lattice: &LatticeConfig = &ctx.manifest.config.lattice;
            let mut scenes = vec![Scene::empty(ctx.track.clone())];
            scenes.extend(single_obstacle_scenes(&ctx.track, cfg.harness.bench.opt_scenes, cfg.seed));
            let rows = bench_optimality(&planner, &scenes, lattice)?;
            guided_planner::harness::bench::write_rows(out.join("optimality.csv"), &rows)?;
            write_json(
                &out.join("optimality.json"),
                &OptSummary {
                    scenes: rows.len() - 1,
                    solved: rows[1..].iter().filter(|r| r.ratio.is_some()).count(),
                    median_ratio: median_ratio(&rows[1..]),
                    empty_scene_ratio: rows[0].ratio,
                },
            )?;
        }
        Command::Plot { trace, data } => {
            let track = match data {
                Some(d) => Manifest::load(d)?.track()?,
                None => Arc::new(Track::from_ref(&cfg.data.track_ref, cfg.data.stations)?),
            };
            let panels = match trace {
                Some(p) => trace_panels(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?,
                None => Vec::new(),
            };
            write_figure(out, "figure", &track, &panels)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_infeasible_input() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
