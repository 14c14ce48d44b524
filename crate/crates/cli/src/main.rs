use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hyloco_core::benchmark::{run_bench, BenchConfig};
use hyloco_core::costmap::CostConfig;
use hyloco_core::format;
use hyloco_core::heuristics::{generate_tasks, train_heuristic, HeuristicKind, HeuristicModel, TrainingConfig};
use hyloco_core::mission::{CandidateRequest, Mission};
use hyloco_core::planner::{validate_plan, Goal, Plan, PlannerOptions};
use hyloco_core::robot::{Pose2, RobotSpec, RobotState};
use hyloco_core::scenario::{generate_scenario, ScenarioKind, ScenarioParams};
use hyloco_core::sim::World;
use hyloco_core::terrain::{analyze_terrain, ClassifierModel, HeightMap, TerrainClassMap};
use hyloco_service::{CandidatesResponse, ServiceConfig};

#[derive(Parser)]
#[command(name = "hyloco", version, about = "Hybrid driving-stepping locomotion planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with command-specific settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct MapInput {
    /// Directory written by `gen-map`.
    #[arg(long, conflicts_with = "map")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    /// Class map; classified from the height map when absent.
    #[arg(long, requires = "map")]
    classes: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario: map, classes, ground truth and manifest.
    GenMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: ScenarioKind,
    },
    /// Plan candidate paths, one per λ.
    Plan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: MapInput,
        /// `x,y,theta`
        #[arg(long, value_parser = parse_pose)]
        start: Option<Pose2>,
        /// `x,y` or `x,y,theta`
        #[arg(long, value_parser = parse_goal)]
        goal: Option<Goal>,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long)]
        heuristic: Option<HeuristicKind>,
        #[arg(long)]
        time_budget: Option<f64>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the abstract heuristic and report validation metrics.
    TrainHeuristic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tasks: Option<usize>,
    },
    /// Compare heuristics on a seeded scenario suite.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<ScenarioKind>>,
        #[arg(long, value_delimiter = ',')]
        heuristics: Option<Vec<HeuristicKind>>,
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Check a plan against the map it was planned on.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: MapInput,
        #[arg(long)]
        plan: PathBuf,
    },
    /// Run the mission service; missions persist under `--out`.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bind: Option<SocketAddr>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"))).collect()
}

fn parse_pose(s: &str) -> Result<Pose2, String> {
    match parse_floats(s)?.as_slice() {
        [x, y] => Ok(Pose2::new(*x, *y, 0.0)),
        [x, y, t] => Ok(Pose2::new(*x, *y, *t)),
        _ => Err("expected x,y[,theta]".into()),
    }
}

fn parse_goal(s: &str) -> Result<Goal, String> {
    match parse_floats(s)?.as_slice() {
        [x, y] => Ok(Goal::new(*x, *y)),
        [x, y, t] => Ok(Goal { theta: *t, theta_tol: 0.2, ..Goal::new(*x, *y) }),
        _ => Err("expected x,y[,theta]".into()),
    }
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    command: &'a str,
    seed: Option<u64>,
    args: Vec<String>,
    config: &'a C,
}

fn record<C: Serialize>(common: &Common, command: &str, config: &C) -> Result<()> {
    fs::create_dir_all(&common.out)?;
    let r = RunRecord { command, seed: common.seed, args: std::env::args().skip(1).collect(), config };
    write(&common.out, "run.json", serde_json::to_string_pretty(&r)?)
}

fn load_model(path: Option<&Path>) -> Result<HeuristicModel> {
    match path {
        Some(p) => Ok(HeuristicModel::from_json(&fs::read_to_string(p)?)?),
        None => Ok(HeuristicModel::default_model().clone()),
    }
}

struct Loaded {
    map: HeightMap,
    classes: TerrainClassMap,
    start: Option<Pose2>,
    goal: Option<Goal>,
}

fn load_input(input: &MapInput) -> Result<Loaded> {
    if let Some(dir) = &input.scenario {
        let map = format::decode_height_map(&fs::read(dir.join("map.hlm"))?)?;
        let classes = format::decode_class_map(&fs::read(dir.join("classes.hlm"))?)?;
        let manifest: hyloco_core::scenario::ScenarioManifest = serde_json::from_str(&fs::read_to_string(dir.join("scenario.json"))?)?;
        return Ok(Loaded { map, classes, start: Some(manifest.start), goal: Some(manifest.goal) });
    }
    let Some(path) = &input.map else { bail!("either --scenario or --map is required") };
    let map = format::decode_height_map(&fs::read(path)?)?;
    let classes = match &input.classes {
        Some(p) => format::decode_class_map(&fs::read(p)?)?,
        None => analyze_terrain(&map, None, ClassifierModel::default_model())?.classes,
    };
    Ok(Loaded { map, classes, start: None, goal: None })
}

fn gen_map(common: &Common, kind: ScenarioKind) -> Result<()> {
    let params: ScenarioParams = read_config(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(0);
    let sc = generate_scenario(kind, &params, seed)?;
    let analysis = analyze_terrain(&sc.map, Some(&sc.appearance), ClassifierModel::default_model())?;
    let truth = sc.ground_truth_classes();
    let out = &common.out;
    record(common, "gen-map", &params)?;
    write(out, "map.hlm", format::encode_height_map(&sc.map))?;
    write(out, "classes.hlm", format::encode_class_map(&analysis.classes))?;
    write(out, "truth.hlm", format::encode_class_map(&truth))?;
    write(out, "map.pgm", format::height_map_pgm(&sc.map))?;
    write(out, "classes.pgm", format::class_map_pgm(&analysis.classes))?;
    write(out, "scenario.json", serde_json::to_string_pretty(&sc.manifest())?)?;
    println!("{} {}x{} cells, start ({:.2}, {:.2}), goal ({:.2}, {:.2})", sc.name, sc.geometry().width, sc.geometry().height, sc.start.x, sc.start.y, sc.goal.x, sc.goal.y);
    Ok(())
}

/// Settings for `plan`; command-line flags override them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PlanConfig {
    lambdas: Vec<f64>,
    heuristic: HeuristicKind,
    time_budget: f64,
    initial_epsilon: f64,
    options: PlannerOptions,
    robot: RobotSpec,
    start: Option<Pose2>,
    goal: Option<Goal>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        let r = CandidateRequest::new(Goal::new(0.0, 0.0), vec![0.5, 5.0]);
        PlanConfig {
            lambdas: r.lambdas,
            heuristic: HeuristicKind::AbstractInformed,
            time_budget: r.time_budget,
            initial_epsilon: r.initial_epsilon,
            options: r.options,
            robot: RobotSpec::default(),
            start: None,
            goal: None,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn plan_cmd(
    common: &Common,
    input: &MapInput,
    start: Option<Pose2>,
    goal: Option<Goal>,
    lambdas: Option<Vec<f64>>,
    heuristic: Option<HeuristicKind>,
    time_budget: Option<f64>,
    model: Option<&Path>,
) -> Result<bool> {
    let mut cfg: PlanConfig = read_config(common.config.as_deref())?;
    let loaded = load_input(input)?;
    cfg.start = start.or(cfg.start).or(loaded.start);
    cfg.goal = goal.or(cfg.goal).or(loaded.goal);
    if let Some(l) = lambdas {
        cfg.lambdas = l;
    }
    if let Some(h) = heuristic {
        cfg.heuristic = h;
    }
    if let Some(t) = time_budget {
        cfg.time_budget = t;
    }
    let Some(goal) = cfg.goal else { bail!("no goal: pass --goal or use a scenario") };
    let start = cfg.start.unwrap_or_else(|| {
        let g = loaded.map.geometry();
        let (x, y) = g.cell_center((g.width / 2, g.height / 2));
        Pose2::new(x, y, 0.0)
    });
    record(common, "plan", &cfg)?;
    let robot = RobotState::standing(start, &cfg.robot, Some(&loaded.map));
    let world = World::new(loaded.map, loaded.classes, robot, cfg.robot.clone(), 1.0)?;
    let request = CandidateRequest {
        goal,
        lambdas: cfg.lambdas.clone(),
        heuristic: cfg.heuristic,
        time_budget: cfg.time_budget,
        initial_epsilon: cfg.initial_epsilon,
        options: cfg.options.clone(),
        session: None,
    };
    let model = load_model(model)?;
    let mut mission = Mission::new("cli", world, 0);
    let candidates = mission.request_candidates(&request, Some(&model), 0)?;
    for (pid, plan) in &mission.plans {
        write(&common.out, &format!("plans/{pid}.json"), plan.to_json())?;
    }
    let mut ok = true;
    for c in &candidates {
        match (&c.summary, &c.error) {
            (Some(s), _) => println!(
                "lambda {}: {} cost {:.3} eps {} steps {} expansions {}",
                c.lambda,
                c.plan_id.as_deref().unwrap_or("-"),
                s.cost,
                s.epsilon,
                s.steps,
                s.expansions
            ),
            (None, Some(e)) => {
                ok = false;
                println!("lambda {}: {} {}", c.lambda, e.code, e.message)
            }
            (None, None) => {}
        }
    }
    write(&common.out, "candidates.json", serde_json::to_string_pretty(&CandidatesResponse { candidates })?)?;
    Ok(ok)
}

fn train_cmd(common: &Common, tasks: Option<usize>) -> Result<bool> {
    let mut cfg: TrainingConfig = read_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = tasks {
        cfg.tasks = n;
    }
    record(common, "train-heuristic", &cfg)?;
    let spec = RobotSpec::default();
    let set = generate_tasks(&cfg, &spec);
    let (model, report) = train_heuristic(&set, &cfg, &spec)?;
    write(&common.out, "heuristic_model.json", model.to_json())?;
    write(&common.out, "training_report.json", serde_json::to_string_pretty(&report)?)?;
    let v = &report.validation;
    println!(
        "solved {}/{} tasks, gamma {:.4}, under-estimation rate {:.4} over {} states, max over-estimation {:.4}",
        report.solved, report.tasks, report.gamma, v.under_estimation_rate, v.states, v.max_over_estimation
    );
    if v.under_estimation_rate < 0.99 {
        eprintln!("under-estimation rate below 0.99");
        return Ok(false);
    }
    Ok(true)
}

fn bench_cmd(
    common: &Common,
    kinds: Option<Vec<ScenarioKind>>,
    heuristics: Option<Vec<HeuristicKind>>,
    scenarios: Option<usize>,
    repetitions: Option<usize>,
    model: Option<&Path>,
) -> Result<()> {
    let mut cfg: BenchConfig = read_config(common.config.as_deref())?;
    if let Some(k) = kinds {
        cfg.kinds = k;
    }
    if let Some(h) = heuristics {
        cfg.heuristics = h;
    }
    if let Some(n) = scenarios {
        cfg.scenarios = n;
    }
    if let Some(r) = repetitions {
        cfg.repetitions = r;
    }
    record(common, "bench", &cfg)?;
    let model = load_model(model)?;
    let report = run_bench(&cfg, common.seed.unwrap_or(1), Some(&model))?;
    let md = report.to_markdown();
    write(&common.out, "bench.json", report.to_json())?;
    write(&common.out, "bench.md", &md)?;
    print!("{md}");
    Ok(())
}

#[derive(Serialize)]
struct ValidationOutput {
    valid: bool,
    lambda: f64,
    index: Option<usize>,
    reason: Option<String>,
}

/// Settings for `validate`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ValidateConfig {
    robot: RobotSpec,
    cost: CostConfig,
}

fn validate_cmd(common: &Common, input: &MapInput, plan_path: &Path) -> Result<bool> {
    let cfg: ValidateConfig = read_config(common.config.as_deref())?;
    record(common, "validate", &cfg)?;
    let plan = Plan::from_json(&fs::read_to_string(plan_path).with_context(|| format!("reading {}", plan_path.display()))?)?;
    let loaded = load_input(input)?;
    let features = hyloco_core::terrain::compute_features(&loaded.map, hyloco_core::terrain::FEATURE_WINDOW);
    let costmap = hyloco_core::costmap::build_cost_map_with(std::sync::Arc::new(loaded.map), &loaded.classes, &features, plan.lambda, cfg.cost)?;
    let out = match validate_plan(&plan, &costmap, &cfg.robot) {
        Ok(()) => ValidationOutput { valid: true, lambda: plan.lambda, index: None, reason: None },
        Err(v) => ValidationOutput { valid: false, lambda: plan.lambda, index: Some(v.index), reason: Some(v.reason) },
    };
    write(&common.out, "validation.json", serde_json::to_string_pretty(&out)?)?;
    match &out.reason {
        None => println!("valid ({} actions)", plan.actions.len()),
        Some(r) => println!("invalid at {}: {}", out.index.unwrap_or(0), r),
    }
    Ok(out.valid)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ServeConfig {
    bind: SocketAddr,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig { bind: SocketAddr::from(([127, 0, 0, 1], 8080)) }
    }
}

fn serve_cmd(common: &Common, bind: Option<SocketAddr>, model: Option<&Path>) -> Result<()> {
    let mut cfg: ServeConfig = read_config(common.config.as_deref())?;
    if let Some(b) = bind {
        cfg.bind = b;
    }
    record(common, "serve", &cfg)?;
    let model = load_model(model)?;
    let config = ServiceConfig { bind: cfg.bind, storage: common.out.join("missions") };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(hyloco_service::serve(config, Some(model)))?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenMap { common, kind } => gen_map(&common, kind).map(|_| true),
        Command::Plan { common, input, start, goal, lambdas, heuristic, time_budget, model } => {
            plan_cmd(&common, &input, start, goal, lambdas, heuristic, time_budget, model.as_deref())
        }
        Command::TrainHeuristic { common, tasks } => train_cmd(&common, tasks),
        Command::Bench { common, kinds, heuristics, scenarios, repetitions, model } => {
            bench_cmd(&common, kinds, heuristics, scenarios, repetitions, model.as_deref()).map(|_| true)
        }
        Command::Validate { common, input, plan } => validate_cmd(&common, &input, &plan),
        Command::Serve { common, bind, model } => serve_cmd(&common, bind, model.as_deref()).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
