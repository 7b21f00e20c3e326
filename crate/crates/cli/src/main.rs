mod errors;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use loopmac::admm::{metrics, AdmmConfig, TrajectoryLog};
use loopmac::bench::{
    admm_run, bench, central_run, loopmac_run, verify_identical, write_curves_csv, write_post_convergence_csv,
    write_timing_csv, BenchConfig, BenchSummary, LoopmacConfig, RunReport,
};
use loopmac::gauge::{load_nets, save_nets, GaugeNet, Precision};
use loopmac::model::{reference_agents, ScenarioInput, Vpp};
use loopmac::qp::QpSettings;
use loopmac::scenario::{load_scenario, save_scenario, synthesize_day, DayProfileSet};
use loopmac::train::{
    fit_scaling, generate_dataset, prepare, rolling_day, train_with, window_label, write_curve_csv, DatasetConfig,
    Split, TrainConfig, TrainingSet,
};

use errors::CliError;

#[derive(Parser, Debug)]
#[command(name = "loopmac", version, about = "Multi-agent VPP dispatch: centralized, ADMM and learned coordination")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario directory; a synthesized day from --seed when absent.
    #[arg(long, global = true, env = "LOOPMAC_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Steps per dispatch window.
    #[arg(long, global = true, env = "LOOPMAC_HORIZON", default_value_t = 12)]
    horizon: usize,
    /// ADMM penalty.
    #[arg(long, global = true, env = "LOOPMAC_RHO", default_value_t = 0.0005)]
    rho: f64,
    /// Rounds per run (ADMM and LOOP-MAC).
    #[arg(long, global = true, env = "LOOPMAC_ITERS", default_value_t = 20)]
    iters: usize,
    #[arg(long, global = true, env = "LOOPMAC_SEED", default_value_t = 2024)]
    seed: u64,
    /// Directory of per-agent weight files.
    #[arg(long, global = true, env = "LOOPMAC_WEIGHTS")]
    weights: Option<PathBuf>,
    #[arg(long, global = true, env = "LOOPMAC_OUT", default_value = "out")]
    out: PathBuf,
    /// Evaluate agents on one thread each.
    #[arg(long, global = true, env = "LOOPMAC_PARALLEL_AGENTS")]
    parallel_agents: bool,
    /// Re-run and check that every reported number is reproduced.
    #[arg(long, global = true, env = "LOOPMAC_VERIFY")]
    verify: bool,
    /// Arithmetic of the network layers in LOOP-MAC runs.
    #[arg(long, global = true, env = "LOOPMAC_PRECISION", value_enum, default_value_t = PrecisionArg::Single)]
    precision: PrecisionArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PrecisionArg {
    Single,
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthesized scenario directory to --out.
    Synth,
    /// Solve one window centrally.
    Central {
        /// Window start step.
        #[arg(long, default_value_t = 0)]
        window: usize,
    },
    /// Run ADMM on one window.
    Admm {
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Stop once every consensus residual is below this value.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Record ADMM trajectories for every window of the day.
    GenData,
    /// Train the agents' networks.
    Train {
        /// Trajectory CSV written by gen-data; generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        /// Unroll length of the recurrent loss.
        #[arg(long, default_value_t = 3)]
        recurrent: usize,
    },
    /// Run LOOP-MAC on one window with trained weights.
    Loopmac {
        #[arg(long, default_value_t = 0)]
        window: usize,
    },
    /// Run all three solvers on the test windows and write the tables.
    Bench {
        /// Use only the first N test windows.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Per-iteration deviation curves from a trajectory CSV.
    Report {
        #[arg(long)]
        log: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return CliError::usage(e.to_string().trim().to_string()).emit();
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.emit(),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let c = &cli.common;
    if c.horizon == 0 {
        return Err(CliError::usage("--horizon must be at least 1"));
    }
    match &cli.command {
        Command::Synth => synth(c),
        Command::Central { window } => central(c, *window),
        Command::Admm { window, tol } => admm(c, *window, *tol),
        Command::GenData => gen_data(c),
        Command::Train {
            data,
            epochs,
            lr,
            batch,
            recurrent,
        } => train(
            c,
            data.as_deref(),
            TrainConfig {
                epochs: *epochs,
                learning_rate: *lr,
                batch_size: *batch,
                recurrent_steps: *recurrent,
                seed: c.seed,
                ..Default::default()
            },
        ),
        Command::Loopmac { window } => loopmac_cmd(c, *window),
        Command::Bench { limit } => bench_cmd(c, *limit),
        Command::Report { log } => report(c, log),
    }
}

fn load(c: &Common) -> Result<(Vpp, DayProfileSet), CliError> {
    match &c.scenario {
        Some(dir) => {
            let (agents, day) = load_scenario(dir)?;
            Ok((Vpp::new(agents), day))
        }
        None => Ok((Vpp::new(reference_agents()), synthesize_day(c.seed))),
    }
}

fn admm_config(c: &Common) -> AdmmConfig {
    AdmmConfig {
        rho: c.rho,
        max_iter: c.iters,
        parallel_agents: c.parallel_agents,
        ..Default::default()
    }
}

/// Window `t` of the rolling day, with states chained from the start.
fn window_at(vpp: &Vpp, day: &DayProfileSet, c: &Common, t: usize) -> Result<ScenarioInput, CliError> {
    if t + c.horizon > day.len() {
        return Err(CliError::usage(format!(
            "window {t} with horizon {} exceeds the {}-step day",
            c.horizon,
            day.len()
        )));
    }
    let mut all = rolling_day(vpp, day, c.horizon, t + 1, QpSettings::default())?;
    Ok(all.pop().expect("window range checked").0)
}

fn out_dir(c: &Common) -> Result<&Path, CliError> {
    fs::create_dir_all(&c.out).map_err(|e| CliError::io(&c.out, e))?;
    Ok(&c.out)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn csv_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> csv::Result<()>) -> Result<(), CliError> {
    f(create(path)?).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(create(path)?, value).map_err(|e| CliError::io(path, e))
}

fn weights_dir(c: &Common) -> PathBuf {
    c.weights.clone().unwrap_or_else(|| c.out.join("weights"))
}

fn verify_reports(a: &RunReport, b: &RunReport) -> Result<(), CliError> {
    if a.fingerprint() != b.fingerprint() {
        return Err(loopmac::bench::BenchError::Verify(format!("{} run of {} differs", a.mode.label(), a.scenario)).into());
    }
    println!("verify: rerun reproduced every reported number");
    Ok(())
}

fn print_run(rep: &RunReport) {
    let last = rep.schedule.len().saturating_sub(1);
    println!(
        "{} {}: {} round(s), converged at {}, final optimality {:.6}, final schedule {:.6}",
        rep.mode.label(),
        rep.scenario,
        rep.schedule.len(),
        rep.converged_at,
        rep.optimality.get(last).copied().unwrap_or(f64::NAN),
        rep.schedule.get(last).copied().unwrap_or(f64::NAN),
    );
}

fn synth(c: &Common) -> Result<(), CliError> {
    let out = out_dir(c)?;
    let agents = reference_agents();
    let day = loopmac::scenario::synthesize_day_for(&agents, c.seed);
    save_scenario(out, &agents, &day)?;
    println!("wrote {}-step scenario for {} agents to {}", day.len(), agents.len(), out.display());
    Ok(())
}

fn central(c: &Common, window: usize) -> Result<(), CliError> {
    let (vpp, day) = load(c)?;
    let scen = window_at(&vpp, &day, c, window)?;
    let label = window_label(window);
    let (mut rep, sol) = central_run(&vpp, &scen, &label, QpSettings::default())?;
    rep.seed = c.seed;
    if c.verify {
        let (again, _) = central_run(&vpp, &scen, &label, QpSettings::default())?;
        verify_reports(&rep, &RunReport { seed: c.seed, ..again })?;
    }
    let out = out_dir(c)?;
    write_json(&out.join("report.json"), &rep)?;
    print_run(&rep);
    println!("objective {:.6}", sol.objective);
    Ok(())
}

fn write_metric_curves(path: &Path, logs: &[TrajectoryLog]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| CliError::io(path, e);
    w.write_record(["scenario", "iteration", "optimality", "schedule", "consensus"]).map_err(err)?;
    for log in logs {
        let m = metrics(log)?;
        for (k, it) in m.iterations.iter().enumerate() {
            w.write_record([
                log.scenario.clone(),
                it.to_string(),
                m.mean_optimality[k].to_string(),
                m.schedule[k].to_string(),
                m.consensus[k].to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn admm(c: &Common, window: usize, tol: Option<f64>) -> Result<(), CliError> {
    let (vpp, day) = load(c)?;
    let scen = window_at(&vpp, &day, c, window)?;
    let label = window_label(window);
    let cfg = AdmmConfig {
        stop_tolerance: tol,
        ..admm_config(c)
    };
    let (rep, log) = admm_run(&vpp, &scen, &cfg, &label, c.seed)?;
    if c.verify {
        let (again, _) = admm_run(&vpp, &scen, &cfg, &label, c.seed)?;
        verify_reports(&rep, &again)?;
    }
    let out = out_dir(c)?;
    write_json(&out.join("report.json"), &rep)?;
    TrajectoryLog::write_csv(std::slice::from_ref(&log), create(&out.join("trajectory.csv"))?)?;
    write_metric_curves(&out.join("curves.csv"), std::slice::from_ref(&log))?;
    print_run(&rep);
    println!("rho {}", rep.rho);
    Ok(())
}

fn gen_data(c: &Common) -> Result<(), CliError> {
    let (vpp, day) = load(c)?;
    let cfg = DatasetConfig {
        horizon: c.horizon,
        admm: admm_config(c),
        select: Vec::new(),
    };
    let set = generate_dataset(&vpp, &day, &cfg)?;
    let out = out_dir(c)?;
    let path = out.join("trajectories.csv");
    TrajectoryLog::write_csv(&set.logs(), create(&path)?)?;
    println!(
        "{} windows ({} train points, {} test points) written to {}",
        set.windows.len(),
        set.points(Split::Train).len(),
        set.points(Split::Test).len(),
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    config: TrainConfig,
    best_epoch: usize,
    best_test: f64,
    train_points: usize,
    test_points: usize,
    wall_time: f64,
}

fn train(c: &Common, data: Option<&Path>, cfg: TrainConfig) -> Result<(), CliError> {
    let (vpp, day) = load(c)?;
    let set = match data {
        Some(path) => {
            let logs = TrajectoryLog::read_csv(File::open(path).map_err(|e| CliError::io(path, e))?)?;
            TrainingSet::from_logs(&vpp, &day, c.horizon, logs)?
        }
        None => generate_dataset(
            &vpp,
            &day,
            &DatasetConfig {
                horizon: c.horizon,
                admm: admm_config(c),
                select: Vec::new(),
            },
        )?,
    };
    let template = &set
        .windows
        .first()
        .ok_or_else(|| CliError::usage("the dataset has no windows"))?
        .scenario;
    let mut nets = GaugeNet::for_vpp(&vpp, template, c.seed)?;
    let prep = prepare(&nets, &vpp, &set)?;
    fit_scaling(&mut nets, &prep);
    let rep = train_with(&mut nets, &prep, &cfg, |s| {
        if s.epoch % 10 == 0 || s.epoch == cfg.epochs {
            println!(
                "epoch {:>4}  train {:.4}  test {:.4}  {:.1}s",
                s.epoch, s.train_loss, s.test_loss, s.wall_time
            );
        }
    })?;
    let out = out_dir(c)?;
    let wdir = weights_dir(c);
    save_nets(&wdir, &nets)?;
    csv_file(&out.join("learning_curve.csv"), |w| write_curve_csv(&rep.curve, w))?;
    write_json(
        &out.join("train_report.json"),
        &TrainSummary {
            config: cfg,
            best_epoch: rep.best_epoch,
            best_test: rep.best_test,
            train_points: prep.train.len(),
            test_points: prep.test.len(),
            wall_time: rep.curve.last().map_or(0.0, |s| s.wall_time),
        },
    )?;
    println!(
        "best test loss {:.4} at epoch {}; weights in {}",
        rep.best_test,
        rep.best_epoch,
        wdir.display()
    );
    Ok(())
}

fn nets_for(c: &Common, vpp: &Vpp, template: &ScenarioInput) -> Result<Vec<GaugeNet>, CliError> {
    let dir = c
        .weights
        .as_ref()
        .ok_or_else(|| CliError::usage("--weights is required for this command"))?;
    Ok(load_nets(dir, vpp, template)?)
}

fn loopmac_cfg(c: &Common) -> LoopmacConfig {
    LoopmacConfig {
        max_iter: c.iters,
        parallel_agents: c.parallel_agents,
        precision: c.precision.into(),
    }
}

fn loopmac_cmd(c: &Common, window: usize) -> Result<(), CliError> {
    let (vpp, day) = load(c)?;
    let scen = window_at(&vpp, &day, c, window)?;
    let nets = nets_for(c, &vpp, &scen)?;
    let label = window_label(window);
    let (_, central) = central_run(&vpp, &scen, &label, QpSettings::default())?;
    let cfg = loopmac_cfg(c);
    let (rep, log) = loopmac_run(&nets, &vpp, &scen, &central, &cfg, &label, c.seed)?;
    if c.verify {
        let (again, _) = loopmac_run(&nets, &vpp, &scen, &central, &cfg, &label, c.seed)?;
        verify_reports(&rep, &again)?;
    }
    let out = out_dir(c)?;
    write_json(&out.join("report.json"), &rep)?;
    write_metric_curves(&out.join("curves.csv"), std::slice::from_ref(&log))?;
    print_run(&rep);
    Ok(())
}

fn bench_cmd(c: &Common, limit: Option<usize>) -> Result<(), CliError> {
    let (vpp, day) = load(c)?;
    let mut windows: Vec<(String, ScenarioInput)> = rolling_day(&vpp, &day, c.horizon, day.len(), QpSettings::default())?
        .into_iter()
        .filter(|(s, _)| Split::of(s.horizon.t_start) == Split::Test)
        .map(|(s, _)| (window_label(s.horizon.t_start), s))
        .collect();
    if let Some(n) = limit {
        windows.truncate(n);
    }
    let template = &windows
        .first()
        .ok_or_else(|| CliError::usage("the day has no test window"))?
        .1;
    let nets = nets_for(c, &vpp, template)?;
    let cfg = BenchConfig {
        admm: admm_config(c),
        loopmac: loopmac_cfg(c),
        seed: c.seed,
    };
    let runs = bench(&vpp, &nets, &windows, &cfg)?;
    let summary = BenchSummary::from_runs(&runs);
    if c.verify {
        let again = bench(&vpp, &nets, &windows, &cfg)?;
        let n = verify_identical(&runs, &again)?;
        println!("verify: {n} reports reproduced bit-identically (timings excluded)");
    }
    let out = out_dir(c)?;
    csv_file(&out.join("timing.csv"), |w| write_timing_csv(&summary, w))?;
    csv_file(&out.join("post_convergence.csv"), |w| write_post_convergence_csv(&summary, w))?;
    csv_file(&out.join("curves.csv"), |w| write_curves_csv(&runs, &summary, w))?;
    let all: Vec<&RunReport> = runs.iter().flat_map(|w| [&w.central, &w.admm, &w.loopmac]).collect();
    write_json(&out.join("reports.json"), &all)?;
    write_json(&out.join("summary.json"), &summary)?;
    let text = summary.text();
    fs::write(out.join("summary.txt"), &text).map_err(|e| CliError::io(out, e))?;
    print!("{text}");
    Ok(())
}

fn report(c: &Common, log: &Path) -> Result<(), CliError> {
    let logs = TrajectoryLog::read_csv(File::open(log).map_err(|e| CliError::io(log, e))?)?;
    let out = out_dir(c)?;
    let path = out.join("curves.csv");
    write_metric_curves(&path, &logs)?;
    for l in &logs {
        let m = metrics(l)?;
        if let (Some(o), Some(s)) = (m.mean_optimality.last(), m.schedule.last()) {
            println!("{}: {} iterations, final optimality {:.6}, final schedule {:.6}", l.scenario, m.iterations.len(), o, s);
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}
