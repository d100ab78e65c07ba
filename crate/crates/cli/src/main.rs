use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use chaintensor::config::{OutputFormat, RunConfig};
use chaintensor::models::{
    self, absorption_spectrum, chain_for, dipole_correlation, learn_maps, steady_state,
    write_steady_state_csv, Model,
};
use chaintensor::scaling::{self, BenchPlan};
use chaintensor::spectral::{chain_hamiltonian, recurrence_coefficients, write_chain_csv};
use chaintensor::tns::Setup;
use chaintensor::trajectory::Trajectory;
use chaintensor::ttm::{self, liouvillian_from_t1, map_history, tensors_from_maps};
use chaintensor::Error;

#[derive(Parser)]
#[command(
    name = "chaintensor",
    version,
    about = "Chain-mapped tensor-network dynamics with transfer-tensor continuation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent trajectories.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Recurrence coefficients and chain parameters of the spectral density.
    ChainMap(Common),
    /// One tensor-network trajectory of the default initial state.
    Evolve(Common),
    /// Basis trajectories, dynamical maps and transfer tensors.
    Learn(Common),
    /// Extends the default initial state with stored transfer tensors.
    Propagate(Common),
    /// Dipole correlation and absorption spectrum of the dimer.
    Spectrum(Common),
    /// Steady-state excited population over a list of temperatures.
    SteadyState(Common),
    /// Wall-time scaling of learning and propagation.
    Bench(Common),
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    config_path: PathBuf,
    config: serde_json::Value,
    threads: usize,
    started_unix: f64,
    wall_seconds: f64,
    outputs: Vec<PathBuf>,
    details: serde_json::Value,
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    threads: usize,
    outputs: Vec<PathBuf>,
    details: serde_json::Map<String, serde_json::Value>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn note(&mut self, key: &str, v: impl Serialize) {
        self.details.insert(
            key.to_string(),
            serde_json::to_value(v).unwrap_or(serde_json::Value::Null),
        );
    }

    fn write_json(&mut self, name: &str, v: &impl Serialize) -> chaintensor::Result<()> {
        if self.cfg.writes(OutputFormat::Json) {
            let p = self.path(name);
            std::fs::write(p, serde_json::to_string_pretty(v)?)?;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::ChainMap(c) => ("chain-map", c),
        Command::Evolve(c) => ("evolve", c),
        Command::Learn(c) => ("learn", c),
        Command::Propagate(c) => ("propagate", c),
        Command::Spectrum(c) => ("spectrum", c),
        Command::SteadyState(c) => ("steady-state", c),
        Command::Bench(c) => ("bench", c),
    };
    match execute(name, common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(name: &'static str, common: &Common, command: &Command) -> chaintensor::Result<()> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let raw = std::fs::read_to_string(&common.config)?;
    let cfg = RunConfig::from_path(&common.config)?;
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| cfg.output.directory.clone());
    std::fs::create_dir_all(&out)?;
    let mut run = Run {
        cfg,
        out,
        threads: common.threads.max(1),
        outputs: Vec::new(),
        details: Default::default(),
    };
    match command {
        Command::ChainMap(_) => chain_map(&mut run)?,
        Command::Evolve(_) => evolve(&mut run)?,
        Command::Learn(_) => learn(&mut run)?,
        Command::Propagate(_) => propagate(&mut run)?,
        Command::Spectrum(_) => spectrum(&mut run)?,
        Command::SteadyState(_) => steady(&mut run)?,
        Command::Bench(_) => bench(&mut run)?,
    }
    let manifest_path = run.out.join("manifest.json");
    let manifest = Manifest {
        tool: "chaintensor",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: name,
        config_path: common.config.clone(),
        config: serde_json::from_str(&raw)?,
        threads: run.threads,
        started_unix,
        wall_seconds: started.elapsed().as_secs_f64(),
        outputs: run.outputs.clone(),
        details: serde_json::Value::Object(run.details),
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    info!("wrote {}", manifest_path.display());
    Ok(())
}

fn setup_for(run: &Run, beta: Option<f64>) -> chaintensor::Result<(Model, Setup)> {
    let model = run.cfg.model();
    let evo = run.cfg.evolution_at(beta);
    let chain = chain_for(&run.cfg.density()?, &evo)?;
    let setup = Setup::new(&evo, &model.hamiltonian(), &model.couplings(&chain))?;
    Ok((model, setup))
}

fn chain_map(run: &mut Run) -> chaintensor::Result<()> {
    let density = run.cfg.density()?;
    let coeffs = recurrence_coefficients(&density, run.cfg.chain.n)?;
    let params = chain_hamiltonian(&coeffs)?;
    let p = run.path("chain.csv");
    write_chain_csv(&p, &coeffs, &params)?;
    run.note("reorganization_energy", density.reorganization_energy()?);
    run.note("coupling", params.coupling);
    Ok(())
}

fn evolve(run: &mut Run) -> chaintensor::Result<()> {
    let (model, setup) = setup_for(run, run.cfg.model.beta)?;
    let (traj, summary) = setup.evolve(&model.default_initial_state(), run.cfg.tebd.steps)?;
    if run.cfg.writes(OutputFormat::Csv) {
        let p = run.path("trajectory.csv");
        traj.write_csv(p)?;
    }
    run.write_json("truncation.json", &summary)?;
    run.note("summary", &summary);
    Ok(())
}

fn container_path(run: &Run) -> PathBuf {
    run.cfg
        .ttm
        .as_ref()
        .and_then(|t| t.container.clone())
        .unwrap_or_else(|| run.out.join("tensors.chtn"))
}

fn learn(run: &mut Run) -> chaintensor::Result<()> {
    let t = run.cfg.ttm()?.clone();
    let (model, setup) = setup_for(run, run.cfg.model.beta)?;
    let preps = ttm::preparation_states(model.dim());
    let runs = setup.evolve_many(&preps, t.learn_steps, run.threads)?;
    let (trajs, summaries): (Vec<Trajectory>, Vec<_>) = runs.into_iter().unzip();
    let maps = ttm::maps_from_trajectories(&trajs)?;
    let mut set = tensors_from_maps(&maps, t.threshold);
    if let Some(k) = t.k_override {
        set = set.with_cutoff(k)?;
    } else if !set.cutoff.decayed {
        warn!(
            "transfer tensors have not decayed below {:.1e} within {} steps; the cutoff is the full learning window",
            t.threshold, t.learn_steps
        );
    }
    let container = container_path(run);
    ttm::write_container(&container, &set, Some(&maps))?;
    run.outputs.push(container);
    if run.cfg.writes(OutputFormat::Csv) {
        let p = run.path("tensor_norms.csv");
        ttm::write_norm_csv(p, &set)?;
        for (i, tr) in trajs.iter().enumerate() {
            let p = run.path(&format!("basis_{i}.csv"));
            tr.write_csv(p)?;
        }
    }
    let recovery = liouvillian_from_t1(&set.tensors[0], set.dt)?;
    let h: Vec<Vec<[f64; 2]>> = (0..recovery.hamiltonian.nrows())
        .map(|i| {
            (0..recovery.hamiltonian.ncols())
                .map(|j| {
                    [
                        recovery.hamiltonian[(i, j)].re,
                        recovery.hamiltonian[(i, j)].im,
                    ]
                })
                .collect()
        })
        .collect();
    let report = serde_json::json!({
        "cutoff": set.cutoff.k,
        "decayed": set.cutoff.decayed,
        "trace_violation": maps.trace_violation(),
        "hermiticity_violation": maps.hermiticity_violation(),
        "recovered_hamiltonian": h,
        "recovery_relative_residual": recovery.relative_residual,
        "summaries": summaries,
    });
    run.write_json("learn.json", &report)?;
    run.note("cutoff", set.cutoff.k);
    run.note("decayed", set.cutoff.decayed);
    Ok(())
}

fn propagate(run: &mut Run) -> chaintensor::Result<()> {
    let t = run.cfg.ttm()?.clone();
    let (set, _) = ttm::read_container(container_path(run))?;
    let model = run.cfg.model();
    if set.d_sys() != model.dim() {
        return Err(Error::Config {
            path: "model.system".into(),
            message: format!("stored tensors act on a {}-level system", set.d_sys()),
        });
    }
    let k = t.k_override.unwrap_or(set.cutoff.k).min(set.len());
    let steps = t.propagate_steps.unwrap_or(run.cfg.tebd.steps);
    let traj = ttm::propagate(&set, k, &[model.default_initial_state()], steps)?;
    if run.cfg.writes(OutputFormat::Csv) {
        let p = run.path("propagated.csv");
        traj.write_csv(p)?;
    }
    run.note("cutoff", k);
    run.note("steps", steps);
    Ok(())
}

fn spectrum(run: &mut Run) -> chaintensor::Result<()> {
    let s = run.cfg.spectrum()?.clone();
    let t = run.cfg.ttm()?.clone();
    let (model, setup) = setup_for(run, run.cfg.model.beta)?;
    let Model::Dimer(dimer) = model else {
        return Err(Error::Config {
            path: "model.system.kind".into(),
            message: "spectrum needs the dimer".into(),
        });
    };
    let (maps, _) = learn_maps(&setup, 3, t.learn_steps, run.threads)?;
    let mut set = tensors_from_maps(&maps, t.threshold);
    if let Some(k) = t.k_override {
        set = set.with_cutoff(k)?;
    }
    let steps = (s.tau / maps.dt).round() as usize;
    let c = dipole_correlation(&dimer, &maps, &set, set.cutoff.k, steps)?;
    let spec = absorption_spectrum(&c.times(), &c.values, s.window, s.omega_max)?;
    if run.cfg.writes(OutputFormat::Csv) {
        let p = run.path("correlation.csv");
        write_correlation_csv(&p, &c)?;
        let p = run.path("spectrum.csv");
        spec.write_csv(p)?;
    }
    run.write_json("spectrum.json", &spec)?;
    run.note("window", spec.window);
    run.note("peaks", spec.peaks(0.05));
    Ok(())
}

fn write_correlation_csv(path: &Path, c: &models::Correlation) -> chaintensor::Result<()> {
    let mut body = String::from("# units: time in 1/eps\nt,re,im\n");
    for (t, v) in c.times().iter().zip(&c.values) {
        body.push_str(&format!("{t},{:e},{:e}\n", v.re, v.im));
    }
    std::fs::write(path, body)?;
    Ok(())
}

fn steady(run: &mut Run) -> chaintensor::Result<()> {
    let ss = run.cfg.steady_state()?.clone();
    let t = run.cfg.ttm()?.clone();
    let mut rows = Vec::with_capacity(ss.betas.len());
    let mut times = Vec::with_capacity(ss.betas.len());
    for &beta in &ss.betas {
        let (model, setup) = setup_for(run, Some(beta))?;
        let (maps, _) = learn_maps(&setup, model.dim(), t.learn_steps, run.threads)?;
        let set = tensors_from_maps(&maps, t.threshold);
        let k = match t.k_override {
            Some(k) => k,
            None if set.cutoff.decayed => set.cutoff.k,
            None => {
                let k = ttm::norm_minimum_cutoff(&set.norms);
                warn!("tensors at beta = {beta} have not decayed; truncating at the norm minimum, K = {k}");
                k
            }
        };
        let history = map_history(&maps, &model.default_initial_state())?;
        let fixed = steady_state(&set, k, &history, ss.tolerance, ss.window, ss.max_steps)?;
        info!(
            "beta = {beta}: excited population {:.6} at t = {:.2}",
            fixed.rho[(0, 0)].re,
            fixed.time
        );
        rows.push((beta, fixed.rho[(0, 0)].re));
        times.push(fixed.time);
    }
    if run.cfg.writes(OutputFormat::Csv) {
        let p = run.path("steady_state.csv");
        write_steady_state_csv(p, &rows)?;
    }
    run.note("hitting_times", times);
    Ok(())
}

fn bench(run: &mut Run) -> chaintensor::Result<()> {
    let b = run.cfg.bench()?.clone();
    let threshold = run
        .cfg
        .ttm
        .as_ref()
        .map(|t| t.threshold)
        .unwrap_or(ttm::DEFAULT_DECAY_THRESHOLD);
    let plan = BenchPlan {
        t_bath: b.t_bath.clone(),
        sites_per_time: b.sites_per_time,
        propagation_steps: b.propagation_steps.clone(),
        repetitions: b.repetitions,
        decay_threshold: threshold,
    };
    let mut records = scaling::measure(
        &run.cfg.model(),
        &run.cfg.density()?,
        &run.cfg.evolution(),
        &plan,
    )?;
    let fit = scaling::fit_scaling(&records)?;
    scaling::annotate(&mut records, &fit);
    if fit.linear_contamination {
        warn!("learning wall time carries a sizeable linear term");
    }
    if run.cfg.writes(OutputFormat::Csv) {
        let p = run.path("bench.csv");
        scaling::write_bench_csv(p, &records)?;
    }
    run.write_json(
        "bench.json",
        &serde_json::json!({ "records": records, "fit": fit }),
    )?;
    run.note("c", fit.c);
    run.note("r_squared", fit.r_squared);
    Ok(())
}
