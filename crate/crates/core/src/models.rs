//! Spin-boson monomer and excitonic dimer: Hamiltonians, the learn-then-
//! propagate pipeline, steady states and linear absorption spectra.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, from_real, trace_distance, CMat, C64, ZERO};
use crate::spectral::{chain_hamiltonian, recurrence_coefficients, ChainParams, SpectralDensity};
use crate::tns::{EvolutionConfig, Setup};
use crate::trajectory::{RunSummary, Trajectory};
use crate::ttm::{
    self, evolve_operator, map_history, maps_from_trajectories, preparation_states,
    tensors_from_maps, DynamicalMapSet, TransferTensorSet, TtmStream,
};

/// `|C(τ)|/|C(0)|` below which a correlation counts as decayed.
pub const CORRELATION_DECAY_THRESHOLD: f64 = 1e-3;

/// Two-level system with `H = ½εσ_z + ½Δσ_x`. Index 0 is `|e⟩`, coupled to
/// the bath through `A = |e⟩⟨e|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinBosonParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl SpinBosonParams {
    pub fn hamiltonian(&self) -> CMat {
        let (e, d) = (self.epsilon, self.delta);
        from_real(2, 2, |i, j| match (i, j) {
            (0, 0) => 0.5 * e,
            (1, 1) => -0.5 * e,
            _ => 0.5 * d,
        })
    }

    pub fn coupling(&self) -> CMat {
        from_real(2, 2, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 })
    }

    /// Closed-system oscillation frequency `√(ε² + Δ²)`.
    pub fn rabi_frequency(&self) -> f64 {
        self.epsilon.hypot(self.delta)
    }
}

/// Dimer in its ground and single-excitation states, `|g⟩, |e₁⟩, |e₂⟩` at
/// indices 0, 1, 2. Site `i` couples to its own bath through `|eᵢ⟩⟨eᵢ|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimerParams {
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub exchange: f64,
    #[serde(default = "unit")]
    pub mu1: f64,
    #[serde(default = "unit")]
    pub mu2: f64,
}

fn unit() -> f64 {
    1.0
}

impl DimerParams {
    pub fn new(epsilon1: f64, epsilon2: f64, exchange: f64) -> Self {
        Self {
            epsilon1,
            epsilon2,
            exchange,
            mu1: 1.0,
            mu2: 1.0,
        }
    }

    pub fn hamiltonian(&self) -> CMat {
        from_real(3, 3, |i, j| match (i, j) {
            (1, 1) => self.epsilon1,
            (2, 2) => self.epsilon2,
            (1, 2) | (2, 1) => self.exchange,
            _ => 0.0,
        })
    }

    pub fn site_projector(&self, site: usize) -> CMat {
        from_real(3, 3, |i, j| if i == j && i == site + 1 { 1.0 } else { 0.0 })
    }

    pub fn dipole(&self) -> CMat {
        from_real(3, 3, |i, j| match (i, j) {
            (0, 1) | (1, 0) => self.mu1,
            (0, 2) | (2, 0) => self.mu2,
            _ => 0.0,
        })
    }

    /// Eigenvalues of the single-excitation block, ascending.
    pub fn exciton_energies(&self) -> [f64; 2] {
        let mean = 0.5 * (self.epsilon1 + self.epsilon2);
        let half = 0.5 * (self.epsilon1 - self.epsilon2);
        let r = half.hypot(self.exchange);
        [mean - r, mean + r]
    }

    pub fn ground(&self) -> CMat {
        from_real(3, 3, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    SpinBoson(SpinBosonParams),
    Dimer(DimerParams),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::SpinBoson(_) => 2,
            Model::Dimer(_) => 3,
        }
    }

    pub fn hamiltonian(&self) -> CMat {
        match self {
            Model::SpinBoson(p) => p.hamiltonian(),
            Model::Dimer(p) => p.hamiltonian(),
        }
    }

    /// System coupling operators paired with their chains. The dimer's two
    /// sites see independent copies of `chain`.
    pub fn couplings(&self, chain: &ChainParams) -> Vec<(CMat, ChainParams)> {
        match self {
            Model::SpinBoson(p) => vec![(p.coupling(), chain.clone())],
            Model::Dimer(p) => vec![
                (p.site_projector(0), chain.clone()),
                (p.site_projector(1), chain.clone()),
            ],
        }
    }

    /// `|e⟩⟨e|` for the monomer, `|g⟩⟨g|` for the dimer.
    pub fn default_initial_state(&self) -> CMat {
        let d = self.dim();
        from_real(d, d, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 })
    }
}

/// Chain of length `cfg.chain_length` for `density`.
pub fn chain_for(density: &SpectralDensity, cfg: &EvolutionConfig) -> Result<ChainParams> {
    chain_hamiltonian(&recurrence_coefficients(density, cfg.chain_length)?)
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub learn_steps: usize,
    /// Length of the returned trajectory in steps; at least `learn_steps`.
    pub total_steps: usize,
    pub decay_threshold: f64,
    pub threads: usize,
    pub initial_state: Option<CMat>,
}

impl PipelineOptions {
    pub fn new(learn_steps: usize, total_steps: usize) -> Self {
        Self {
            learn_steps,
            total_steps,
            decay_threshold: ttm::DEFAULT_DECAY_THRESHOLD,
            threads: 1,
            initial_state: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    /// Learned maps up to `learn_steps`, transfer tensors beyond.
    pub trajectory: Trajectory,
    pub maps: DynamicalMapSet,
    pub tensors: TransferTensorSet,
    pub summaries: Vec<RunSummary>,
    pub learning_time: Duration,
    pub propagation_time: Duration,
}

/// Learns maps on `setup` from the `d²` physical preparations.
pub fn learn_maps(
    setup: &Setup,
    d: usize,
    learn_steps: usize,
    threads: usize,
) -> Result<(DynamicalMapSet, Vec<RunSummary>)> {
    if learn_steps == 0 {
        return Err(Error::Validation("learning needs at least one step".into()));
    }
    let runs = setup.evolve_many(&preparation_states(d), learn_steps, threads)?;
    let (trajs, summaries): (Vec<Trajectory>, Vec<RunSummary>) = runs.into_iter().unzip();
    Ok((maps_from_trajectories(&trajs)?, summaries))
}

/// Chain mapping, basis trajectories, maps, tensors and the continued
/// trajectory of the initial state.
pub fn run_pipeline(
    model: &Model,
    density: &SpectralDensity,
    cfg: &EvolutionConfig,
    opts: &PipelineOptions,
) -> Result<PipelineRun> {
    let chain = chain_for(density, cfg)?;
    let setup = Setup::new(cfg, &model.hamiltonian(), &model.couplings(&chain))?;
    run_pipeline_on(&setup, model.dim(), opts, &model.default_initial_state())
}

/// The pipeline on an already prepared environment.
pub fn run_pipeline_on(
    setup: &Setup,
    d: usize,
    opts: &PipelineOptions,
    default_rho: &CMat,
) -> Result<PipelineRun> {
    if opts.total_steps < opts.learn_steps {
        return Err(Error::Validation(
            "total_steps must be at least learn_steps".into(),
        ));
    }
    let t0 = Instant::now();
    let (maps, summaries) = learn_maps(setup, d, opts.learn_steps, opts.threads)?;
    let tensors = tensors_from_maps(&maps, opts.decay_threshold);
    let learning_time = t0.elapsed();
    if !tensors.cutoff.decayed {
        warn!(
            "transfer tensors have not decayed below {:.1e} within {} learning steps; propagating with all of them",
            opts.decay_threshold, opts.learn_steps
        );
    }
    let rho0 = opts
        .initial_state
        .clone()
        .unwrap_or_else(|| default_rho.clone());
    let t1 = Instant::now();
    let history = map_history(&maps, &rho0)?;
    let trajectory = ttm::propagate(
        &tensors,
        tensors.cutoff.k,
        &history,
        opts.total_steps - opts.learn_steps,
    )?;
    let propagation_time = t1.elapsed();
    Ok(PipelineRun {
        trajectory,
        maps,
        tensors,
        summaries,
        learning_time,
        propagation_time,
    })
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: CMat,
    pub time: f64,
    pub steps: usize,
}

/// Iterates the transfer tensors from `history` until the one-step trace
/// norm change stays below `tolerance` for `window` consecutive steps.
pub fn steady_state(
    set: &TransferTensorSet,
    k: usize,
    history: &[CMat],
    tolerance: f64,
    window: usize,
    max_steps: usize,
) -> Result<SteadyState> {
    if !(tolerance > 0.0) || window == 0 {
        return Err(Error::Validation(
            "steady state needs a positive tolerance and window".into(),
        ));
    }
    let mut stream = TtmStream::new(set, k, history)?;
    let mut prev = history
        .last()
        .cloned()
        .ok_or_else(|| Error::Validation("empty history".into()))?;
    let start = history.len() - 1;
    let mut quiet = 0;
    for n in 1..=max_steps {
        let rho = stream.advance()?;
        let change = 2.0 * trace_distance(rho.as_ref(), prev.as_ref());
        if !change.is_finite() {
            return Err(Error::Numerical("steady-state iteration diverged".into()));
        }
        quiet = if change < tolerance { quiet + 1 } else { 0 };
        prev = rho;
        if quiet >= window {
            let steps = start + n;
            return Ok(SteadyState {
                rho: prev,
                time: steps as f64 * set.dt,
                steps,
            });
        }
    }
    Err(Error::BudgetExceeded {
        steps: max_steps,
        last: Some(Box::new(prev)),
    })
}

pub fn write_steady_state_csv(path: impl AsRef<Path>, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["beta", "pop_excited"])?;
    for (b, p) in rows {
        w.write_record([b.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Uniformly sampled complex time series.
#[derive(Debug, Clone)]
pub struct Correlation {
    pub dt: f64,
    pub values: Vec<C64>,
}

impl Correlation {
    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| k as f64 * self.dt).collect()
    }

    /// `|C(τ)|/|C(0)|`.
    pub fn tail_ratio(&self) -> f64 {
        match (self.values.first(), self.values.last()) {
            (Some(a), Some(b)) if a.norm() > 0.0 => b.norm() / a.norm(),
            _ => 0.0,
        }
    }

    pub fn decayed(&self) -> bool {
        self.tail_ratio() < CORRELATION_DECAY_THRESHOLD
    }
}

/// `C(t_n) = tr[μ Φ_n(μ|g⟩⟨g|)]` for `n = 0..=steps`.
pub fn dipole_correlation(
    dimer: &DimerParams,
    maps: &DynamicalMapSet,
    set: &TransferTensorSet,
    k: usize,
    steps: usize,
) -> Result<Correlation> {
    let mu = dimer.dipole();
    let x = &mu * &dimer.ground();
    let series = evolve_operator(maps, set, k, &x, steps)?;
    let values = series
        .iter()
        .map(|s| linalg::trace((&mu * s).as_ref()))
        .collect();
    let c = Correlation {
        dt: maps.dt,
        values,
    };
    if !c.decayed() {
        warn!(
            "dipole correlation has not decayed by t = {:.3} (|C(t)|/|C(0)| = {:.3e}); the spectrum will be windowed",
            steps as f64 * c.dt,
            c.tail_ratio()
        );
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Rectangular,
    /// Rectangular when the series has decayed, Hann otherwise.
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub absorption: Vec<f64>,
    pub window: Window,
    pub tau: f64,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.tau
    }

    /// Interior local maxima with amplitude above `min_fraction` of the
    /// largest, as `(omega, amplitude)`.
    pub fn peaks(&self, min_fraction: f64) -> Vec<(f64, f64)> {
        let a = &self.absorption;
        let top = a.iter().cloned().fold(f64::MIN, f64::max);
        (1..a.len().saturating_sub(1))
            .filter(|&i| a[i] > a[i - 1] && a[i] >= a[i + 1] && a[i] > min_fraction * top)
            .map(|i| (self.omega[i], a[i]))
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["omega", "absorption"])?;
        for (o, a) in self.omega.iter().zip(&self.absorption) {
            w.write_record([o.to_string(), a.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, w: &mut impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut *w, self)?;
        Ok(())
    }
}

/// `Re Σ_n C(t_n) w(t_n) e^{iωt_n} δt` on `ω_k = 2πk/τ`, `ω_k ≤ omega_max`,
/// with half weight on `t = 0`. Hann is `cos²(πt/2τ)`.
pub fn absorption_spectrum(
    times: &[f64],
    values: &[C64],
    window: Window,
    omega_max: f64,
) -> Result<Spectrum> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::Validation(
            "need at least two samples with matching times".into(),
        ));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Validation("sample times must increase".into()));
    }
    for (n, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::Validation(format!(
                "non-uniform sampling at index {}",
                n + 1
            )));
        }
    }
    if !(omega_max > 0.0) {
        return Err(Error::Validation("omega_max must be positive".into()));
    }
    let tau = times[times.len() - 1] - times[0];
    let series = Correlation {
        dt,
        values: values.to_vec(),
    };
    let window = match window {
        Window::Auto if series.decayed() => Window::Rectangular,
        Window::Auto => Window::Hann,
        w => w,
    };
    let weights: Vec<f64> = (0..values.len())
        .map(|n| {
            let t = n as f64 * dt;
            let w = match window {
                Window::Hann => (std::f64::consts::PI * t / (2.0 * tau)).cos().powi(2),
                _ => 1.0,
            };
            if n == 0 {
                0.5 * w
            } else {
                w
            }
        })
        .collect();
    let step = 2.0 * std::f64::consts::PI / tau;
    let count = (omega_max / step).floor() as usize + 1;
    let mut omega = Vec::with_capacity(count);
    let mut absorption = Vec::with_capacity(count);
    for k in 0..count {
        let w = k as f64 * step;
        let mut acc = ZERO;
        for (n, (c, wt)) in values.iter().zip(&weights).enumerate() {
            let t = n as f64 * dt;
            acc += c * C64::from_polar(*wt, w * t);
        }
        omega.push(w);
        absorption.push(acc.re * dt);
    }
    Ok(Spectrum {
        omega,
        absorption,
        window,
        tau,
    })
}

/// `C(t)` of the bath-free dimer evaluated from its eigenbasis.
pub fn closed_dimer_correlation(dimer: &DimerParams, dt: f64, steps: usize) -> Result<Correlation> {
    let h = dimer.hamiltonian();
    let mu = dimer.dipole();
    let g = dimer.ground();
    let x = &mu * &g;
    let values = (0..=steps)
        .map(|n| {
            let t = n as f64 * dt;
            let u = linalg::unitary_propagator(h.as_ref(), t)?;
            let ev = &(&u * &x) * &linalg::adjoint(u.as_ref());
            Ok(linalg::trace((&mu * &ev).as_ref()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Correlation { dt, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigh;
    use crate::oracle::{semigroup_trajectories, LindbladGenerator};

    fn decoupled_dimer_maps(dimer: &DimerParams, dt: f64, m: usize) -> DynamicalMapSet {
        let gen = LindbladGenerator::new(dimer.hamiltonian());
        let trajs = semigroup_trajectories(&gen, dt, m, &preparation_states(3));
        maps_from_trajectories(&trajs).unwrap()
    }

    #[test]
    fn hamiltonians_are_hermitian_and_coupling_is_a_projector() {
        let sb = SpinBosonParams {
            epsilon: 1.0,
            delta: 0.6,
        };
        let a = sb.coupling();
        assert!(linalg::max_abs_diff((&a * &a).as_ref(), a.as_ref()) < 1e-15);
        let h = DimerParams::new(1.0, 2.0, 0.6).hamiltonian();
        assert!(linalg::max_abs_diff(h.as_ref(), linalg::adjoint(h.as_ref()).as_ref()) < 1e-15);
    }

    #[test]
    fn exciton_energies_match_the_eigensolver() {
        let dimer = DimerParams::new(1.0, 2.0, 0.6);
        let [lo, hi] = dimer.exciton_energies();
        assert!((lo - (1.5 - 0.61f64.sqrt())).abs() < 1e-14);
        assert!((hi - (1.5 + 0.61f64.sqrt())).abs() < 1e-14);
        let (vals, _) = eigh(dimer.hamiltonian().as_ref()).unwrap();
        assert!((vals[1] - lo).abs() < 1e-12 && (vals[2] - hi).abs() < 1e-12);
    }

    #[test]
    fn correlation_starts_at_the_dipole_norm() {
        let mut dimer = DimerParams::new(1.0, 2.0, 0.6);
        dimer.mu1 = 0.7;
        dimer.mu2 = 1.3;
        let maps = decoupled_dimer_maps(&dimer, 0.1, 5);
        let set = tensors_from_maps(&maps, 1e-7);
        let c = dipole_correlation(&dimer, &maps, &set, set.cutoff.k, 20).unwrap();
        assert!((c.values[0].re - (0.49 + 1.69)).abs() < 1e-14);
        assert!(c.values[0].im.abs() < 1e-14);
    }

    #[test]
    fn zero_dipole_gives_zero_correlation() {
        let mut dimer = DimerParams::new(1.0, 2.0, 0.6);
        dimer.mu1 = 0.0;
        dimer.mu2 = 0.0;
        let maps = decoupled_dimer_maps(&dimer, 0.1, 5);
        let set = tensors_from_maps(&maps, 1e-7);
        let c = dipole_correlation(&dimer, &maps, &set, set.cutoff.k, 50).unwrap();
        assert!(c.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn decoupled_correlation_matches_the_closed_dimer() {
        let dimer = DimerParams::new(1.0, 2.0, 0.6);
        let maps = decoupled_dimer_maps(&dimer, 0.1, 5);
        let set = tensors_from_maps(&maps, 1e-7);
        assert_eq!(set.cutoff.k, 1);
        let c = dipole_correlation(&dimer, &maps, &set, set.cutoff.k, 400).unwrap();
        let exact = closed_dimer_correlation(&dimer, 0.1, 400).unwrap();
        for (a, b) in c.values.iter().zip(&exact.values) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn decoupled_correlation_stays_in_the_coherence_sector() {
        let dimer = DimerParams::new(1.0, 2.0, 0.6);
        let maps = decoupled_dimer_maps(&dimer, 0.1, 5);
        let set = tensors_from_maps(&maps, 1e-7);
        let x = &dimer.dipole() * &dimer.ground();
        for s in evolve_operator(&maps, &set, 1, &x, 200).unwrap() {
            for i in 0..3 {
                for j in 0..3 {
                    let in_sector = j == 0 && i > 0;
                    if !in_sector {
                        assert!(s[(i, j)].norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn closed_correlation_is_hermitian_under_time_reversal() {
        let dimer = DimerParams::new(1.0, 2.0, 0.6);
        let h = dimer.hamiltonian();
        let mu = dimer.dipole();
        let x = &mu * &dimer.ground();
        let c = |t: f64| {
            let u = linalg::unitary_propagator(h.as_ref(), t).unwrap();
            linalg::trace((&mu * &(&(&u * &x) * &linalg::adjoint(u.as_ref()))).as_ref())
        };
        for t in [0.3, 1.7, 4.2] {
            assert!((c(-t) - c(t).conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn undamped_exponential_peaks_at_its_frequency() {
        let w0 = 1.3;
        let dt = 0.05;
        let n = 2001;
        let times: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let values: Vec<C64> = times
            .iter()
            .map(|t| C64::from_polar(1.0, -w0 * t))
            .collect();
        let s = absorption_spectrum(&times, &values, Window::Rectangular, 4.0).unwrap();
        let peaks = s.peaks(0.5);
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0].0 - w0).abs() <= s.bin_width());
        let wider =
            absorption_spectrum(&times[..501], &values[..501], Window::Rectangular, 4.0).unwrap();
        let fwhm = |s: &Spectrum| {
            let top = s.absorption.iter().cloned().fold(f64::MIN, f64::max);
            s.absorption.iter().filter(|&&a| a > 0.5 * top).count() as f64 * s.bin_width()
        };
        assert!(fwhm(&wider) > 2.0 * fwhm(&s));
    }

    #[test]
    fn decoupled_dimer_spectrum_peaks_at_the_exciton_energies() {
        let dimer = DimerParams::new(1.0, 2.0, 0.6);
        let c = closed_dimer_correlation(&dimer, 0.1, 1000).unwrap();
        let s = absorption_spectrum(&c.times(), &c.values, Window::Auto, 4.0).unwrap();
        assert_eq!(s.window, Window::Hann);
        let peaks = s.peaks(0.05);
        assert_eq!(peaks.len(), 2);
        for (p, e) in peaks.iter().zip(dimer.exciton_energies()) {
            assert!((p.0 - e).abs() <= s.bin_width());
        }
    }

    #[test]
    fn non_uniform_sampling_is_rejected() {
        let times = [0.0, 0.1, 0.25];
        let values = [C64::new(1.0, 0.0); 3];
        assert!(matches!(
            absorption_spectrum(&times, &values, Window::Hann, 1.0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn steady_state_of_a_semigroup_is_the_null_vector_of_the_one_step_map() {
        let h = SpinBosonParams {
            epsilon: 1.0,
            delta: 0.6,
        }
        .hamiltonian();
        let gen = LindbladGenerator::thermalizing(h, 1.0, 0.3).unwrap();
        let dt = 0.1;
        let trajs = semigroup_trajectories(&gen, dt, 3, &preparation_states(2));
        let maps = maps_from_trajectories(&trajs).unwrap();
        let set = tensors_from_maps(&maps, 1e-7);
        let rho0 = from_real(2, 2, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        let ss = steady_state(&set, 1, &[rho0], 1e-12, 5, 100_000).unwrap();
        let t1 = &set.tensors[0];
        let v = linalg::vec_of(ss.rho.as_ref());
        let image = linalg::mat_vec(t1.as_ref(), &v);
        let resid: f64 = image
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(resid < 1e-10);
        assert!(ss.time > 0.0);
    }

    #[test]
    fn thermalizing_oracle_relaxes_to_the_gibbs_state() {
        let h = SpinBosonParams {
            epsilon: 1.0,
            delta: 0.6,
        }
        .hamiltonian();
        let beta = 2.0;
        let gen = LindbladGenerator::thermalizing(h.clone(), beta, 0.2).unwrap();
        let dt = 0.05;
        let trajs = semigroup_trajectories(&gen, dt, 50, &preparation_states(2));
        let maps = maps_from_trajectories(&trajs).unwrap();
        let set = tensors_from_maps(&maps, 1e-7);
        let rho0 = from_real(2, 2, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        let ss = steady_state(
            &set,
            set.cutoff.k,
            &map_history(&maps, &rho0).unwrap(),
            1e-12,
            10,
            200_000,
        )
        .unwrap();
        let gibbs =
            linalg::hermitian_function(h.as_ref(), |e| C64::new((-beta * e).exp(), 0.0)).unwrap();
        let z = linalg::trace(gibbs.as_ref());
        let gibbs = linalg::scale(gibbs.as_ref(), z.inv());
        assert!(trace_distance(ss.rho.as_ref(), gibbs.as_ref()) < 1e-6);
    }

    #[test]
    fn budget_exhaustion_returns_the_last_state() {
        let h = SpinBosonParams {
            epsilon: 1.0,
            delta: 0.6,
        }
        .hamiltonian();
        let gen = LindbladGenerator::new(h);
        let trajs = semigroup_trajectories(&gen, 0.1, 2, &preparation_states(2));
        let set = tensors_from_maps(&maps_from_trajectories(&trajs).unwrap(), 1e-7);
        let rho0 = from_real(2, 2, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        match steady_state(&set, 1, &[rho0], 1e-9, 3, 200) {
            Err(Error::BudgetExceeded { steps, last }) => {
                assert_eq!(steps, 200);
                assert!(last.is_some());
            }
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn decoupled_pipeline_is_closed_unitary_evolution() {
        let sb = SpinBosonParams {
            epsilon: 1.0,
            delta: 0.6,
        };
        let model = Model::SpinBoson(sb);
        let cfg = EvolutionConfig::new(3, 2, 8, 0.05);
        let chain = ChainParams::decoupled(3);
        let setup = Setup::new(&cfg, &model.hamiltonian(), &model.couplings(&chain)).unwrap();
        let run = run_pipeline_on(
            &setup,
            2,
            &PipelineOptions::new(10, 400),
            &model.default_initial_state(),
        )
        .unwrap();
        assert_eq!(run.tensors.cutoff.k, 1);
        let rho0 = model.default_initial_state();
        for (k, rho) in run.trajectory.states.iter().enumerate() {
            let u = linalg::unitary_propagator(sb.hamiltonian().as_ref(), k as f64 * 0.05).unwrap();
            let exact = &(&u * &rho0) * &linalg::adjoint(u.as_ref());
            assert!(
                trace_distance(rho.as_ref(), exact.as_ref()) < 1e-9,
                "step {k}"
            );
        }
    }

    #[test]
    fn steady_state_csv_has_the_expected_header() {
        let dir = std::env::temp_dir().join(format!("ss-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("ss.csv");
        write_steady_state_csv(&p, &[(0.5, 0.4), (1.0, 0.3)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("beta,pop_excited\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
