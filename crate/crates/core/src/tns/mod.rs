//! Time-evolving block decimation of a system attached to oscillator chains.
//!
//! Mixed states are purified: every site carries an ancilla fused into its
//! local index. Sites whose initial state is pure keep a trivial ancilla.

pub mod lattice;
pub mod mps;
mod probe;
mod thermal;

use std::sync::Mutex;

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::linalg::{
    self, eigh, hermitian_function, hermitize, identity, unitary_propagator, CMat, C64,
};
use crate::spectral::ChainParams;
use crate::trajectory::{RunSummary, Trajectory};

pub use lattice::{BondKind, Lattice, SiteKind};
pub use mps::{Mps, SiteTensor, Sweep, TruncationPolicy};
pub use probe::{recurrence_probe, RecurrenceEstimate, DEFAULT_RECURRENCE_THRESHOLD};
pub use thermal::thermal_chain;

/// Top-level population above which Fock truncation is reported as leaking.
pub const LEAKAGE_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_SV_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ThermalSettings {
    /// Initial imaginary-time step; halved until occupations settle.
    pub dtau: f64,
    /// Largest accepted error estimate of any site occupation, taken as a
    /// third of the change between two halvings.
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for ThermalSettings {
    fn default() -> Self {
        Self {
            dtau: 0.05,
            tolerance: 1e-5,
            max_halvings: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionConfig {
    /// Sites per chain (`N`).
    pub chain_length: usize,
    /// Fock truncation per oscillator (`d`).
    pub local_dim: usize,
    /// Maximum bond size (`χ`).
    pub max_bond: usize,
    pub dt: f64,
    /// Relative singular-value floor (`e₀`).
    pub sv_floor: f64,
    pub trotter_order: usize,
    /// Inverse temperature of the chains; `None` is the vacuum.
    pub beta: Option<f64>,
    pub thermal: ThermalSettings,
    /// Evolve thermal ancillas backwards under the bare chain Hamiltonian.
    /// Leaves every physical observable unchanged and slows entanglement growth.
    pub ancilla_back_evolution: bool,
    /// Largest two-site block (complex entries) a single update may form.
    pub max_block_elems: usize,
    /// Allow the sketched SVD when `χ` is small against the two-site block.
    pub sketched_svd: bool,
}

impl EvolutionConfig {
    pub fn new(chain_length: usize, local_dim: usize, max_bond: usize, dt: f64) -> Self {
        Self {
            chain_length,
            local_dim,
            max_bond,
            dt,
            sv_floor: DEFAULT_SV_FLOOR,
            trotter_order: 2,
            beta: None,
            thermal: ThermalSettings::default(),
            ancilla_back_evolution: true,
            max_block_elems: 1 << 25,
            sketched_svd: true,
        }
    }

    pub fn with_beta(mut self, beta: Option<f64>) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.chain_length < 1 {
            return bad("chain length must be at least 1");
        }
        if self.local_dim < 2 {
            return bad("local oscillator dimension must be at least 2");
        }
        if self.max_bond < 1 {
            return bad("bond size must be at least 1");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("time step must be positive");
        }
        if !(0.0..1.0).contains(&self.sv_floor) {
            return bad("singular-value floor must lie in [0, 1)");
        }
        if self.trotter_order != 2 {
            return bad("only the second-order splitting is implemented");
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return bad("inverse temperature must be non-negative");
            }
        }
        if !(self.thermal.dtau > 0.0) || !(self.thermal.tolerance > 0.0) {
            return bad("imaginary-time settings must be positive");
        }
        Ok(())
    }

    pub(crate) fn policy(&self) -> TruncationPolicy {
        TruncationPolicy {
            max_bond: self.max_bond,
            floor: self.sv_floor,
            max_block_elems: self.max_block_elems,
            sketch: self.sketched_svd,
        }
    }
}

/// Truncation bookkeeping of one time step.
#[derive(Debug, Clone, Default)]
pub struct TruncationReport {
    /// Discarded weight summed over the updates of each bond.
    pub bond_discarded: Vec<f64>,
    pub discarded_weight: f64,
    pub max_bond: usize,
    pub clipped: usize,
}

impl TruncationReport {
    fn new(bonds: usize) -> Self {
        Self {
            bond_discarded: vec![0.0; bonds],
            ..Default::default()
        }
    }

    fn record(&mut self, b: usize, t: mps::SvdTruncation) {
        self.bond_discarded[b] += t.discarded_weight;
        self.discarded_weight += t.discarded_weight;
        self.max_bond = self.max_bond.max(t.kept);
        self.clipped += t.clipped_by_floor;
    }
}

#[derive(Debug, Clone)]
struct BondGate {
    phys: CMat,
    anc: Option<CMat>,
}

/// Precomputed Trotter gates for one lattice and one ancilla layout.
#[derive(Debug, Clone)]
pub struct Propagator {
    half: Vec<BondGate>,
    full: Vec<BondGate>,
    single: Option<CMat>,
    policy: TruncationPolicy,
}

enum Flow {
    Real,
    Imaginary,
}

impl Propagator {
    /// Real-time gates `e^{−ihδt/2}`, `e^{−ihδt}`; ancillas receive the
    /// complex conjugate of the bare-chain gates when back-evolution is on.
    pub fn real_time(lattice: &Lattice, anc: &[usize], cfg: &EvolutionConfig) -> Result<Self> {
        Self::build(
            lattice,
            anc,
            cfg.dt,
            cfg.ancilla_back_evolution,
            cfg.policy(),
            Flow::Real,
        )
    }

    /// Imaginary-time gates `e^{−hτ/2}`, `e^{−hτ}` acting on physical indices.
    pub fn imaginary_time(
        lattice: &Lattice,
        anc: &[usize],
        dtau: f64,
        policy: TruncationPolicy,
    ) -> Result<Self> {
        Self::build(lattice, anc, dtau, false, policy, Flow::Imaginary)
    }

    fn build(
        lattice: &Lattice,
        anc: &[usize],
        dt: f64,
        back: bool,
        policy: TruncationPolicy,
        flow: Flow,
    ) -> Result<Self> {
        let phys = lattice.phys_dims();
        let exp = |h: &CMat, t: f64| -> Result<CMat> {
            match flow {
                Flow::Real => unitary_propagator(h.as_ref(), t),
                Flow::Imaginary => {
                    hermitian_function(h.as_ref(), |x| C64::new((-x * t).exp(), 0.0))
                }
            }
        };
        let conj = |m: CMat| CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].conj());
        let mut half = Vec::new();
        let mut full = Vec::new();
        for b in 0..lattice.bonds.len() {
            let h = lattice.bond_hamiltonian(b, (phys[b], phys[b + 1]), false);
            let anc_h = if back && (anc[b] > 1 || anc[b + 1] > 1) {
                Some(lattice.bond_hamiltonian(b, (anc[b], anc[b + 1]), true))
            } else {
                None
            };
            half.push(BondGate {
                phys: exp(&h, 0.5 * dt)?,
                anc: anc_h
                    .as_ref()
                    .map(|a| exp(a, 0.5 * dt).map(conj))
                    .transpose()?,
            });
            full.push(BondGate {
                phys: exp(&h, dt)?,
                anc: anc_h.as_ref().map(|a| exp(a, dt).map(conj)).transpose()?,
            });
        }
        let single = if lattice.len() == 1 {
            Some(exp(&lattice.site_hamiltonian(0, phys[0], false), dt)?)
        } else {
            None
        };
        Ok(Self {
            half,
            full,
            single,
            policy,
        })
    }

    /// One symmetric step: even bonds for half the step, odd bonds for the
    /// full step, even bonds again for half.
    pub fn step(&self, mps: &mut Mps) -> Result<TruncationReport> {
        let nb = self.full.len();
        let mut report = TruncationReport::new(nb);
        if let Some(u) = &self.single {
            let local = lift(u, mps.anc[0]);
            mps.apply_one_site(0, &local);
            report.max_bond = 1;
            return Ok(report);
        }
        let even: Vec<usize> = (0..nb).step_by(2).collect();
        let odd: Vec<usize> = (1..nb).step_by(2).collect();
        self.layer(mps, &even, &self.half, &mut report)?;
        self.layer(mps, &odd, &self.full, &mut report)?;
        self.layer(mps, &even, &self.half, &mut report)?;
        Ok(report)
    }

    fn layer(
        &self,
        mps: &mut Mps,
        bonds: &[usize],
        gates: &[BondGate],
        report: &mut TruncationReport,
    ) -> Result<()> {
        if bonds.is_empty() {
            return Ok(());
        }
        // Gates within a layer commute; sweep away from the nearer end.
        let left_to_right = mps.center <= mps.len() / 2;
        let order: Vec<usize> = if left_to_right {
            bonds.to_vec()
        } else {
            bonds.iter().rev().copied().collect()
        };
        for b in order {
            let g = &gates[b];
            let sweep = if left_to_right {
                mps.move_center(b.max(mps.center.min(b + 1)));
                Sweep::Right
            } else {
                mps.move_center((b + 1).min(mps.center.max(b)));
                Sweep::Left
            };
            let t = mps.apply_two_site(b, &g.phys, g.anc.as_ref(), sweep, &self.policy)?;
            report.record(b, t);
        }
        Ok(())
    }
}

/// Embeds a physical operator into a fused `phys × anc` local space.
fn lift(u: &CMat, a: usize) -> CMat {
    linalg::kron(u.as_ref(), identity(a).as_ref())
}

/// Purified thermal (or vacuum) chains, shared by all runs that start from
/// the same environment.
#[derive(Debug, Clone)]
pub struct Environment {
    pub chains: Vec<Mps>,
}

impl Environment {
    pub fn prepare(cfg: &EvolutionConfig, chains: &[ChainParams]) -> Result<Self> {
        cfg.validate()?;
        let mut out = Vec::with_capacity(chains.len());
        for (k, c) in chains.iter().enumerate() {
            if c.len() != cfg.chain_length {
                return Err(Error::Validation(format!(
                    "chain {k} has {} sites, configuration expects {}",
                    c.len(),
                    cfg.chain_length
                )));
            }
            out.push(thermal_chain(c, cfg)?);
        }
        Ok(Self { chains: out })
    }
}

/// Purification of system plus chains, with its running diagnostics.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub mps: Mps,
    pub system_site: usize,
    pub steps: usize,
    /// Discarded weight summed over each completed step.
    pub discarded_per_step: Vec<f64>,
    pub max_bond_reached: usize,
    pub clipped: usize,
    /// Σ |ln ‖ψ‖| over the per-step renormalizations.
    pub log_norm_correction: f64,
    pub max_hermitization_correction: f64,
}

/// Builds the separable initial state `ρ_sys ⊗ ρ_chains`.
pub fn initial_state(
    cfg: &EvolutionConfig,
    rho_sys: &CMat,
    chains: &[ChainParams],
) -> Result<ChainState> {
    let env = Environment::prepare(cfg, chains)?;
    initial_state_in(&env, rho_sys)
}

pub fn initial_state_in(env: &Environment, rho_sys: &CMat) -> Result<ChainState> {
    let sys = Mps::product(&[purify(rho_sys)?]);
    let (parts, system_site) = match env.chains.as_slice() {
        [] => (vec![sys], 0),
        [right] => (vec![sys, right.clone()], 0),
        [left, right] => {
            let mirrored = left.mirrored();
            let n = mirrored.len();
            (vec![mirrored, sys, right.clone()], n)
        }
        _ => {
            return Err(Error::Validation(
                "at most two chains can be attached".into(),
            ))
        }
    };
    let mut mps = Mps::concat(parts);
    mps.canonicalize();
    mps.normalize();
    Ok(ChainState {
        mps,
        system_site,
        steps: 0,
        discarded_per_step: Vec::new(),
        max_bond_reached: 1,
        clipped: 0,
        log_norm_correction: 0.0,
        max_hermitization_correction: 0.0,
    })
}

/// `phys × anc` coefficient matrix `M` with `M M† = ρ`; pure states keep a
/// one-dimensional ancilla.
fn purify(rho: &CMat) -> Result<CMat> {
    linalg::validate_density(rho.as_ref(), 1e-8)?;
    let n = rho.nrows();
    let (vals, vecs) = eigh(hermitize(rho.as_ref()).as_ref())?;
    let top = vals[n - 1];
    if top > 1.0 - 1e-12 {
        return Ok(CMat::from_fn(n, 1, |i, _| vecs[(i, n - 1)]));
    }
    Ok(CMat::from_fn(n, n, |i, k| {
        vecs[(i, k)] * vals[k].max(0.0).sqrt()
    }))
}

impl ChainState {
    pub fn step(&mut self, prop: &Propagator) -> Result<TruncationReport> {
        let report = prop.step(&mut self.mps)?;
        let norm = self.mps.normalize();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Numerical(format!(
                "state norm became {norm} at step {}",
                self.steps + 1
            )));
        }
        self.log_norm_correction += norm.ln().abs();
        self.steps += 1;
        self.discarded_per_step.push(report.discarded_weight);
        self.max_bond_reached = self.max_bond_reached.max(self.mps.max_bond());
        self.clipped += report.clipped;
        Ok(report)
    }

    /// Reduced density matrix of the system, Hermitized.
    pub fn reduced_system(&mut self) -> CMat {
        let rho = self.mps.site_density(self.system_site);
        let h = hermitize(rho.as_ref());
        let corr = linalg::fro((&rho - &h).as_ref());
        self.max_hermitization_correction = self.max_hermitization_correction.max(corr);
        h
    }

    /// Largest population of the highest Fock level over all oscillators.
    pub fn max_top_level_population(&mut self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.mps.len() {
            if i == self.system_site {
                continue;
            }
            let rho = self.mps.site_density(i);
            let top = rho.nrows() - 1;
            worst = worst.max(rho[(top, top)].re);
        }
        worst
    }

    pub fn summary(&mut self) -> RunSummary {
        RunSummary {
            steps: self.steps,
            total_discarded_weight: self.discarded_per_step.iter().sum(),
            max_bond_reached: self.max_bond_reached,
            clipped_singular_values: self.clipped,
            log_norm_correction: self.log_norm_correction,
            max_hermitization_correction: self.max_hermitization_correction,
            max_top_level_population: self.max_top_level_population(),
        }
    }
}

/// A system Hamiltonian with its chains, ready to run from any system state.
#[derive(Debug, Clone)]
pub struct Setup {
    pub cfg: EvolutionConfig,
    pub lattice: Lattice,
    pub env: Environment,
}

impl Setup {
    pub fn new(
        cfg: &EvolutionConfig,
        h_sys: &CMat,
        couplings: &[(CMat, ChainParams)],
    ) -> Result<Self> {
        cfg.validate()?;
        let lattice = Lattice::new(h_sys, couplings, cfg.local_dim)?;
        let chains: Vec<ChainParams> = couplings.iter().map(|(_, c)| c.clone()).collect();
        let env = Environment::prepare(cfg, &chains)?;
        Ok(Self {
            cfg: cfg.clone(),
            lattice,
            env,
        })
    }

    /// Runs `steps` steps from `rho_sys` and returns the reduced trajectory.
    pub fn evolve(&self, rho_sys: &CMat, steps: usize) -> Result<(Trajectory, RunSummary)> {
        let mut state = initial_state_in(&self.env, rho_sys)?;
        let prop = Propagator::real_time(&self.lattice, &state.mps.anc, &self.cfg)?;
        let mut traj = Trajectory::new(self.cfg.dt, state.reduced_system());
        for k in 0..steps {
            state.step(&prop)?;
            let rho = state.reduced_system();
            let tr = linalg::trace(rho.as_ref()).re;
            if (tr - 1.0).abs() > 1e-8 {
                warn!("reduced trace drifted to {tr} at step {}", k + 1);
            }
            traj.push(rho);
        }
        let summary = state.summary();
        if summary.max_top_level_population > LEAKAGE_THRESHOLD {
            warn!(
                "top Fock level holds population {:.3e}; consider a larger local dimension",
                summary.max_top_level_population
            );
        }
        debug!(
            "evolved {steps} steps: max bond {}, discarded {:.3e}",
            summary.max_bond_reached, summary.total_discarded_weight
        );
        Ok((traj, summary))
    }

    /// Evolves several initial system states on up to `threads` workers.
    /// Results are returned in input order.
    pub fn evolve_many(
        &self,
        preps: &[CMat],
        steps: usize,
        threads: usize,
    ) -> Result<Vec<(Trajectory, RunSummary)>> {
        let threads = threads.max(1).min(preps.len().max(1));
        if threads == 1 {
            return preps.iter().map(|p| self.evolve(p, steps)).collect();
        }
        let slots: Vec<Mutex<Option<Result<(Trajectory, RunSummary)>>>> =
            preps.iter().map(|_| Mutex::new(None)).collect();
        let next = Mutex::new(0usize);
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let i = {
                        let mut n = next.lock().unwrap();
                        let i = *n;
                        *n += 1;
                        i
                    };
                    if i >= preps.len() {
                        break;
                    }
                    let r = self.evolve(&preps[i], steps);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
            .collect()
    }
}

/// Convenience wrapper: prepares the environment and runs one trajectory.
pub fn evolve(
    cfg: &EvolutionConfig,
    h_sys: &CMat,
    couplings: &[(CMat, ChainParams)],
    rho_sys: &CMat,
    steps: usize,
) -> Result<(Trajectory, RunSummary)> {
    Setup::new(cfg, h_sys, couplings)?.evolve(rho_sys, steps)
}
