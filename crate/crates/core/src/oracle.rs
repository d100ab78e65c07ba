//! Dense reference implementations for small instances.
//!
//! Nothing here shares code with the tensor-network engine beyond the
//! linear-algebra helpers: the chain Hamiltonian is assembled from Kronecker
//! products, states are full density matrices, and chain coefficients come
//! from a Lanczos tridiagonalization instead of the Stieltjes procedure.

use crate::error::{Error, Result};
use crate::linalg::{
    self, annihilation, eigh, expm, identity, kron_all, number_op, partial_trace_keep, scale, CMat,
    C64, I,
};
use crate::quadrature::GaussRule;
use crate::spectral::{ChainCoefficients, ChainParams, DensityKind, SpectralDensity};
use crate::trajectory::Trajectory;

pub const DEFAULT_DIMENSION_CAP: usize = 4096;

/// Full Hamiltonian of a system coupled to one or more truncated chains.
/// Subsystem order is `[system, chain₀ sites…, chain₁ sites…]`.
#[derive(Debug, Clone)]
pub struct DenseChainSystem {
    pub hamiltonian: CMat,
    pub dims: Vec<usize>,
}

impl DenseChainSystem {
    pub fn new(h_sys: &CMat, baths: &[(CMat, ChainParams)], d: usize, cap: usize) -> Result<Self> {
        let d_sys = h_sys.nrows();
        let mut dims = vec![d_sys];
        for (_, chain) in baths {
            dims.extend(std::iter::repeat(d).take(chain.len()));
        }
        let total: usize = dims
            .iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(x))
            .unwrap_or(usize::MAX);
        if total > cap {
            return Err(Error::Resource(format!(
                "dense dimension {total} exceeds the cap of {cap}"
            )));
        }
        let embed = |op: &CMat, site: usize| -> CMat {
            let factors: Vec<CMat> = dims
                .iter()
                .enumerate()
                .map(|(k, &dk)| if k == site { op.clone() } else { identity(dk) })
                .collect();
            kron_all(&factors)
        };
        let b = annihilation(d);
        let bd = linalg::adjoint(b.as_ref());
        let x = &b + &bd;
        let n_op = number_op(d);
        let mut h = embed(h_sys, 0);
        let mut offset = 1;
        for (a, chain) in baths {
            if chain.is_empty() {
                continue;
            }
            let a_full = embed(a, 0);
            let x0 = embed(&x, offset);
            h = &h + &scale((&a_full * &x0).as_ref(), C64::new(chain.coupling, 0.0));
            for (n, &w) in chain.frequencies.iter().enumerate() {
                h = &h + &scale(embed(&n_op, offset + n).as_ref(), C64::new(w, 0.0));
            }
            for (n, &t) in chain.hopping.iter().enumerate() {
                let bn = embed(&b, offset + n);
                let bm = embed(&b, offset + n + 1);
                let hop =
                    &(&linalg::adjoint(bn.as_ref()) * &bm) + &(&bn * &linalg::adjoint(bm.as_ref()));
                h = &h + &scale(hop.as_ref(), C64::new(t, 0.0));
            }
            offset += chain.len();
        }
        Ok(Self {
            hamiltonian: h,
            dims,
        })
    }

    pub fn dimension(&self) -> usize {
        self.hamiltonian.nrows()
    }
}

/// Gibbs state `e^{−βH}/Z` of the bare chains (no system), built with the
/// scaled-and-squared exponential. `beta = None` is the vacuum.
pub fn thermal_chain_state(baths: &[ChainParams], d: usize, beta: Option<f64>) -> Result<CMat> {
    let one = identity(1);
    let bare = DenseChainSystem::new(
        &crate::linalg::zeros(1, 1),
        &baths
            .iter()
            .map(|c| {
                (
                    one.clone(),
                    ChainParams {
                        coupling: 0.0,
                        ..c.clone()
                    },
                )
            })
            .collect::<Vec<_>>(),
        d,
        DEFAULT_DIMENSION_CAP,
    )?;
    let n = bare.dimension();
    match beta {
        None => {
            let mut v = crate::linalg::zeros(n, n);
            v[(0, 0)] = linalg::ONE;
            Ok(v)
        }
        Some(beta) => {
            let g = expm(scale(bare.hamiltonian.as_ref(), C64::new(-beta, 0.0)).as_ref());
            let z = linalg::trace(g.as_ref());
            Ok(scale(g.as_ref(), z.inv()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    /// `U(t) = V e^{−iΛt} V†` from the Hermitian eigendecomposition.
    Eigen,
    /// One scaled-and-squared `exp(−iHδt)` applied repeatedly.
    ScaledSquaring,
}

/// Exact unitary evolution of a full density matrix, returning the reduced
/// system state at every step.
pub fn dense_evolve(
    sys: &DenseChainSystem,
    rho0: &CMat,
    dt: f64,
    steps: usize,
    integrator: Integrator,
) -> Result<Trajectory> {
    let reduce = |rho: &CMat| partial_trace_keep(rho.as_ref(), &sys.dims, 0);
    let mut traj = Trajectory::new(dt, reduce(rho0));
    match integrator {
        Integrator::Eigen => {
            let (vals, v) = eigh(sys.hamiltonian.as_ref())?;
            let rho_eig = &(&linalg::adjoint(v.as_ref()) * rho0) * &v;
            let n = vals.len();
            for k in 1..=steps {
                let t = k as f64 * dt;
                let mut r = rho_eig.clone();
                for j in 0..n {
                    for i in 0..n {
                        r[(i, j)] *= C64::from_polar(1.0, -(vals[i] - vals[j]) * t);
                    }
                }
                let rho_t = &(&v * &r) * linalg::adjoint(v.as_ref());
                traj.push(reduce(&rho_t));
            }
        }
        Integrator::ScaledSquaring => {
            let u = expm(scale(sys.hamiltonian.as_ref(), -I * dt).as_ref());
            let ud = linalg::adjoint(u.as_ref());
            let mut rho = rho0.clone();
            for _ in 0..steps {
                rho = &(&u * &rho) * &ud;
                traj.push(reduce(&rho));
            }
        }
    }
    Ok(traj)
}

/// Lindblad generator `L ρ = −i[H, ρ] + Σ γ (JρJ† − ½{J†J, ρ})` on the
/// column-major vectorized space.
#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    pub hamiltonian: CMat,
    pub jumps: Vec<(f64, CMat)>,
}

impl LindbladGenerator {
    pub fn new(hamiltonian: CMat) -> Self {
        Self {
            hamiltonian,
            jumps: Vec::new(),
        }
    }

    pub fn with_jump(mut self, rate: f64, op: CMat) -> Self {
        self.jumps.push((rate, op));
        self
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn liouvillian(&self) -> CMat {
        let n = self.dim();
        let id = identity(n);
        let mut l = scale(
            linalg::commutator_superop(self.hamiltonian.as_ref()).as_ref(),
            -I,
        );
        for (rate, j) in &self.jumps {
            let jd = linalg::adjoint(j.as_ref());
            let jdj = &jd * j;
            let jump = linalg::sandwich_superop(j.as_ref(), jd.as_ref());
            let left = linalg::sandwich_superop(jdj.as_ref(), id.as_ref());
            let right = linalg::sandwich_superop(id.as_ref(), jdj.as_ref());
            let d = &jump - &scale((&left + &right).as_ref(), C64::new(0.5, 0.0));
            l = &l + &scale(d.as_ref(), C64::new(*rate, 0.0));
        }
        l
    }

    /// Qubit pure dephasing `γ_d/2 · σ_z` jump, so coherences decay as
    /// `e^{−γ_d t}`.
    pub fn qubit_dephasing(h: CMat, gamma: f64) -> Self {
        let sz = linalg::from_real(2, 2, |i, j| {
            if i == j {
                if i == 0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            }
        });
        Self::new(h).with_jump(gamma / 2.0, sz)
    }

    /// Detailed-balance relaxation between the eigenstates of `h` at inverse
    /// temperature `beta`; the unique fixed point is `e^{−βh}/Z`.
    pub fn thermalizing(h: CMat, beta: f64, rate: f64) -> Result<Self> {
        let (vals, v) = eigh(h.as_ref())?;
        let n = vals.len();
        let mut gen = Self::new(h);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                // |i⟩⟨j| in the eigenbasis, downhill when E_i < E_j
                let gap = vals[j] - vals[i];
                let r = if gap > 0.0 {
                    rate
                } else {
                    rate * (beta * gap).exp()
                };
                let op = CMat::from_fn(n, n, |a, b| v[(a, i)] * v[(b, j)].conj());
                gen = gen.with_jump(r, op);
            }
        }
        Ok(gen)
    }
}

/// Exact semigroup data `ρₖ = exp(L·kδt) ρ₀` for every preparation.
pub fn semigroup_trajectories(
    gen: &LindbladGenerator,
    dt: f64,
    steps: usize,
    preparations: &[CMat],
) -> Vec<Trajectory> {
    let n = gen.dim();
    let step = expm(scale(gen.liouvillian().as_ref(), C64::new(dt, 0.0)).as_ref());
    preparations
        .iter()
        .map(|rho0| {
            let mut traj = Trajectory::new(dt, rho0.clone());
            let mut v = linalg::vec_of(rho0.as_ref());
            for _ in 0..steps {
                v = linalg::mat_vec(step.as_ref(), &v);
                traj.push(linalg::unvec(&v, n));
            }
            traj
        })
        .collect()
}

/// Discretization of `J(x)/π dx` in the linear frequency variable: uniform
/// Gauss–Legendre panels, with the first panel graded geometrically toward
/// zero so algebraic endpoint behaviour is resolved.
pub fn mode_discretization(j: &SpectralDensity, modes: usize) -> (Vec<f64>, Vec<f64>) {
    const PER_PANEL: usize = 20;
    const GRADING: usize = 40;
    let rule = GaussRule::new(PER_PANEL);
    let end = match &j.kind {
        DensityKind::Tabulated { omega, .. } => j.cutoff.min(*omega.last().unwrap()),
        _ => j.cutoff,
    };
    let panels = (modes / PER_PANEL).saturating_sub(GRADING).max(1);
    let h = end / panels as f64;
    let mut xs = Vec::with_capacity(modes);
    let mut ws = Vec::with_capacity(modes);
    let mut hi = h;
    for _ in 0..GRADING {
        rule.push_panel(hi / 2.0, hi, &mut xs, &mut ws);
        hi /= 2.0;
    }
    for k in 1..panels {
        rule.push_panel(k as f64 * h, (k + 1) as f64 * h, &mut xs, &mut ws);
    }
    for (x, w) in xs.iter().zip(ws.iter_mut()) {
        *w *= j.eval_unchecked(*x) / std::f64::consts::PI;
    }
    (xs, ws)
}

/// Recurrence coefficients by Lanczos tridiagonalization of `diag(x)` with
/// starting vector `√w`, fully reorthogonalized.
pub fn lanczos_coefficients(xs: &[f64], ws: &[f64], n: usize) -> Result<ChainCoefficients> {
    let m = xs.len();
    let mass: f64 = ws.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::DegenerateMeasure(mass));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v: Vec<f64> = ws.iter().map(|w| (w / mass).sqrt()).collect();
    let mut alpha = Vec::with_capacity(n);
    let mut beta = vec![mass];
    for k in 0..n {
        let a: f64 = (0..m).map(|i| xs[i] * v[i] * v[i]).sum();
        alpha.push(a);
        basis.push(v.clone());
        if k + 1 == n {
            break;
        }
        let mut r: Vec<f64> = (0..m).map(|i| xs[i] * v[i]).collect();
        // two passes of classical Gram–Schmidt against every previous vector
        for _ in 0..2 {
            for q in &basis {
                let c: f64 = (0..m).map(|i| q[i] * r[i]).sum();
                for i in 0..m {
                    r[i] -= c * q[i];
                }
            }
        }
        let b2: f64 = r.iter().map(|x| x * x).sum();
        if !(b2 > 0.0) {
            return Err(Error::Stability {
                index: k + 1,
                value: b2,
            });
        }
        beta.push(b2);
        let inv = 1.0 / b2.sqrt();
        v = r.into_iter().map(|x| x * inv).collect();
    }
    Ok(ChainCoefficients { alpha, beta })
}

/// Dual-route reference for `spectral::recurrence_coefficients`.
pub fn lanczos_chain_coefficients(
    j: &SpectralDensity,
    n: usize,
    modes: usize,
) -> Result<ChainCoefficients> {
    let (xs, ws) = mode_discretization(j, modes);
    lanczos_coefficients(&xs, &ws, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_real, max_abs_diff, projector, ONE, ZERO};

    fn spin_boson_h(eps: f64, delta: f64) -> CMat {
        from_real(2, 2, |i, j| match (i, j) {
            (0, 0) => 0.5 * eps,
            (1, 1) => -0.5 * eps,
            _ => 0.5 * delta,
        })
    }

    #[test]
    fn bare_system_rabi_oscillation() {
        let (eps, delta) = (1.0, 0.6);
        let sys = DenseChainSystem::new(&spin_boson_h(eps, delta), &[], 2, 64).unwrap();
        let rho0 = projector(&[ONE, ZERO]);
        let dt = 0.05;
        let traj = dense_evolve(&sys, &rho0, dt, 200, Integrator::Eigen).unwrap();
        let omega = (eps * eps + delta * delta).sqrt();
        for (k, rho) in traj.states.iter().enumerate() {
            let t = k as f64 * dt;
            let p = 1.0 - (delta / omega).powi(2) * (0.5 * omega * t).sin().powi(2);
            assert!((rho[(0, 0)].re - p).abs() < 1e-12);
        }
    }

    #[test]
    fn integrators_agree_on_small_chain() {
        let chain = ChainParams {
            coupling: 0.4,
            frequencies: vec![1.1, 0.9, 1.3],
            hopping: vec![0.3, 0.5],
        };
        let a = from_real(2, 2, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        let sys =
            DenseChainSystem::new(&spin_boson_h(1.0, 0.6), &[(a, chain.clone())], 3, 4096).unwrap();
        let bath = thermal_chain_state(&[chain], 3, Some(0.5)).unwrap();
        let rho0 = linalg::kron(projector(&[ONE, ZERO]).as_ref(), bath.as_ref());
        let e = dense_evolve(&sys, &rho0, 0.01, 200, Integrator::Eigen).unwrap();
        let s = dense_evolve(&sys, &rho0, 0.01, 200, Integrator::ScaledSquaring).unwrap();
        for (x, y) in e.states.iter().zip(&s.states) {
            assert!(max_abs_diff(x.as_ref(), y.as_ref()) < 1e-12);
        }
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let chain = ChainParams::uniform(8, 1.0, 0.5, 0.1);
        let a = identity(2);
        let r = DenseChainSystem::new(&spin_boson_h(1.0, 0.0), &[(a, chain)], 4, 4096);
        assert!(matches!(r, Err(Error::Resource(_))));
    }

    #[test]
    fn zero_generator_keeps_states() {
        let gen = LindbladGenerator::new(crate::linalg::zeros(2, 2));
        let rho = from_real(2, 2, |i, j| if i == j { 0.5 } else { 0.2 });
        let trajs = semigroup_trajectories(&gen, 0.1, 10, &[rho.clone()]);
        for s in &trajs[0].states {
            assert!(max_abs_diff(s.as_ref(), rho.as_ref()) < 1e-15);
        }
    }

    #[test]
    fn dephasing_decays_coherence_exponentially() {
        let gamma = 0.3;
        let gen = LindbladGenerator::qubit_dephasing(crate::linalg::zeros(2, 2), gamma);
        let plus = projector(&[C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0); 2]);
        let trajs = semigroup_trajectories(&gen, 0.1, 50, &[plus]);
        for (k, s) in trajs[0].states.iter().enumerate() {
            let t = 0.1 * k as f64;
            assert!((s[(0, 1)].re - 0.5 * (-gamma * t).exp()).abs() < 1e-12);
            assert!((s[(0, 0)].re - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn lindblad_is_trace_annihilating() {
        let gen = LindbladGenerator::thermalizing(spin_boson_h(1.0, 0.6), 1.0, 0.1).unwrap();
        let l = gen.liouvillian();
        let id = linalg::vec_of(identity(2).as_ref());
        // vec(1)† L = 0
        for col in 0..4 {
            let s: C64 = (0..4).map(|r| id[r].conj() * l[(r, col)]).sum();
            assert!(s.norm() < 1e-14);
        }
    }

    #[test]
    fn lanczos_matches_shifted_legendre() {
        let rule = GaussRule::new(40);
        let (mut xs, mut ws) = (Vec::new(), Vec::new());
        rule.push_panel(0.0, 1.0, &mut xs, &mut ws);
        let c = lanczos_coefficients(&xs, &ws, 4).unwrap();
        for k in 1..4 {
            let kf = k as f64;
            assert!((c.beta[k] - kf * kf / (4.0 * (4.0 * kf * kf - 1.0))).abs() < 1e-13);
        }
    }
}
