//! Transfer tensors: dynamical maps learned from short trajectories, their
//! memory decomposition, and long-time propagation.
//!
//! Density matrices are vectorized column-major, so a map `E` acts as
//! `vec(ρ(t)) = E · vec(ρ(0))`.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, commutator_superop, fro, gell_mann_basis, identity, inverse_with_condition, scale, unvec,
    vec_of, CMat, C64, ONE, ZERO,
};
use crate::trajectory::Trajectory;

pub const DEFAULT_DECAY_THRESHOLD: f64 = 1e-7;
/// Largest condition number of the preparation matrix accepted as a basis.
pub const MAX_BASIS_CONDITION: f64 = 1e10;
const CONTAINER_MAGIC: &[u8; 8] = b"CHTNSR01";

/// The `d²` physical preparations used to probe a `d`-level system:
/// `|i⟩⟨i|`, then `|+ᵢⱼ⟩⟨+ᵢⱼ|` and `|+ᵢⱼ^{i}⟩⟨+ᵢⱼ^{i}|` for every `i < j`, with
/// `|+ᵢⱼ⟩ = (|i⟩+|j⟩)/√2` and `|+ᵢⱼ^{i}⟩ = (|i⟩+i|j⟩)/√2`.
pub fn preparation_states(d: usize) -> Vec<CMat> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        let mut psi = vec![ZERO; d];
        psi[i] = ONE;
        out.push(linalg::projector(&psi));
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut psi = vec![ZERO; d];
            psi[i] = C64::new(r, 0.0);
            psi[j] = C64::new(r, 0.0);
            out.push(linalg::projector(&psi));
            psi[j] = C64::new(0.0, r);
            out.push(linalg::projector(&psi));
        }
    }
    out
}

/// Maps `E_k`, `k = 1..M`, at spacing `dt`.
#[derive(Debug, Clone)]
pub struct DynamicalMapSet {
    pub dt: f64,
    pub maps: Vec<CMat>,
}

impl DynamicalMapSet {
    pub fn d_sys(&self) -> usize {
        (self.maps[0].nrows() as f64).sqrt().round() as usize
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Largest deviation of `vec(𝟙)ᵀ E_k` from `vec(𝟙)ᵀ` over all maps.
    pub fn trace_violation(&self) -> f64 {
        let d = self.d_sys();
        let mut worst: f64 = 0.0;
        for e in &self.maps {
            for col in 0..d * d {
                let mut s = ZERO;
                for i in 0..d {
                    s += e[(i + i * d, col)];
                }
                let target = if col % (d + 1) == 0 { ONE } else { ZERO };
                worst = worst.max((s - target).norm());
            }
        }
        worst
    }

    /// Largest deviation from Hermiticity preservation over all maps, probed
    /// on the Hermitian matrix units.
    pub fn hermiticity_violation(&self) -> f64 {
        let d = self.d_sys();
        let probes = preparation_states(d);
        let mut worst: f64 = 0.0;
        for e in &self.maps {
            for p in &probes {
                let out = unvec(&linalg::mat_vec(e.as_ref(), &vec_of(p.as_ref())), d);
                let dev = fro((&out - &linalg::adjoint(out.as_ref())).as_ref());
                worst = worst.max(dev);
            }
        }
        worst
    }
}

/// Assembles `E_k = R_k P⁻¹`, where the columns of `P` are the vectorized
/// initial states and those of `R_k` the states at step `k`.
pub fn maps_from_trajectories(trajs: &[Trajectory]) -> Result<DynamicalMapSet> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::Validation("no trajectories supplied".into()))?;
    let d = first.dim();
    let n = d * d;
    if trajs.len() != n {
        return Err(Error::Validation(format!(
            "a {d}-level system needs {n} trajectories, got {}",
            trajs.len()
        )));
    }
    let len = first.len();
    for (k, t) in trajs.iter().enumerate() {
        if t.dim() != d || t.len() != len {
            return Err(Error::Validation(format!(
                "trajectory {k} does not match the shape of trajectory 0"
            )));
        }
        if (t.dt - first.dt).abs() > 1e-12 * first.dt.abs().max(1.0) {
            return Err(Error::Validation(format!(
                "trajectory {k} has a different time step"
            )));
        }
    }
    if len < 2 {
        return Err(Error::Validation(
            "trajectories need at least one step".into(),
        ));
    }
    let p = column_stack(trajs.iter().map(|t| &t.states[0]), n);
    let (p_inv, cond) = inverse_with_condition(p.as_ref())?;
    if !(cond < MAX_BASIS_CONDITION) {
        return Err(Error::IllPosedBasis(format!(
            "preparation matrix has condition number {cond:.3e}"
        )));
    }
    let maps = (1..len)
        .map(|k| {
            let r = column_stack(trajs.iter().map(|t| &t.states[k]), n);
            &r * &p_inv
        })
        .collect();
    Ok(DynamicalMapSet { dt: first.dt, maps })
}

fn column_stack<'a>(states: impl Iterator<Item = &'a CMat>, n: usize) -> CMat {
    let mut m = CMat::zeros(n, n);
    for (j, s) in states.enumerate() {
        for (i, v) in vec_of(s.as_ref()).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub k: usize,
    /// Whether the norms actually fell below the threshold inside the window.
    pub decayed: bool,
}

/// Transfer tensors `T_k`, `k = 1..M`, with their Frobenius norms.
#[derive(Debug, Clone)]
pub struct TransferTensorSet {
    pub dt: f64,
    pub tensors: Vec<CMat>,
    pub norms: Vec<f64>,
    pub cutoff: Cutoff,
}

impl TransferTensorSet {
    pub fn d_sys(&self) -> usize {
        (self.tensors[0].nrows() as f64).sqrt().round() as usize
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Re-selects the cutoff against a new relative threshold.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.cutoff = select_cutoff(&self.norms, threshold);
        self
    }

    pub fn with_cutoff(mut self, k: usize) -> Result<Self> {
        if k == 0 || k > self.len() {
            return Err(Error::Validation(format!(
                "cutoff {k} outside 1..={}",
                self.len()
            )));
        }
        self.cutoff.k = k;
        Ok(self)
    }

    /// `‖T_k‖ / ‖T_1‖`.
    pub fn relative_norms(&self) -> Vec<f64> {
        let n1 = self.norms[0];
        self.norms
            .iter()
            .map(|n| if n1 > 0.0 { n / n1 } else { *n })
            .collect()
    }
}

/// `T_n = E_n − Σ_{m=1}^{n−1} T_{n−m} E_m`, cutoff chosen at `threshold`.
pub fn tensors_from_maps(maps: &DynamicalMapSet, threshold: f64) -> TransferTensorSet {
    let mut tensors: Vec<CMat> = Vec::with_capacity(maps.len());
    for n in 0..maps.len() {
        let mut t = maps.maps[n].clone();
        for m in 0..n {
            t = &t - &(&tensors[n - 1 - m] * &maps.maps[m]);
        }
        tensors.push(t);
    }
    let norms: Vec<f64> = tensors.iter().map(|t| fro(t.as_ref())).collect();
    let cutoff = select_cutoff(&norms, threshold);
    TransferTensorSet {
        dt: maps.dt,
        tensors,
        norms,
        cutoff,
    }
}

/// Smallest `K` with `max_{k>K} ‖T_k‖/‖T_1‖ < threshold`; `K = M`, flagged as
/// not decayed, when no such `K < M` exists.
pub fn select_cutoff(norms: &[f64], threshold: f64) -> Cutoff {
    let m = norms.len();
    if m == 0 {
        return Cutoff {
            k: 0,
            decayed: false,
        };
    }
    let n1 = if norms[0] > 0.0 { norms[0] } else { 1.0 };
    let mut tail_max = vec![0.0; m + 1];
    for k in (0..m).rev() {
        tail_max[k] = f64::max(tail_max[k + 1], norms[k] / n1);
    }
    // tail_max[K] is the maximum over tensors K+1..M (1-based)
    for k in 1..m {
        if tail_max[k] < threshold {
            return Cutoff { k, decayed: true };
        }
    }
    Cutoff {
        k: m,
        decayed: false,
    }
}

/// Number of tensors kept when truncating just before the smallest `‖T_k‖`,
/// `k ≥ 2`. A fallback for windows whose norms never reach the threshold.
pub fn norm_minimum_cutoff(norms: &[f64]) -> usize {
    norms
        .iter()
        .enumerate()
        .skip(1)
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(norms.len(), |(i, _)| i)
}

/// Liouvillian and Hamiltonian recovered from the first tensor.
#[derive(Debug, Clone)]
pub struct HamiltonianRecovery {
    /// `𝓛_s = i(T_1 − 𝟙)/δt`.
    pub liouvillian: CMat,
    /// Traceless Hermitian `H` minimizing `‖𝓛_s − [H, ·]‖_F`.
    pub hamiltonian: CMat,
    pub residual: f64,
    pub relative_residual: f64,
}

pub fn liouvillian_from_t1(t1: &CMat, dt: f64) -> Result<HamiltonianRecovery> {
    if !(dt > 0.0) {
        return Err(Error::Validation("time step must be positive".into()));
    }
    let n = t1.nrows();
    let d = (n as f64).sqrt().round() as usize;
    let shifted = t1 - &identity(n);
    let l = scale(shifted.as_ref(), C64::new(0.0, 1.0 / dt));
    let basis = gell_mann_basis(d);
    let supers: Vec<CMat> = basis
        .iter()
        .map(|g| commutator_superop(g.as_ref()))
        .collect();
    let m = supers.len();
    let inner = |a: &CMat, b: &CMat| -> f64 {
        let mut s = 0.0;
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                s += (a[(i, j)].conj() * b[(i, j)]).re;
            }
        }
        s
    };
    let mut gram = faer::Mat::<f64>::zeros(m, m);
    let mut rhs = faer::Mat::<f64>::zeros(m, 1);
    for a in 0..m {
        for b in 0..m {
            gram[(a, b)] = inner(&supers[a], &supers[b]);
        }
        rhs[(a, 0)] = inner(&supers[a], &l);
    }
    let coeffs = if m == 0 {
        faer::Mat::<f64>::zeros(0, 1)
    } else {
        use faer::linalg::solvers::Solve;
        gram.partial_piv_lu().solve(&rhs)
    };
    let mut h = CMat::zeros(d, d);
    let mut fit = CMat::zeros(n, n);
    for a in 0..m {
        let c = C64::new(coeffs[(a, 0)], 0.0);
        h = &h + &scale(basis[a].as_ref(), c);
        fit = &fit + &scale(supers[a].as_ref(), c);
    }
    let residual = fro((&l - &fit).as_ref());
    let norm = fro(l.as_ref());
    Ok(HamiltonianRecovery {
        liouvillian: l,
        hamiltonian: h,
        residual,
        relative_residual: if norm > 0.0 { residual / norm } else { 0.0 },
    })
}

/// Streaming `ρ_n = Σ_{k=1}^{K} T_k ρ_{n−k}` with a ring buffer of the last
/// `K` states. While fewer than `K` states are known the sum runs over
/// those available.
#[derive(Debug, Clone)]
pub struct TtmStream {
    tensors: Vec<Vec<C64>>,
    n: usize,
    ring: Vec<Vec<C64>>,
    head: usize,
    filled: usize,
    d: usize,
}

impl TtmStream {
    pub fn new(set: &TransferTensorSet, k: usize, history: &[CMat]) -> Result<Self> {
        if k == 0 || k > set.len() {
            return Err(Error::Validation(format!(
                "cutoff {k} outside 1..={}",
                set.len()
            )));
        }
        if history.is_empty() {
            return Err(Error::Validation(
                "propagation needs at least one initial state".into(),
            ));
        }
        let d = set.d_sys();
        let n = d * d;
        let tensors = set.tensors[..k]
            .iter()
            .map(|t| {
                let mut flat = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        flat.push(t[(i, j)]);
                    }
                }
                flat
            })
            .collect();
        let mut s = Self {
            tensors,
            n,
            ring: vec![vec![ZERO; n]; k],
            head: 0,
            filled: 0,
            d,
        };
        let start = history.len().saturating_sub(k);
        for rho in &history[start..] {
            if rho.nrows() != d {
                return Err(Error::Validation(
                    "history state has the wrong dimension".into(),
                ));
            }
            s.push(vec_of(rho.as_ref()));
        }
        Ok(s)
    }

    fn push(&mut self, v: Vec<C64>) {
        self.ring[self.head] = v;
        self.head = (self.head + 1) % self.ring.len();
        self.filled = (self.filled + 1).min(self.ring.len());
    }

    /// Advances one step and returns the new state.
    pub fn advance(&mut self) -> Result<CMat> {
        let k_max = self.ring.len();
        let mut out = vec![ZERO; self.n];
        for k in 1..=self.filled {
            let idx = (self.head + k_max - k) % k_max;
            let x = &self.ring[idx];
            let t = &self.tensors[k - 1];
            for (i, o) in out.iter_mut().enumerate() {
                let row = &t[i * self.n..(i + 1) * self.n];
                let mut acc = ZERO;
                for (a, b) in row.iter().zip(x) {
                    acc += a * b;
                }
                *o += acc;
            }
        }
        if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical(
                "NaN during transfer-tensor propagation".into(),
            ));
        }
        let rho = unvec(&out, self.d);
        self.push(out);
        Ok(rho)
    }
}

/// Extends `history` (states at `t_0, t_1, …`) by `steps` steps with the
/// first `k` tensors. The returned trajectory starts with the history.
pub fn propagate(
    set: &TransferTensorSet,
    k: usize,
    history: &[CMat],
    steps: usize,
) -> Result<Trajectory> {
    let mut stream = TtmStream::new(set, k, history)?;
    let mut traj = Trajectory {
        dt: set.dt,
        states: history.to_vec(),
    };
    let mut warned = false;
    for _ in 0..steps {
        let rho = stream.advance()?;
        let tr = linalg::trace(rho.as_ref());
        if !warned && (tr - ONE).norm() > 1e-3 {
            warn!(
                "trace drifted to {:.6} at t = {:.4}",
                tr.re,
                traj.len() as f64 * set.dt
            );
            warned = true;
        }
        traj.push(rho);
    }
    Ok(traj)
}

/// `[x, E_1 x, …, E_M x]`. Valid for any operator `x` by linearity, not only
/// for density matrices.
pub fn map_history(maps: &DynamicalMapSet, x: &CMat) -> Result<Vec<CMat>> {
    let d = maps.d_sys();
    if x.nrows() != d || x.ncols() != d {
        return Err(Error::Validation(format!("operator must be {d}x{d}")));
    }
    let v = vec_of(x.as_ref());
    let mut out = Vec::with_capacity(maps.len() + 1);
    out.push(x.clone());
    for e in &maps.maps {
        out.push(unvec(&linalg::mat_vec(e.as_ref(), &v), d));
    }
    Ok(out)
}

/// `Φ_n x` for `n = 0..=steps`: the learned maps while they last, then the
/// first `k` transfer tensors. No trace is assumed, so `x` may be any
/// operator.
pub fn evolve_operator(
    maps: &DynamicalMapSet,
    set: &TransferTensorSet,
    k: usize,
    x: &CMat,
    steps: usize,
) -> Result<Vec<CMat>> {
    let mut out = map_history(maps, x)?;
    if steps + 1 <= out.len() {
        out.truncate(steps + 1);
        return Ok(out);
    }
    let mut stream = TtmStream::new(set, k, &out)?;
    while out.len() < steps + 1 {
        out.push(stream.advance()?);
    }
    Ok(out)
}

/// Samples `𝓚_k = T_k / δt²` for `k ≥ 2`. `T_1` is left out: it carries
/// `𝟙 − i𝓛_s δt` besides the memory contribution.
#[derive(Debug, Clone)]
pub struct MemoryKernelView {
    pub dt: f64,
    /// `(k, 𝓚_k)` pairs.
    pub samples: Vec<(usize, CMat)>,
}

impl MemoryKernelView {
    pub fn norms(&self) -> Vec<(usize, f64)> {
        self.samples
            .iter()
            .map(|(k, m)| (*k, fro(m.as_ref())))
            .collect()
    }
}

pub fn memory_kernel(set: &TransferTensorSet) -> Result<MemoryKernelView> {
    if !(set.dt > 0.0) {
        return Err(Error::Validation("time step must be positive".into()));
    }
    let inv = C64::new(1.0 / (set.dt * set.dt), 0.0);
    let samples = set
        .tensors
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, t)| (i + 1, scale(t.as_ref(), inv)))
        .collect();
    Ok(MemoryKernelView {
        dt: set.dt,
        samples,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContainerHeader {
    d_sys: usize,
    dt: f64,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "K")]
    k: usize,
    decayed: bool,
    norms: Vec<f64>,
    has_maps: bool,
}

/// Writes tensors (and optionally maps) to the binary container: magic,
/// little-endian `u64` header length, JSON header, then row-major complex
/// doubles.
pub fn write_container(
    path: impl AsRef<Path>,
    set: &TransferTensorSet,
    maps: Option<&DynamicalMapSet>,
) -> Result<()> {
    let header = ContainerHeader {
        d_sys: set.d_sys(),
        dt: set.dt,
        m: set.len(),
        k: set.cutoff.k,
        decayed: set.cutoff.decayed,
        norms: set.norms.clone(),
        has_maps: maps.is_some(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut put = |m: &CMat| -> Result<()> {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_all(&m[(i, j)].re.to_le_bytes())?;
                w.write_all(&m[(i, j)].im.to_le_bytes())?;
            }
        }
        Ok(())
    };
    for t in &set.tensors {
        put(t)?;
    }
    if let Some(maps) = maps {
        for e in &maps.maps {
            put(e)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container(
    path: impl AsRef<Path>,
) -> Result<(TransferTensorSet, Option<DynamicalMapSet>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Validation(format!("tensor container: {m}"));
    if bytes.len() < 16 || &bytes[..8] != CONTAINER_MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: ContainerHeader = serde_json::from_slice(&bytes[16..body])?;
    let n = header.d_sys * header.d_sys;
    let count = header.m * if header.has_maps { 2 } else { 1 };
    if bytes.len() != body + count * n * n * 16 {
        return Err(bad("payload size does not match the header"));
    }
    let mut pos = body;
    let mut take = || -> CMat {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let re = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
                let im = f64::from_le_bytes(bytes[pos + 8..pos + 16].try_into().unwrap());
                m[(i, j)] = C64::new(re, im);
                pos += 16;
            }
        }
        m
    };
    let tensors: Vec<CMat> = (0..header.m).map(|_| take()).collect();
    let maps = if header.has_maps {
        Some(DynamicalMapSet {
            dt: header.dt,
            maps: (0..header.m).map(|_| take()).collect(),
        })
    } else {
        None
    };
    let set = TransferTensorSet {
        dt: header.dt,
        tensors,
        norms: header.norms,
        cutoff: Cutoff {
            k: header.k,
            decayed: header.decayed,
        },
    };
    Ok((set, maps))
}

/// CSV of `‖T_k‖` against `t_k`.
pub fn write_norm_csv(path: impl AsRef<Path>, set: &TransferTensorSet) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# units: time in 1/eps; Frobenius norms")?;
    writeln!(w, "k,t,norm,relative_norm")?;
    for (i, (n, r)) in set.norms.iter().zip(set.relative_norms()).enumerate() {
        writeln!(
            w,
            "{},{:.17e},{:.17e},{:.17e}",
            i + 1,
            (i + 1) as f64 * set.dt,
            n,
            r
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_real, max_abs_diff, trace_distance, unitary_propagator};
    use crate::oracle::{semigroup_trajectories, LindbladGenerator};
    use proptest::prelude::*;

    fn qubit_h(eps: f64, delta: f64) -> CMat {
        from_real(2, 2, |i, j| match (i, j) {
            (0, 0) => 0.5 * eps,
            (1, 1) => -0.5 * eps,
            _ => 0.5 * delta,
        })
    }

    fn unitary_trajectories(h: &CMat, dt: f64, steps: usize) -> Vec<Trajectory> {
        let u = unitary_propagator(h.as_ref(), dt).unwrap();
        let ud = linalg::adjoint(u.as_ref());
        preparation_states(h.nrows())
            .into_iter()
            .map(|rho| {
                let mut t = Trajectory::new(dt, rho.clone());
                let mut r = rho;
                for _ in 0..steps {
                    r = &(&u * &r) * &ud;
                    t.push(r.clone());
                }
                t
            })
            .collect()
    }

    #[test]
    fn preparations_span_the_operator_space() {
        for d in 1..=4 {
            let p = column_stack(preparation_states(d).iter(), d * d);
            let (_, cond) = inverse_with_condition(p.as_ref()).unwrap();
            assert!(cond < 100.0, "d = {d}: {cond}");
        }
    }

    #[test]
    fn frozen_dynamics_give_identity_maps() {
        let trajs: Vec<Trajectory> = preparation_states(2)
            .into_iter()
            .map(|r| Trajectory {
                dt: 0.1,
                states: vec![r; 5],
            })
            .collect();
        let maps = maps_from_trajectories(&trajs).unwrap();
        for e in &maps.maps {
            assert!(max_abs_diff(e.as_ref(), identity(4).as_ref()) < 1e-14);
        }
        let set = tensors_from_maps(&maps, DEFAULT_DECAY_THRESHOLD);
        assert_eq!(
            set.cutoff,
            Cutoff {
                k: 1,
                decayed: true
            }
        );
        let rec = liouvillian_from_t1(&set.tensors[0], 0.1).unwrap();
        assert!(fro(rec.liouvillian.as_ref()) < 1e-13);
        assert!(fro(rec.hamiltonian.as_ref()) < 1e-13);
    }

    #[test]
    fn unitary_maps_are_conjugation_channels() {
        let h = qubit_h(1.0, 0.6);
        let trajs = unitary_trajectories(&h, 0.1, 10);
        let maps = maps_from_trajectories(&trajs).unwrap();
        assert!(maps.trace_violation() < 1e-12);
        assert!(maps.hermiticity_violation() < 1e-12);
        for (k, e) in maps.maps.iter().enumerate() {
            let u = unitary_propagator(h.as_ref(), (k + 1) as f64 * 0.1).unwrap();
            let channel =
                linalg::sandwich_superop(u.as_ref(), linalg::adjoint(u.as_ref()).as_ref());
            assert!(max_abs_diff(e.as_ref(), channel.as_ref()) < 1e-12);
        }
    }

    #[test]
    fn dephasing_maps_match_the_semigroup() {
        let gen = LindbladGenerator::qubit_dephasing(qubit_h(1.0, 0.0), 0.3);
        let trajs = semigroup_trajectories(&gen, 0.05, 40, &preparation_states(2));
        let maps = maps_from_trajectories(&trajs).unwrap();
        let l = gen.liouvillian();
        for (k, e) in maps.maps.iter().enumerate() {
            let exact =
                linalg::expm(scale(l.as_ref(), C64::new((k + 1) as f64 * 0.05, 0.0)).as_ref());
            assert!(max_abs_diff(e.as_ref(), exact.as_ref()) < 1e-10);
        }
    }

    #[test]
    fn maps_do_not_depend_on_the_preparation_basis() {
        let gen = LindbladGenerator::thermalizing(qubit_h(1.0, 0.6), 1.0, 0.2).unwrap();
        let a = semigroup_trajectories(&gen, 0.1, 20, &preparation_states(2));
        let other: Vec<CMat> = vec![
            from_real(2, 2, |i, j| [[0.8, 0.1], [0.1, 0.2]][i][j]),
            from_real(2, 2, |i, j| [[0.3, -0.2], [-0.2, 0.7]][i][j]),
            CMat::from_fn(2, 2, |i, j| match (i, j) {
                (0, 0) => C64::new(0.5, 0.0),
                (1, 1) => C64::new(0.5, 0.0),
                (0, 1) => C64::new(0.1, 0.3),
                _ => C64::new(0.1, -0.3),
            }),
            from_real(2, 2, |i, j| if i == j { 0.5 } else { 0.0 }),
        ];
        let b = semigroup_trajectories(&gen, 0.1, 20, &other);
        let ma = maps_from_trajectories(&a).unwrap();
        let mb = maps_from_trajectories(&b).unwrap();
        for (x, y) in ma.maps.iter().zip(&mb.maps) {
            assert!(max_abs_diff(x.as_ref(), y.as_ref()) < 1e-10);
        }
    }

    #[test]
    fn dependent_preparations_are_ill_posed() {
        let mut preps = preparation_states(2);
        preps[3] = preps[2].clone();
        let trajs: Vec<Trajectory> = preps
            .into_iter()
            .map(|r| Trajectory {
                dt: 0.1,
                states: vec![r; 3],
            })
            .collect();
        assert!(matches!(
            maps_from_trajectories(&trajs),
            Err(Error::IllPosedBasis(_))
        ));
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let mut trajs: Vec<Trajectory> = preparation_states(2)
            .into_iter()
            .map(|r| Trajectory {
                dt: 0.1,
                states: vec![r; 3],
            })
            .collect();
        trajs[1].states.pop();
        assert!(matches!(
            maps_from_trajectories(&trajs),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn semigroups_have_no_memory() {
        let gen = LindbladGenerator::thermalizing(qubit_h(1.0, 0.6), 0.5, 0.4).unwrap();
        let trajs = semigroup_trajectories(&gen, 0.1, 30, &preparation_states(2));
        let set = tensors_from_maps(&maps_from_trajectories(&trajs).unwrap(), 1e-10);
        for n in &set.norms[1..] {
            assert!(*n < 1e-12, "{n}");
        }
        assert_eq!(set.cutoff.k, 1);
        let kernel = memory_kernel(&set).unwrap();
        assert!(kernel.norms().iter().all(|(_, n)| *n < 1e-9));
    }

    #[test]
    fn geometric_decay_sets_the_closed_form_cutoff() {
        let r: f64 = 0.3;
        let norms: Vec<f64> = (1..=40).map(|k| r.powi(k)).collect();
        let thr = 1e-7;
        let c = select_cutoff(&norms, thr);
        assert_eq!(c.k, (thr.ln() / r.ln()).ceil() as usize);
        assert!(c.decayed);
        let flat = vec![1.0; 10];
        assert_eq!(
            select_cutoff(&flat, thr),
            Cutoff {
                k: 10,
                decayed: false
            }
        );
    }

    #[test]
    fn norm_minimum_cutoff_stops_before_the_dip() {
        let norms = [1.0, 1e-2, 1e-4, 3e-5, 1e-4, 2e-4];
        assert_eq!(norm_minimum_cutoff(&norms), 3);
        assert_eq!(norm_minimum_cutoff(&[1.0]), 1);
    }

    #[test]
    fn recovered_hamiltonian_error_shrinks_with_the_step() {
        let h = qubit_h(1.0, 0.6);
        let mut errs = Vec::new();
        for dt in [0.2, 0.1, 0.05] {
            let trajs = unitary_trajectories(&h, dt, 1);
            let set = tensors_from_maps(
                &maps_from_trajectories(&trajs).unwrap(),
                DEFAULT_DECAY_THRESHOLD,
            );
            let rec = liouvillian_from_t1(&set.tensors[0], dt).unwrap();
            errs.push(fro((&rec.hamiltonian - &h).as_ref()));
        }
        assert!(
            errs[0] / errs[1] > 1.9 && errs[1] / errs[2] > 1.9,
            "{errs:?}"
        );
    }

    #[test]
    fn markovian_propagation_is_a_matrix_power() {
        let gen = LindbladGenerator::thermalizing(qubit_h(1.0, 0.6), 1.0, 0.3).unwrap();
        let trajs = semigroup_trajectories(&gen, 0.1, 5, &preparation_states(2));
        let set = tensors_from_maps(
            &maps_from_trajectories(&trajs).unwrap(),
            DEFAULT_DECAY_THRESHOLD,
        );
        let rho0 = preparation_states(2)[2].clone();
        let out = propagate(&set, 1, &[rho0.clone()], 30).unwrap();
        let mut v = vec_of(rho0.as_ref());
        for k in 1..=30 {
            v = linalg::mat_vec(set.tensors[0].as_ref(), &v);
            assert!(max_abs_diff(out.states[k].as_ref(), unvec(&v, 2).as_ref()) < 1e-13);
        }
    }

    #[test]
    fn long_propagation_follows_the_semigroup() {
        let gen = LindbladGenerator::thermalizing(qubit_h(1.0, 0.6), 1.0, 0.3).unwrap();
        let preps = preparation_states(2);
        let learn = semigroup_trajectories(&gen, 0.05, 50, &preps);
        let set = tensors_from_maps(
            &maps_from_trajectories(&learn).unwrap(),
            DEFAULT_DECAY_THRESHOLD,
        );
        let exact = semigroup_trajectories(&gen, 0.05, 5000, &preps[2..3]);
        let out = propagate(&set, set.cutoff.k, &[preps[2].clone()], 5000).unwrap();
        assert!(out.max_trace_distance(&exact[0]) < 1e-8);
    }

    #[test]
    fn container_round_trip() {
        let gen = LindbladGenerator::qubit_dephasing(qubit_h(1.0, 0.3), 0.2);
        let trajs = semigroup_trajectories(&gen, 0.1, 6, &preparation_states(2));
        let maps = maps_from_trajectories(&trajs).unwrap();
        let set = tensors_from_maps(&maps, DEFAULT_DECAY_THRESHOLD);
        let dir = std::env::temp_dir().join(format!("ttm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("set.bin");
        write_container(&p, &set, Some(&maps)).unwrap();
        let (back, back_maps) = read_container(&p).unwrap();
        assert_eq!(back.norms, set.norms);
        assert_eq!(back.cutoff, set.cutoff);
        for (a, b) in back.tensors.iter().zip(&set.tensors) {
            assert_eq!(a, b);
        }
        for (a, b) in back_maps.unwrap().maps.iter().zip(&maps.maps) {
            assert_eq!(a, b);
        }
        std::fs::write(&p, b"not a container").unwrap();
        assert!(read_container(&p).is_err());
    }

    fn random_map(seed: &[f64], n: usize) -> CMat {
        CMat::from_fn(n, n, |i, j| {
            let k = 2 * (i * n + j);
            let diag = if i == j { 1.0 } else { 0.0 };
            C64::new(
                diag + 0.3 * seed[k % seed.len()],
                0.3 * seed[(k + 1) % seed.len()],
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reconstruction_identity_holds(seed in prop::collection::vec(-1.0f64..1.0, 32..64), m in 1usize..12) {
            let n = 4;
            let maps = DynamicalMapSet {
                dt: 0.1,
                maps: (0..m).map(|k| {
                    let rotated: Vec<f64> = seed.iter().cycle().skip(3 * k).take(seed.len()).copied().collect();
                    random_map(&rotated, n)
                }).collect(),
            };
            let set = tensors_from_maps(&maps, DEFAULT_DECAY_THRESHOLD);
            prop_assert!(max_abs_diff(set.tensors[0].as_ref(), maps.maps[0].as_ref()) == 0.0);
            for k in 0..m {
                let mut e = set.tensors[k].clone();
                for j in 0..k {
                    e = &e + &(&set.tensors[k - 1 - j] * &maps.maps[j]);
                }
                prop_assert!(max_abs_diff(e.as_ref(), maps.maps[k].as_ref()) < 1e-12);
            }
        }

        #[test]
        fn full_memory_reproduces_training_states(seed in prop::collection::vec(-1.0f64..1.0, 32..64), m in 1usize..10) {
            let n = 4;
            let maps = DynamicalMapSet {
                dt: 0.1,
                maps: (0..m).map(|k| {
                    let rotated: Vec<f64> = seed.iter().cycle().skip(5 * k + 1).take(seed.len()).copied().collect();
                    random_map(&rotated, n)
                }).collect(),
            };
            let set = tensors_from_maps(&maps, DEFAULT_DECAY_THRESHOLD);
            let rho0 = preparation_states(2)[3].clone();
            let out = propagate(&set, m, &[rho0.clone()], m).unwrap();
            for k in 0..m {
                let expected = unvec(&linalg::mat_vec(maps.maps[k].as_ref(), &vec_of(rho0.as_ref())), 2);
                let scale = 1.0 + fro(expected.as_ref());
                prop_assert!(max_abs_diff(out.states[k + 1].as_ref(), expected.as_ref()) < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn trace_distance_helper_is_consistent() {
        let a = preparation_states(2)[0].clone();
        let b = preparation_states(2)[1].clone();
        assert!((trace_distance(a.as_ref(), b.as_ref()) - 1.0).abs() < 1e-14);
    }
}
