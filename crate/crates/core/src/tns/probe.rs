//! Recurrence-time estimate from a single excitation launched at the chain head.

use super::lattice::Lattice;
use super::mps::Mps;
use super::{EvolutionConfig, Propagator};
use crate::error::Result;
use crate::linalg::{zeros, C64};
use crate::spectral::ChainParams;

pub const DEFAULT_RECURRENCE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct RecurrenceEstimate {
    /// Time of the first rebound maximum, or the horizon when none occurred.
    pub time: f64,
    pub rebounded: bool,
    /// Occupation of the first site at `time`, relative to its initial value.
    pub peak: f64,
    /// First-site occupation at every step, starting at `t = 0`.
    pub occupation: Vec<f64>,
}

/// Evolves `|1 0 … 0⟩` on the bare chain and reports the first local maximum
/// of the head occupation that follows a drop below `threshold` and itself
/// exceeds `threshold`.
pub fn recurrence_probe(
    chain: &ChainParams,
    cfg: &EvolutionConfig,
    horizon_steps: usize,
    threshold: f64,
) -> Result<RecurrenceEstimate> {
    let d = cfg.local_dim;
    let lattice = Lattice::bare_chain(chain, d);
    let locals: Vec<_> = (0..chain.len())
        .map(|i| {
            let mut v = zeros(d, 1);
            v[(usize::from(i == 0), 0)] = C64::new(1.0, 0.0);
            v
        })
        .collect();
    let mut mps = Mps::product(&locals);
    mps.canonicalize();
    let prop = Propagator::real_time(&lattice, &mps.anc, cfg)?;
    let head = |mps: &mut Mps| {
        let rho = mps.site_density(0);
        (0..rho.nrows())
            .map(|k| k as f64 * rho[(k, k)].re)
            .sum::<f64>()
    };
    let n0 = head(&mut mps);
    let mut occ = vec![1.0];
    let mut decayed_at: Option<usize> = None;
    for _ in 0..horizon_steps {
        prop.step(&mut mps)?;
        mps.normalize();
        let v = head(&mut mps) / n0;
        occ.push(v);
        let k = occ.len() - 1;
        if v < threshold && decayed_at.is_none() {
            decayed_at = Some(k);
        }
        let after_decay = decayed_at.is_some_and(|j| k - 1 > j);
        if after_decay && occ[k - 1] > threshold && occ[k - 1] >= occ[k - 2] && occ[k - 1] > v {
            let (t, peak) = vertex(cfg.dt, k - 1, occ[k - 2], occ[k - 1], v);
            return Ok(RecurrenceEstimate {
                time: t,
                rebounded: true,
                peak,
                occupation: occ,
            });
        }
    }
    let last = *occ.last().unwrap();
    Ok(RecurrenceEstimate {
        time: horizon_steps as f64 * cfg.dt,
        rebounded: false,
        peak: last,
        occupation: occ,
    })
}

/// Parabolic refinement of a sampled maximum at index `k`.
fn vertex(dt: f64, k: usize, a: f64, b: f64, c: f64) -> (f64, f64) {
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-300 {
        return (k as f64 * dt, b);
    }
    let shift = 0.5 * (a - c) / denom;
    ((k as f64 + shift) * dt, b - 0.25 * (a - c) * shift)
}
