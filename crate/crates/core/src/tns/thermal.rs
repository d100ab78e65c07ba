//! Purified Gibbs states of a bare chain by imaginary-time evolution.

use log::debug;

use super::lattice::Lattice;
use super::mps::Mps;
use super::{EvolutionConfig, Propagator};
use crate::error::{Error, Result};
use crate::linalg::{identity, scale, zeros, CMat, C64};
use crate::spectral::ChainParams;

/// Purification of the chain's state at `cfg.beta`, sites ordered from the
/// system outwards. Vacuum chains carry trivial ancillas.
pub fn thermal_chain(chain: &ChainParams, cfg: &EvolutionConfig) -> Result<Mps> {
    let d = cfg.local_dim;
    let n = chain.len();
    let beta = match cfg.beta {
        None => {
            let mut v = zeros(d, 1);
            v[(0, 0)] = C64::new(1.0, 0.0);
            let mut mps = Mps::product(&vec![v; n]);
            mps.canonicalize();
            return Ok(mps);
        }
        Some(b) => b,
    };
    let infinite = scale(identity(d).as_ref(), C64::new(1.0 / (d as f64).sqrt(), 0.0));
    let start = Mps::product(&vec![infinite; n]);
    if beta == 0.0 {
        let mut mps = start;
        mps.canonicalize();
        return Ok(mps);
    }
    let lattice = Lattice::bare_chain(chain, d);
    let half = 0.5 * beta;
    let mut steps = ((half / cfg.thermal.dtau).ceil() as usize).max(1);
    let mut prev = cool(&lattice, &start, half, steps, cfg)?;
    let mut prev_occ = occupations(&mut prev);
    if lattice.len() == 1 {
        // a single site has no splitting error
        return Ok(prev);
    }
    for _ in 0..cfg.thermal.max_halvings {
        steps *= 2;
        let mut next = cool(&lattice, &start, half, steps, cfg)?;
        let occ = occupations(&mut next);
        let change = occ
            .iter()
            .zip(&prev_occ)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        debug!("imaginary time with {steps} steps: occupation change {change:.3e}");
        if change / 3.0 < cfg.thermal.tolerance {
            return Ok(next);
        }
        prev_occ = occ;
    }
    Err(Error::Preparation(format!(
        "imaginary-time preparation at beta = {beta} did not settle within {} halvings",
        cfg.thermal.max_halvings
    )))
}

fn cool(
    lattice: &Lattice,
    start: &Mps,
    tau: f64,
    steps: usize,
    cfg: &EvolutionConfig,
) -> Result<Mps> {
    let mut mps = start.clone();
    mps.canonicalize();
    let prop = Propagator::imaginary_time(lattice, &mps.anc, tau / steps as f64, cfg.policy())?;
    for _ in 0..steps {
        prop.step(&mut mps)?;
        let norm = mps.normalize();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Preparation(
                "imaginary-time state lost its norm".into(),
            ));
        }
    }
    Ok(mps)
}

fn occupations(mps: &mut Mps) -> Vec<f64> {
    (0..mps.len())
        .map(|i| {
            let rho: CMat = mps.site_density(i);
            (0..rho.nrows()).map(|k| k as f64 * rho[(k, k)].re).sum()
        })
        .collect()
}
