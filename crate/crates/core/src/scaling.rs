//! Wall-time records and the `t_w = c·t_bath²` fit.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{chain_for, learn_maps, Model};
use crate::spectral::SpectralDensity;
use crate::tns::{EvolutionConfig, Setup};
use crate::ttm::{map_history, propagate, tensors_from_maps};

/// One learning run of the scaling study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRecord {
    pub t_bath: f64,
    /// Time reached by the transfer-tensor continuation.
    pub t_sim: f64,
    /// Wall time of the basis trajectories up to `t_bath`, in seconds.
    pub wall_time: f64,
    /// Wall time of the thermal preparation, kept out of `wall_time`.
    pub preparation_time: f64,
    pub chain_length: usize,
    pub learn_steps: usize,
    /// `(steps, seconds)` of transfer-tensor propagation.
    pub propagation: Vec<(usize, f64)>,
    /// Filled in by `fit_scaling`.
    #[serde(default)]
    pub fitted_c: Option<f64>,
    #[serde(default)]
    pub propagation_slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingFit {
    /// `c` of `t_w = c·t_bath²`, in seconds per squared time unit.
    pub c: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    /// Set when adding a linear term removes most of the residual.
    pub linear_contamination: bool,
    /// Propagation seconds per step at the largest `t_bath`.
    pub propagation: LinearFit,
    /// Learning seconds per step at the largest `t_bath`.
    pub marginal_learning_cost: f64,
}

fn r_squared(y: &[f64], residuals: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Ordinary least squares `y = a + b x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Fit("a line needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let res: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| b - intercept - slope * a)
        .collect();
    Ok(LinearFit {
        slope,
        intercept,
        r_squared: r_squared(y, &res),
    })
}

/// Least squares of the learning wall time against `t_bath²` through the
/// origin, plus a line through the propagation timings of the record with
/// the largest `t_bath`.
pub fn fit_scaling(records: &[BenchRecord]) -> Result<ScalingFit> {
    if records.len() < 4 {
        return Err(Error::Fit(format!(
            "need at least four grid points, got {}",
            records.len()
        )));
    }
    let t: Vec<f64> = records.iter().map(|r| r.t_bath).collect();
    let y: Vec<f64> = records.iter().map(|r| r.wall_time).collect();
    if y.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Fit("wall times must be positive".into()));
    }
    let mut distinct = t.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 || distinct[0] <= 0.0 {
        return Err(Error::Fit(
            "grid needs four distinct positive t_bath values".into(),
        ));
    }
    let t2: Vec<f64> = t.iter().map(|v| v * v).collect();
    let c =
        t2.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / t2.iter().map(|a| a * a).sum::<f64>();
    let residuals: Vec<f64> = t2.iter().zip(&y).map(|(a, b)| b - c * a).collect();
    let r2 = r_squared(&y, &residuals);

    // two-term model a t² + b t via the 2×2 normal equations
    let s = |f: &dyn Fn(f64) -> f64| t.iter().map(|&v| f(v)).sum::<f64>();
    let (s4, s3, s2) = (s(&|v| v.powi(4)), s(&|v| v.powi(3)), s(&|v| v * v));
    let (p2, p1) = (
        t.iter().zip(&y).map(|(a, b)| a * a * b).sum::<f64>(),
        t.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>(),
    );
    let det = s4 * s2 - s3 * s3;
    let ss1: f64 = residuals.iter().map(|r| r * r).sum();
    let linear_contamination = if det.abs() > 0.0 {
        let a = (p2 * s2 - p1 * s3) / det;
        let b = (s4 * p1 - s3 * p2) / det;
        let ss2: f64 = t
            .iter()
            .zip(&y)
            .map(|(v, w)| (w - a * v * v - b * v).powi(2))
            .sum();
        let scale: f64 = y.iter().map(|v| v * v).sum();
        ss1 > 1e-20 * scale && ss2 < 0.1 * ss1
    } else {
        false
    };

    let last = records
        .iter()
        .max_by(|a, b| a.t_bath.total_cmp(&b.t_bath))
        .expect("at least four records");
    let (steps, secs): (Vec<f64>, Vec<f64>) =
        last.propagation.iter().map(|&(n, s)| (n as f64, s)).unzip();
    let propagation = linear_fit(&steps, &secs)?;
    Ok(ScalingFit {
        c,
        r_squared: r2,
        residuals,
        linear_contamination,
        propagation,
        marginal_learning_cost: last.wall_time / last.learn_steps.max(1) as f64,
    })
}

/// Settings of one scaling study.
#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub t_bath: Vec<f64>,
    pub sites_per_time: f64,
    pub propagation_steps: Vec<usize>,
    pub repetitions: usize,
    pub decay_threshold: f64,
}

/// Times the basis trajectories up to each `t_bath` on a chain of
/// `⌈v̄ t_bath⌉` sites, then the transfer-tensor propagation. The best of
/// `repetitions` runs is kept.
pub fn measure(
    model: &Model,
    density: &SpectralDensity,
    base: &EvolutionConfig,
    plan: &BenchPlan,
) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::with_capacity(plan.t_bath.len());
    for &t_bath in &plan.t_bath {
        let mut cfg = base.clone();
        cfg.chain_length = ((plan.sites_per_time * t_bath).ceil() as usize).max(1);
        let learn_steps = ((t_bath / cfg.dt).round() as usize).max(1);
        let chain = chain_for(density, &cfg)?;
        let t0 = Instant::now();
        let setup = Setup::new(&cfg, &model.hamiltonian(), &model.couplings(&chain))?;
        let preparation_time = t0.elapsed().as_secs_f64();
        let mut wall = f64::INFINITY;
        let mut maps = None;
        for _ in 0..plan.repetitions.max(1) {
            let t0 = Instant::now();
            let (m, _) = learn_maps(&setup, model.dim(), learn_steps, 1)?;
            wall = wall.min(t0.elapsed().as_secs_f64());
            maps = Some(m);
        }
        let maps = maps.expect("at least one repetition");
        let set = tensors_from_maps(&maps, plan.decay_threshold);
        let history = map_history(&maps, &model.default_initial_state())?;
        let mut propagation = Vec::with_capacity(plan.propagation_steps.len());
        for &n in &plan.propagation_steps {
            let mut best = f64::INFINITY;
            for _ in 0..plan.repetitions.max(1) {
                let t0 = Instant::now();
                let traj = propagate(&set, set.cutoff.k, &history, n)?;
                best = best.min(t0.elapsed().as_secs_f64());
                std::hint::black_box(traj);
            }
            propagation.push((n, best));
        }
        let t_sim = (learn_steps + plan.propagation_steps.iter().copied().max().unwrap_or(0))
            as f64
            * cfg.dt;
        log::info!(
            "t_bath = {t_bath}: N = {}, learning {wall:.3} s",
            cfg.chain_length
        );
        out.push(BenchRecord {
            t_bath,
            t_sim,
            wall_time: wall,
            preparation_time,
            chain_length: cfg.chain_length,
            learn_steps,
            propagation,
            fitted_c: None,
            propagation_slope: None,
        });
    }
    Ok(out)
}

/// Copies the fitted constants into every record.
pub fn annotate(records: &mut [BenchRecord], fit: &ScalingFit) {
    for r in records {
        r.fitted_c = Some(fit.c);
        r.propagation_slope = linear_fit(
            &r.propagation.iter().map(|p| p.0 as f64).collect::<Vec<_>>(),
            &r.propagation.iter().map(|p| p.1).collect::<Vec<_>>(),
        )
        .ok()
        .map(|f| f.slope);
    }
}

pub fn write_bench_csv(path: impl AsRef<std::path::Path>, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t_bath",
        "t_sim",
        "wall_time",
        "preparation_time",
        "chain_length",
        "learn_steps",
        "fitted_c",
        "propagation_slope",
    ])?;
    for r in records {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.t_bath.to_string(),
            r.t_sim.to_string(),
            r.wall_time.to_string(),
            r.preparation_time.to_string(),
            r.chain_length.to_string(),
            r.learn_steps.to_string(),
            opt(r.fitted_c),
            opt(r.propagation_slope),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(f: impl Fn(f64) -> f64) -> Vec<BenchRecord> {
        [2.5, 5.0, 7.5, 10.0]
            .iter()
            .map(|&t| BenchRecord {
                t_bath: t,
                t_sim: 10.0 * t,
                wall_time: f(t),
                preparation_time: 0.0,
                chain_length: (2.0 * t) as usize,
                learn_steps: (10.0 * t) as usize,
                propagation: vec![(100, 0.001), (200, 0.002), (400, 0.004)],
                fitted_c: None,
                propagation_slope: None,
            })
            .collect()
    }

    #[test]
    fn exact_quadratic_gives_the_constant() {
        let fit = fit_scaling(&records(|t| 3.0 * t * t)).unwrap();
        assert!((fit.c - 3.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(!fit.linear_contamination);
        assert!((fit.propagation.slope - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn linear_contamination_is_flagged() {
        let fit = fit_scaling(&records(|t| 3.0 * t * t + 0.1 * t)).unwrap();
        assert!(fit.r_squared < 1.0);
        assert!(fit.linear_contamination);
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        let mut r = records(|t| t * t);
        for x in &mut r {
            x.t_bath = 1.0;
        }
        assert!(matches!(fit_scaling(&r), Err(Error::Fit(_))));
        assert!(matches!(
            fit_scaling(&records(|t| t * t)[..3]),
            Err(Error::Fit(_))
        ));
    }
}
