use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{trace_distance, CMat, C64};

/// Reduced system density matrices sampled at `t_k = k·dt`, `states[0]` being
/// the initial state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<CMat>,
}

impl Trajectory {
    pub fn new(dt: f64, initial: CMat) -> Self {
        Self {
            dt,
            states: vec![initial],
        }
    }

    pub fn dim(&self) -> usize {
        self.states[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(&mut self, rho: CMat) {
        self.states.push(rho);
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn population(&self, level: usize) -> Vec<f64> {
        self.states.iter().map(|r| r[(level, level)].re).collect()
    }

    /// Largest trace distance over the common prefix of two trajectories.
    pub fn max_trace_distance(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| trace_distance(a.as_ref(), b.as_ref()))
            .fold(0.0, f64::max)
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self {
            dt: self.dt,
            states: self.states[..len.min(self.len())].to_vec(),
        }
    }

    /// CSV with header `t,re_rho_00,im_rho_00,…` (row-major flattening).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv_to(&mut f)
    }

    pub fn write_csv_to(&self, w: &mut impl Write) -> Result<()> {
        let n = self.dim();
        writeln!(w, "# units: time in 1/eps")?;
        let mut header = String::from("t");
        for i in 0..n {
            for j in 0..n {
                header.push_str(&format!(",re_rho_{i}{j},im_rho_{i}{j}"));
            }
        }
        writeln!(w, "{header}")?;
        for (k, rho) in self.states.iter().enumerate() {
            let mut line = format!("{:.17e}", self.time(k));
            for i in 0..n {
                for j in 0..n {
                    let z = rho[(i, j)];
                    line.push_str(&format!(",{:.17e},{:.17e}", z.re, z.im));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut dim = None;
        for line in f.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('t') {
                let cols = line.split(',').count() - 1;
                let n = ((cols / 2) as f64).sqrt().round() as usize;
                if n * n * 2 != cols {
                    return Err(Error::Validation(format!("bad trajectory header `{line}`")));
                }
                dim = Some(n);
                continue;
            }
            let n = dim.ok_or_else(|| Error::Validation("trajectory CSV lacks a header".into()))?;
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Validation(format!("trajectory CSV: {e}")))?;
            if vals.len() != 1 + 2 * n * n {
                return Err(Error::Validation(
                    "trajectory row has the wrong width".into(),
                ));
            }
            times.push(vals[0]);
            states.push(CMat::from_fn(n, n, |i, j| {
                let k = 1 + 2 * (i * n + j);
                C64::new(vals[k], vals[k + 1])
            }));
        }
        if states.is_empty() {
            return Err(Error::Validation("trajectory CSV has no rows".into()));
        }
        let dt = if times.len() > 1 {
            times[1] - times[0]
        } else {
            0.0
        };
        Ok(Self { dt, states })
    }
}

/// Per-run record written next to a trajectory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub total_discarded_weight: f64,
    pub max_bond_reached: usize,
    pub clipped_singular_values: usize,
    pub log_norm_correction: f64,
    pub max_hermitization_correction: f64,
    pub max_top_level_population: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_real;

    #[test]
    fn csv_round_trip() {
        let mut t = Trajectory::new(0.1, from_real(2, 2, |i, j| if i == j { 0.5 } else { 0.0 }));
        t.push(CMat::from_fn(2, 2, |i, j| {
            C64::new(0.25 * (i + j) as f64, 0.125 * i as f64 - 0.1 * j as f64)
        }));
        let dir = std::env::temp_dir().join(format!("traj-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("t.csv");
        t.write_csv(&p).unwrap();
        let back = Trajectory::read_csv(&p).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in t.states.iter().zip(&back.states) {
            assert_eq!(a, b);
        }
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("t,re_rho_00,im_rho_00,re_rho_01"));
    }
}
