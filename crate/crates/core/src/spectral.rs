//! Spectral densities and their orthogonal-polynomial chain mapping.
//!
//! The bath measure is `dμ(x) = J(x)/π dx` on `[0, ω_hc]` (linear dispersion),
//! whose monic recurrence coefficients `(αₖ, βₖ)` define a nearest-neighbour
//! chain: site frequencies `ωₙ = αₙ`, hoppings `√βₙ₊₁` and a system coupling
//! `√β₀`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_adaptive, GaussRule};

/// Relative tolerance of `reorganization_energy`.
pub const QUADRATURE_TOL: f64 = 1e-9;
/// Grid refinement stops once no coefficient moves by more than this.
pub const RECURRENCE_TOL: f64 = 1e-10;

const NODES_PER_PANEL: usize = 24;
const MAX_PANELS: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityKind {
    /// `λγω / (ω² + γ²)`
    DrudeLorentz { lambda: f64, gamma: f64 },
    /// `λ ωˢ e^{−ω/ω_c}`
    PowerLawExp { lambda: f64, s: f64, omega_c: f64 },
    /// Linear interpolation of `(ω, J)` samples, zero outside the grid.
    Tabulated { omega: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    #[serde(flatten)]
    pub kind: DensityKind,
    /// Hard cutoff `ω_hc`.
    pub cutoff: f64,
}

impl SpectralDensity {
    pub fn drude_lorentz(lambda: f64, gamma: f64, cutoff: f64) -> Result<Self> {
        Self::new(DensityKind::DrudeLorentz { lambda, gamma }, cutoff)
    }

    pub fn power_law_exp(lambda: f64, s: f64, omega_c: f64, cutoff: f64) -> Result<Self> {
        Self::new(DensityKind::PowerLawExp { lambda, s, omega_c }, cutoff)
    }

    pub fn tabulated(omega: Vec<f64>, values: Vec<f64>, cutoff: f64) -> Result<Self> {
        Self::new(DensityKind::Tabulated { omega, values }, cutoff)
    }

    pub fn new(kind: DensityKind, cutoff: f64) -> Result<Self> {
        let j = Self { kind, cutoff };
        j.validate()?;
        Ok(j)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::Validation(format!(
                "hard cutoff must be positive, got {}",
                self.cutoff
            )));
        }
        match &self.kind {
            DensityKind::DrudeLorentz { lambda, gamma } => {
                if *lambda < 0.0 || *gamma <= 0.0 {
                    return Err(Error::Validation(
                        "drude_lorentz needs lambda >= 0 and gamma > 0".into(),
                    ));
                }
            }
            DensityKind::PowerLawExp { lambda, s, omega_c } => {
                if *lambda < 0.0 || *s <= 0.0 || *omega_c <= 0.0 {
                    return Err(Error::Validation(
                        "power_law_exp needs lambda >= 0, s > 0 and omega_c > 0".into(),
                    ));
                }
            }
            DensityKind::Tabulated { omega, values } => {
                if omega.len() != values.len() || omega.len() < 2 {
                    return Err(Error::Validation(
                        "tabulated density needs at least two (omega, J) pairs".into(),
                    ));
                }
                if omega[0] < 0.0 {
                    return Err(Error::Validation("tabulated grid starts below zero".into()));
                }
                if let Some(i) = omega.windows(2).position(|w| !(w[1] > w[0])) {
                    return Err(Error::Validation(format!(
                        "tabulated grid is not strictly increasing at row {}",
                        i + 1
                    )));
                }
                if let Some(i) = values.iter().position(|v| !(*v >= 0.0)) {
                    return Err(Error::Validation(format!(
                        "tabulated density is negative or NaN at row {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loads a two-column `omega,J` CSV.
    pub fn from_csv(path: impl AsRef<Path>, cutoff: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "omega" || &headers[1] != "J" {
            return Err(Error::Validation(format!(
                "expected header `omega,J`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut omega = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Validation(format!("row {}: {e}", row + 1)))
            };
            omega.push(parse(&rec[0])?);
            values.push(parse(&rec[1])?);
        }
        Self::tabulated(omega, values, cutoff)
    }

    /// `J(ω)`, zero beyond the hard cutoff.
    pub fn evaluate(&self, omega: f64) -> Result<f64> {
        if omega < 0.0 || omega.is_nan() {
            return Err(Error::Domain(format!("J(ω) needs ω ≥ 0, got {omega}")));
        }
        Ok(self.eval_unchecked(omega))
    }

    pub(crate) fn eval_unchecked(&self, omega: f64) -> f64 {
        if omega > self.cutoff {
            return 0.0;
        }
        match &self.kind {
            DensityKind::DrudeLorentz { lambda, gamma } => {
                lambda * gamma * omega / (omega * omega + gamma * gamma)
            }
            DensityKind::PowerLawExp { lambda, s, omega_c } => {
                if omega == 0.0 {
                    0.0
                } else {
                    lambda * omega.powf(*s) * (-omega / omega_c).exp()
                }
            }
            DensityKind::Tabulated {
                omega: grid,
                values,
            } => interpolate(grid, values, omega),
        }
    }

    /// Upper end of the support actually used: the cutoff, or the last grid
    /// point when a table ends earlier.
    fn support_end(&self) -> f64 {
        match &self.kind {
            DensityKind::Tabulated { omega, .. } => self.cutoff.min(*omega.last().unwrap()),
            _ => self.cutoff,
        }
    }

    /// `∫₀^{ω_hc} J(ω) dω`.
    pub fn reorganization_energy(&self) -> Result<f64> {
        match &self.kind {
            DensityKind::Tabulated { omega, values } => {
                Ok(trapezoid_clipped(omega, values, self.cutoff))
            }
            _ => {
                // x = ω_hc t² removes the √ω-type endpoint behaviour.
                let wc = self.cutoff;
                integrate_adaptive(
                    |t| 2.0 * wc * t * self.eval_unchecked(wc * t * t),
                    0.0,
                    1.0,
                    QUADRATURE_TOL,
                )
            }
        }
    }

    /// Discretization of `J(x)/π dx` used by the Stieltjes procedure.
    fn discretize(&self, panels: usize, n_coeffs: usize) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::new();
        let mut ws = Vec::new();
        match &self.kind {
            DensityKind::Tabulated { omega, .. } => {
                // Per grid interval the integrand is a polynomial of degree
                // 2n+1, so n+2 nodes are exact; `panels` subdivides further
                // only to confirm convergence.
                let rule = GaussRule::new(n_coeffs + 2);
                let sub = (panels / 8).max(1);
                let end = self.support_end();
                for w in omega.windows(2) {
                    let (a, b) = (w[0], w[1].min(end));
                    if b <= a {
                        break;
                    }
                    let h = (b - a) / sub as f64;
                    for k in 0..sub {
                        rule.push_panel(a + k as f64 * h, a + (k + 1) as f64 * h, &mut xs, &mut ws);
                    }
                }
                for (x, w) in xs.iter().zip(ws.iter_mut()) {
                    *w *= self.eval_unchecked(*x) / std::f64::consts::PI;
                }
            }
            _ => {
                let rule = GaussRule::new(NODES_PER_PANEL);
                let wc = self.cutoff;
                let h = 1.0 / panels as f64;
                let mut ts = Vec::new();
                let mut tw = Vec::new();
                for k in 0..panels {
                    rule.push_panel(k as f64 * h, (k + 1) as f64 * h, &mut ts, &mut tw);
                }
                for (t, w) in ts.into_iter().zip(tw) {
                    let x = wc * t * t;
                    let weight = w * 2.0 * wc * t * self.eval_unchecked(x) / std::f64::consts::PI;
                    xs.push(x);
                    ws.push(weight);
                }
            }
        }
        (xs, ws)
    }
}

fn interpolate(grid: &[f64], values: &[f64], x: f64) -> f64 {
    if x < grid[0] || x > *grid.last().unwrap() {
        return 0.0;
    }
    let idx = grid.partition_point(|&g| g <= x);
    if idx == 0 {
        return values[0];
    }
    if idx >= grid.len() {
        return *values.last().unwrap();
    }
    let (x0, x1) = (grid[idx - 1], grid[idx]);
    let (y0, y1) = (values[idx - 1], values[idx]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Trapezoid sum of the linear interpolant, clipped at `cutoff`. Exact for
/// piecewise-linear data, so the Richardson correction vanishes identically.
fn trapezoid_clipped(grid: &[f64], values: &[f64], cutoff: f64) -> f64 {
    let mut total = 0.0;
    for i in 1..grid.len() {
        let (a, b) = (grid[i - 1], grid[i]);
        if a >= cutoff {
            break;
        }
        let (ya, mut yb, mut bb) = (values[i - 1], values[i], b);
        if b > cutoff {
            yb = interpolate(grid, values, cutoff);
            bb = cutoff;
        }
        total += 0.5 * (ya + yb) * (bb - a);
    }
    total
}

/// Monic recurrence coefficients of the bath measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCoefficients {
    pub alpha: Vec<f64>,
    /// `beta[0]` is the total mass of the measure.
    pub beta: Vec<f64>,
}

impl ChainCoefficients {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Discretized Stieltjes procedure on nodes `xs` with weights `ws`, run in
/// orthonormal form: `√βₖ₊₁ qₖ₊₁ = (x − αₖ) qₖ − √βₖ qₖ₋₁` with `‖qₖ‖ = 1`.
pub fn stieltjes(xs: &[f64], ws: &[f64], n: usize) -> Result<ChainCoefficients> {
    let mass: f64 = ws.iter().sum();
    if !(mass > f64::MIN_POSITIVE) || !mass.is_finite() {
        return Err(Error::DegenerateMeasure(mass));
    }
    let m = xs.len();
    let mut alpha = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    beta.push(mass);
    let mut q_prev = vec![0.0; m];
    let mut q = vec![1.0 / mass.sqrt(); m];
    for k in 0..n {
        let a: f64 = (0..m).map(|i| ws[i] * xs[i] * q[i] * q[i]).sum();
        alpha.push(a);
        if k + 1 == n {
            break;
        }
        let sb = if k == 0 { 0.0 } else { beta[k].sqrt() };
        let r: Vec<f64> = (0..m)
            .map(|i| (xs[i] - a) * q[i] - sb * q_prev[i])
            .collect();
        let b_next: f64 = (0..m).map(|i| ws[i] * r[i] * r[i]).sum();
        // Relative to the mass scale, anything below roundoff is a lost
        // degree of freedom of the discrete measure.
        let floor = 1e-13 * (a * a).max(beta[k]);
        if !(b_next > floor) || !b_next.is_finite() {
            return Err(Error::Stability {
                index: k + 1,
                value: b_next,
            });
        }
        beta.push(b_next);
        let inv = 1.0 / b_next.sqrt();
        q_prev = q;
        q = r.into_iter().map(|v| v * inv).collect();
    }
    Ok(ChainCoefficients { alpha, beta })
}

/// Recurrence coefficients `(αₖ, βₖ)`, `k = 0..n`, with the quadrature grid
/// doubled until the coefficients are stable to `RECURRENCE_TOL`.
pub fn recurrence_coefficients(j: &SpectralDensity, n: usize) -> Result<ChainCoefficients> {
    if n == 0 {
        return Err(Error::Validation("need at least one chain site".into()));
    }
    j.validate()?;
    let mut panels = 8usize;
    let (xs, ws) = j.discretize(panels, n);
    let mut prev = stieltjes(&xs, &ws, n)?;
    loop {
        panels *= 2;
        let (xs, ws) = j.discretize(panels, n);
        let next = stieltjes(&xs, &ws, n)?;
        let change = max_relative_change(&prev, &next);
        if change <= RECURRENCE_TOL {
            log::debug!(
                "stieltjes converged with {} nodes (change {change:.2e})",
                xs.len()
            );
            return Ok(next);
        }
        if panels >= MAX_PANELS {
            return Err(Error::Quadrature { achieved: change });
        }
        prev = next;
    }
}

fn max_relative_change(a: &ChainCoefficients, b: &ChainCoefficients) -> f64 {
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE);
    a.alpha
        .iter()
        .zip(&b.alpha)
        .chain(a.beta.iter().zip(&b.beta))
        .map(|(&x, &y)| rel(x, y))
        .fold(0.0, f64::max)
}

/// Parameters of the nearest-neighbour chain Hamiltonian
/// `H = H_sys + c A (b₀ + b₀†) + Σ ωₙ bₙ†bₙ + Σ tₙ (bₙ†bₙ₊₁ + h.c.)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    /// System–chain coupling `√β₀`.
    pub coupling: f64,
    /// Site frequencies `ωₙ = αₙ`.
    pub frequencies: Vec<f64>,
    /// `hopping[n]` couples sites `n` and `n+1`, equal to `√βₙ₊₁`.
    pub hopping: Vec<f64>,
}

impl ChainParams {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// A chain with every coupling zero; the system evolves in isolation.
    pub fn decoupled(n: usize) -> Self {
        Self {
            coupling: 0.0,
            frequencies: vec![0.0; n],
            hopping: vec![0.0; n.saturating_sub(1)],
        }
    }

    /// Homogeneous chain, used by the recurrence probe.
    pub fn uniform(n: usize, frequency: f64, hopping: f64, coupling: f64) -> Self {
        Self {
            coupling,
            frequencies: vec![frequency; n],
            hopping: vec![hopping; n.saturating_sub(1)],
        }
    }

    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            coupling: self.coupling,
            frequencies: self.frequencies[..n].to_vec(),
            hopping: self.hopping[..n.saturating_sub(1)].to_vec(),
        }
    }

    /// `η` array with the system coupling first: `[√β₀, √β₁, …]`.
    pub fn eta(&self) -> Vec<f64> {
        std::iter::once(self.coupling)
            .chain(self.hopping.iter().copied())
            .collect()
    }
}

/// Maps recurrence coefficients onto chain parameters (`g(x) = x`).
pub fn chain_hamiltonian(c: &ChainCoefficients) -> Result<ChainParams> {
    if c.alpha.len() != c.beta.len() || c.alpha.is_empty() {
        return Err(Error::InvalidCoefficients(
            "alpha and beta must be non-empty and of equal length".into(),
        ));
    }
    if !(c.beta[0] >= 0.0) {
        return Err(Error::InvalidCoefficients(format!(
            "beta[0] = {} < 0",
            c.beta[0]
        )));
    }
    if let Some((k, b)) = c
        .beta
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, b)| !(**b > 0.0))
    {
        return Err(Error::InvalidCoefficients(format!(
            "beta[{k}] = {b} is not positive"
        )));
    }
    Ok(ChainParams {
        coupling: c.beta[0].sqrt(),
        frequencies: c.alpha.clone(),
        hopping: c.beta[1..].iter().map(|b| b.sqrt()).collect(),
    })
}

/// Writes `n,alpha,beta,omega,eta`, where `eta[0]` is the system coupling
/// and `eta[n]` the hopping between sites `n−1` and `n`.
pub fn write_chain_csv(
    path: impl AsRef<Path>,
    c: &ChainCoefficients,
    p: &ChainParams,
) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# units: energy in eps")?;
    writeln!(f, "n,alpha,beta,omega,eta")?;
    let eta = p.eta();
    for k in 0..c.len() {
        writeln!(
            f,
            "{k},{:.17e},{:.17e},{:.17e},{:.17e}",
            c.alpha[k], c.beta[k], p.frequencies[k], eta[k]
        )?;
    }
    Ok(())
}
