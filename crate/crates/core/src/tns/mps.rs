//! Matrix-product state with a single orthogonality center.
//!
//! Each site tensor is stored row-major with shape `(left, local, right)`,
//! where `local = phys · anc` fuses the physical index with its purifying
//! ancilla (ancilla fastest). Sites left of the center are left-canonical,
//! sites right of it right-canonical.

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64, ZERO};

#[derive(Debug, Clone)]
pub struct SiteTensor {
    pub data: Vec<C64>,
    pub left: usize,
    pub local: usize,
    pub right: usize,
}

impl SiteTensor {
    pub fn new(left: usize, local: usize, right: usize) -> Self {
        Self {
            data: vec![ZERO; left * local * right],
            left,
            local,
            right,
        }
    }

    #[inline]
    pub fn idx(&self, l: usize, s: usize, r: usize) -> usize {
        (l * self.local + s) * self.right + r
    }

    /// `(left·local) × right` view.
    fn as_left_matrix(&self) -> MatRef<'_, C64> {
        MatRef::from_row_major_slice(&self.data, self.left * self.local, self.right)
    }

    /// `left × (local·right)` view.
    fn as_right_matrix(&self) -> MatRef<'_, C64> {
        MatRef::from_row_major_slice(&self.data, self.left, self.local * self.right)
    }

    fn from_matrix(m: MatRef<'_, C64>, left: usize, local: usize, right: usize) -> Self {
        debug_assert_eq!(m.nrows() * m.ncols(), left * local * right);
        let cols = m.ncols();
        let mut data = Vec::with_capacity(left * local * right);
        for i in 0..m.nrows() {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self {
            data,
            left,
            local,
            right,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    /// Reverses the bond orientation, for mirroring a chain.
    pub fn mirrored(&self) -> Self {
        let mut out = Self::new(self.right, self.local, self.left);
        for l in 0..self.left {
            for s in 0..self.local {
                for r in 0..self.right {
                    let v = self.data[self.idx(l, s, r)];
                    let k = out.idx(r, s, l);
                    out.data[k] = v;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// Leaves `U` on the left site and `S V†` on the right (center moves right).
    Right,
    /// Leaves `U S` on the left site and `V†` on the right (center moves left).
    Left,
}

/// What a single two-site truncation discarded.
#[derive(Debug, Clone, Copy, Default)]
pub struct SvdTruncation {
    pub discarded_weight: f64,
    pub kept: usize,
    pub clipped_by_floor: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TruncationPolicy {
    pub max_bond: usize,
    pub floor: f64,
    pub max_block_elems: usize,
    /// Use a sketched SVD when the kept rank is small against the block.
    pub sketch: bool,
}

#[derive(Debug, Clone)]
pub struct Mps {
    pub sites: Vec<SiteTensor>,
    pub phys: Vec<usize>,
    pub anc: Vec<usize>,
    pub center: usize,
}

impl Mps {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.sites
            .iter()
            .take(self.len().saturating_sub(1))
            .map(|s| s.right)
            .collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Product state from per-site `(phys × anc)` coefficient matrices.
    pub fn product(locals: &[CMat]) -> Self {
        let mut sites = Vec::with_capacity(locals.len());
        let mut phys = Vec::new();
        let mut anc = Vec::new();
        for m in locals {
            let (p, a) = (m.nrows(), m.ncols());
            let mut t = SiteTensor::new(1, p * a, 1);
            for i in 0..p {
                for j in 0..a {
                    t.data[i * a + j] = m[(i, j)];
                }
            }
            sites.push(t);
            phys.push(p);
            anc.push(a);
        }
        Self {
            sites,
            phys,
            anc,
            center: 0,
        }
    }

    /// Concatenates chains of MPS; bonds at the seams have dimension one.
    pub fn concat(parts: Vec<Mps>) -> Self {
        let mut out = Mps {
            sites: Vec::new(),
            phys: Vec::new(),
            anc: Vec::new(),
            center: 0,
        };
        for p in parts {
            out.sites.extend(p.sites);
            out.phys.extend(p.phys);
            out.anc.extend(p.anc);
        }
        out
    }

    pub fn mirrored(&self) -> Self {
        Mps {
            sites: self.sites.iter().rev().map(SiteTensor::mirrored).collect(),
            phys: self.phys.iter().rev().copied().collect(),
            anc: self.anc.iter().rev().copied().collect(),
            center: self.len() - 1 - self.center,
        }
    }

    /// Brings the state into mixed-canonical form with the center at the
    /// last site, regardless of its current form.
    pub fn canonicalize(&mut self) {
        self.center = 0;
        for i in 0..self.len().saturating_sub(1) {
            self.shift_right(i);
        }
        self.center = self.len() - 1;
    }

    pub fn move_center(&mut self, target: usize) {
        while self.center < target {
            self.shift_right(self.center);
            self.center += 1;
        }
        while self.center > target {
            self.shift_left(self.center);
            self.center -= 1;
        }
    }

    fn shift_right(&mut self, i: usize) {
        let a = &self.sites[i];
        let (l, s) = (a.left, a.local);
        let qr = a.as_left_matrix().qr();
        let q = qr.compute_thin_Q();
        let r = qr.thin_R().to_owned();
        let k = q.ncols();
        self.sites[i] = SiteTensor::from_matrix(q.as_ref(), l, s, k);
        let next = &self.sites[i + 1];
        let (s2, r2) = (next.local, next.right);
        let merged = &r * next.as_right_matrix();
        self.sites[i + 1] = SiteTensor::from_matrix(merged.as_ref(), k, s2, r2);
    }

    fn shift_left(&mut self, i: usize) {
        let a = &self.sites[i];
        let (s, r) = (a.local, a.right);
        // A = R† Q† from the QR of A†
        let ad = a.as_right_matrix().adjoint().to_owned();
        let qr = ad.qr();
        let q = qr.compute_thin_Q();
        let rr = qr.thin_R().to_owned();
        let k = q.ncols();
        let qd = q.adjoint().to_owned();
        self.sites[i] = SiteTensor::from_matrix(qd.as_ref(), k, s, r);
        let prev = &self.sites[i - 1];
        let (l0, s0) = (prev.left, prev.local);
        let merged = prev.as_left_matrix() * rr.adjoint();
        self.sites[i - 1] = SiteTensor::from_matrix(merged.as_ref(), l0, s0, k);
    }

    /// Applies a two-site gate to sites `b, b+1` and splits the result with a
    /// truncated SVD. `phys` acts on the pair of physical indices, `anc` (if
    /// any) on the pair of ancilla indices. The center must sit on `b` or `b+1`.
    pub fn apply_two_site(
        &mut self,
        b: usize,
        phys: &CMat,
        anc: Option<&CMat>,
        sweep: Sweep,
        policy: &TruncationPolicy,
    ) -> Result<SvdTruncation> {
        debug_assert!(self.center == b || self.center == b + 1);
        let (l, s1, m) = (self.sites[b].left, self.sites[b].local, self.sites[b].right);
        let (s2, r) = (self.sites[b + 1].local, self.sites[b + 1].right);
        let block = l * s1 * s2 * r;
        if block > policy.max_block_elems {
            return Err(Error::Resource(format!(
                "two-site block of {block} elements at bond {b} exceeds the budget of {}",
                policy.max_block_elems
            )));
        }
        debug_assert_eq!(m, self.sites[b + 1].left);
        let theta = self.sites[b].as_left_matrix() * self.sites[b + 1].as_right_matrix();
        let mut flat = Vec::with_capacity(block);
        for i in 0..l * s1 {
            for j in 0..s2 * r {
                flat.push(theta[(i, j)]);
            }
        }
        let dims = [
            l,
            self.phys[b],
            self.anc[b],
            self.phys[b + 1],
            self.anc[b + 1],
            r,
        ];
        apply_pair(&mut flat, &dims, 1, 3, phys);
        if let Some(g) = anc {
            apply_pair(&mut flat, &dims, 2, 4, g);
        }
        let theta2 = MatRef::from_row_major_slice(&flat, l * s1, s2 * r);
        let (u, sv, v, trunc) = truncated_svd(theta2, policy, 2 * m + 4)?;
        let k = sv.len();
        match sweep {
            Sweep::Right => {
                self.sites[b] = SiteTensor::from_matrix(u.as_ref(), l, s1, k);
                let mut rhs = v.adjoint().to_owned();
                for i in 0..k {
                    for j in 0..rhs.ncols() {
                        rhs[(i, j)] *= sv[i];
                    }
                }
                self.sites[b + 1] = SiteTensor::from_matrix(rhs.as_ref(), k, s2, r);
                self.center = b + 1;
            }
            Sweep::Left => {
                let mut lhs = u;
                for j in 0..k {
                    for i in 0..lhs.nrows() {
                        lhs[(i, j)] *= sv[j];
                    }
                }
                self.sites[b] = SiteTensor::from_matrix(lhs.as_ref(), l, s1, k);
                let rhs = v.adjoint().to_owned();
                self.sites[b + 1] = SiteTensor::from_matrix(rhs.as_ref(), k, s2, r);
                self.center = b;
            }
        }
        Ok(trunc)
    }

    /// Applies a single-site operator on the fused local index.
    pub fn apply_one_site(&mut self, i: usize, op: &CMat) {
        let t = &self.sites[i];
        let (l, s, r) = (t.left, t.local, t.right);
        let mut out = SiteTensor::new(l, s, r);
        for li in 0..l {
            for a in 0..s {
                for ri in 0..r {
                    let mut acc = ZERO;
                    for b in 0..s {
                        acc += op[(a, b)] * t.data[t.idx(li, b, ri)];
                    }
                    let k = out.idx(li, a, ri);
                    out.data[k] = acc;
                }
            }
        }
        self.sites[i] = out;
    }

    /// Squared norm of the whole state (read from the center tensor).
    pub fn norm_sqr(&self) -> f64 {
        self.sites[self.center].norm_sqr()
    }

    pub fn normalize(&mut self) -> f64 {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            self.sites[self.center].scale(1.0 / n);
        }
        n
    }

    /// Physical reduced density matrix of site `i`, tracing its ancilla and
    /// the rest of the chain. Moves the center to `i`.
    pub fn site_density(&mut self, i: usize) -> CMat {
        self.move_center(i);
        let t = &self.sites[i];
        let (p, a) = (self.phys[i], self.anc[i]);
        let mut rho = Mat::<C64>::zeros(p, p);
        for l in 0..t.left {
            for r in 0..t.right {
                for x in 0..p {
                    for y in 0..p {
                        let mut acc = ZERO;
                        for k in 0..a {
                            acc += t.data[t.idx(l, x * a + k, r)]
                                * t.data[t.idx(l, y * a + k, r)].conj();
                        }
                        rho[(x, y)] += acc;
                    }
                }
            }
        }
        rho
    }
}

/// Contracts `gate` with axes `(i, j)` of a row-major six-index tensor.
fn apply_pair(data: &mut [C64], dims: &[usize; 6], i: usize, j: usize, gate: &CMat) {
    let (di, dj) = (dims[i], dims[j]);
    let pair = di * dj;
    debug_assert_eq!(gate.nrows(), pair);
    let mut strides = [0usize; 6];
    let mut acc = 1;
    for k in (0..6).rev() {
        strides[k] = acc;
        acc *= dims[k];
    }
    let rest: Vec<usize> = (0..6).filter(|&k| k != i && k != j).collect();
    let ncols = data.len() / pair;
    let mut offsets = Vec::with_capacity(ncols);
    let mut idx = [0usize; 4];
    for _ in 0..ncols {
        offsets.push(
            rest.iter()
                .zip(&idx)
                .map(|(&k, &x)| x * strides[k])
                .sum::<usize>(),
        );
        for q in (0..4).rev() {
            idx[q] += 1;
            if idx[q] < dims[rest[q]] {
                break;
            }
            idx[q] = 0;
        }
    }
    let mut x = Mat::<C64>::zeros(pair, ncols);
    for (c, &off) in offsets.iter().enumerate() {
        for p in 0..di {
            for q in 0..dj {
                x[(p * dj + q, c)] = data[off + p * strides[i] + q * strides[j]];
            }
        }
    }
    let y = gate * &x;
    for (c, &off) in offsets.iter().enumerate() {
        for p in 0..di {
            for q in 0..dj {
                data[off + p * strides[i] + q * strides[j]] = y[(p * dj + q, c)];
            }
        }
    }
}

/// Truncated SVD: exact when the block is small relative to `max_bond`,
/// otherwise a range sketch with power iterations followed by an exact SVD of
/// the projected block. The reported discarded weight is exact for the
/// factorization returned.
#[allow(clippy::type_complexity)]
pub fn truncated_svd(
    m: MatRef<'_, C64>,
    policy: &TruncationPolicy,
    hint: usize,
) -> Result<(CMat, Vec<f64>, CMat, SvdTruncation)> {
    let total: f64 = {
        let mut s = 0.0;
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                s += m[(i, j)].norm_sqr();
            }
        }
        s
    };
    if !total.is_finite() {
        return Err(Error::Numerical("NaN in two-site block".into()));
    }
    if !(total > 0.0) {
        return Err(Error::Numerical("two-site block vanished".into()));
    }
    let (u, vals, v) = factorize(m, policy, hint, total)?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("NaN in singular values".into()));
    }
    let norm = total.sqrt();
    let mut kept = 0;
    let mut clipped = 0;
    for (i, &v) in vals.iter().enumerate() {
        if i >= policy.max_bond {
            break;
        }
        if v / norm < policy.floor {
            clipped += 1;
            continue;
        }
        kept += 1;
    }
    let kept = kept.max(1);
    let kept_weight: f64 = vals[..kept].iter().map(|v| v * v).sum::<f64>() / total;
    Ok((
        u.subcols(0, kept).to_owned(),
        vals[..kept].to_vec(),
        v.subcols(0, kept).to_owned(),
        SvdTruncation {
            discarded_weight: (1.0 - kept_weight).max(0.0),
            kept,
            clipped_by_floor: clipped,
        },
    ))
}

fn sketch_rank(k: usize) -> usize {
    k + 8 + k / 4
}

/// Picks the factorization. The sketch starts from `hint` kept values and
/// widens whenever every requested value survives the floor, so the result
/// never keeps fewer values than an exact SVD would.
fn factorize(
    m: MatRef<'_, C64>,
    policy: &TruncationPolicy,
    hint: usize,
    total: f64,
) -> Result<(CMat, Vec<f64>, CMat)> {
    let small = m.nrows().min(m.ncols());
    let mut k = hint.clamp(1, policy.max_bond);
    loop {
        let rank = sketch_rank(k);
        if !policy.sketch || 2 * rank > small {
            return exact_svd(m);
        }
        let (u, vals, v) = sketched_svd(m, rank)?;
        let floor = policy.floor * total.sqrt();
        let saturated = vals.len() >= k && vals[k - 1] > floor.max(1e-14 * vals[0]);
        if !saturated || k == policy.max_bond {
            return Ok((u, vals, v));
        }
        k = (2 * k).min(policy.max_bond);
    }
}

fn exact_svd(m: MatRef<'_, C64>) -> Result<(CMat, Vec<f64>, CMat)> {
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let s = svd.S().column_vector();
    let vals = (0..s.nrows()).map(|i| s[i].re).collect();
    Ok((svd.U().to_owned(), vals, svd.V().to_owned()))
}

const POWER_ITERATIONS: usize = 1;

fn sketched_svd(m: MatRef<'_, C64>, rank: usize) -> Result<(CMat, Vec<f64>, CMat)> {
    use rand::{Rng, SeedableRng};
    // fixed seed keeps runs reproducible
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
        0x5eed ^ ((m.nrows() as u64) << 32) ^ m.ncols() as u64,
    );
    let omega = Mat::<C64>::from_fn(m.ncols(), rank, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let orth = |y: &CMat| -> CMat { y.qr().compute_thin_Q() };
    let mut q = orth(&(m * &omega));
    for _ in 0..POWER_ITERATIONS {
        let z = m.adjoint() * &q;
        q = orth(&(m * &z));
    }
    let b = q.adjoint() * m;
    let (ub, vals, v) = exact_svd(b.as_ref())?;
    Ok((&q * &ub, vals, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_real, identity};

    fn random_mps(n: usize, d: usize, chi: usize, seed: u64) -> Mps {
        let mut state = seed;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut sites = Vec::new();
        for i in 0..n {
            let l = if i == 0 { 1 } else { chi };
            let r = if i + 1 == n { 1 } else { chi };
            let mut t = SiteTensor::new(l, d, r);
            for z in &mut t.data {
                *z = C64::new(next(), next());
            }
            sites.push(t);
        }
        Mps {
            sites,
            phys: vec![d; n],
            anc: vec![1; n],
            center: 0,
        }
    }

    fn dense(m: &Mps) -> Vec<C64> {
        let mut v = vec![C64::new(1.0, 0.0)];
        let mut bond = 1;
        for t in &m.sites {
            let mut next = vec![ZERO; v.len() / bond * t.local * t.right];
            let outer = v.len() / bond;
            for o in 0..outer {
                for l in 0..bond {
                    let c = v[o * bond + l];
                    for s in 0..t.local {
                        for r in 0..t.right {
                            next[(o * t.local + s) * t.right + r] += c * t.data[t.idx(l, s, r)];
                        }
                    }
                }
            }
            v = next;
            bond = t.right;
        }
        v
    }

    #[test]
    fn canonicalization_preserves_the_state() {
        let mut m = random_mps(5, 3, 4, 7);
        let before = dense(&m);
        m.canonicalize();
        m.move_center(1);
        let after = dense(&m);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_gate_without_truncation_is_exact() {
        let mut m = random_mps(4, 2, 3, 11);
        m.canonicalize();
        m.move_center(1);
        let before = dense(&m);
        let policy = TruncationPolicy {
            max_bond: 64,
            floor: 0.0,
            max_block_elems: 1 << 20,
            sketch: false,
        };
        let t = m
            .apply_two_site(1, &identity(4), None, Sweep::Right, &policy)
            .unwrap();
        assert!(t.discarded_weight < 1e-14);
        let after = dense(&m);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn truncation_reports_discarded_weight() {
        let m = from_real(3, 3, |i, j| if i == j { [2.0, 1.0, 0.5][i] } else { 0.0 });
        let policy = TruncationPolicy {
            max_bond: 2,
            floor: 0.0,
            max_block_elems: 100,
            sketch: false,
        };
        let (_, s, _, t) = truncated_svd(m.as_ref(), &policy, 100).unwrap();
        assert_eq!(s.len(), 2);
        assert!((t.discarded_weight - 0.25 / 5.25).abs() < 1e-14);
        let floor = TruncationPolicy {
            max_bond: 3,
            floor: 0.3,
            max_block_elems: 100,
            sketch: false,
        };
        let (_, s, _, t) = truncated_svd(m.as_ref(), &floor, 100).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(t.clipped_by_floor, 1);
    }

    #[test]
    fn sketch_matches_exact_truncation_on_decaying_spectra() {
        let n = 120;
        let u = random_mps(1, n, 1, 5).sites[0].data.clone();
        let v = random_mps(1, n, 1, 9).sites[0].data.clone();
        let m = Mat::<C64>::from_fn(n, n, |i, j| {
            (0..40)
                .map(|k| u[(i + 7 * k) % n] * v[(j + 11 * k) % n] * (-(k as f64) / 2.0).exp())
                .sum()
        });
        let exact = TruncationPolicy {
            max_bond: 12,
            floor: 0.0,
            max_block_elems: 1 << 20,
            sketch: false,
        };
        let sketch = TruncationPolicy {
            sketch: true,
            ..exact
        };
        let (_, se, _, te) = truncated_svd(m.as_ref(), &exact, 12).unwrap();
        let (us, ss, vs, ts) = truncated_svd(m.as_ref(), &sketch, 2).unwrap();
        for (a, b) in se.iter().zip(&ss) {
            assert!((a - b).abs() < 1e-10 * se[0]);
        }
        assert!((te.discarded_weight - ts.discarded_weight).abs() < 1e-12);
        let mut rebuilt = us.clone();
        for j in 0..ss.len() {
            for i in 0..n {
                rebuilt[(i, j)] *= ss[j];
            }
        }
        let approx = &rebuilt * vs.adjoint();
        let err: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (approx[(i, j)] - m[(i, j)]).norm_sqr())
            .sum();
        let total: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].norm_sqr())
            .sum();
        assert!((err / total - ts.discarded_weight).abs() < 1e-10);
    }

    #[test]
    fn block_budget_is_a_resource_error() {
        let mut m = random_mps(3, 2, 2, 3);
        m.canonicalize();
        m.move_center(0);
        let policy = TruncationPolicy {
            max_bond: 8,
            floor: 0.0,
            max_block_elems: 4,
            sketch: false,
        };
        let r = m.apply_two_site(0, &identity(4), None, Sweep::Right, &policy);
        assert!(matches!(r, Err(Error::Resource(_))));
    }
}
