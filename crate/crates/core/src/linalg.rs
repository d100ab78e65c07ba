//! Dense complex linear algebra shared by every module.
//!
//! Density matrices are vectorized column-major: `vec(ρ)[i + j·n] = ρ[i, j]`,
//! so `vec(A X B) = (Bᵀ ⊗ A) vec(X)`. Superoperators are plain matrices on
//! that space.

use faer::{Mat, MatRef, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Mat<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn zeros(rows: usize, cols: usize) -> CMat {
    Mat::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMat {
    Mat::identity(n, n)
}

pub fn from_real(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> CMat {
    Mat::from_fn(rows, cols, |i, j| C64::new(f(i, j), 0.0))
}

pub fn from_rows(rows: &[&[C64]]) -> CMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

pub fn scale(a: MatRef<'_, C64>, s: C64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn adjoint(a: MatRef<'_, C64>) -> CMat {
    a.adjoint().to_owned()
}

pub fn trace(a: MatRef<'_, C64>) -> C64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// Frobenius norm.
pub fn fro(a: MatRef<'_, C64>) -> f64 {
    a.norm_l2()
}

pub fn max_abs_diff(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

pub fn hermitize(a: MatRef<'_, C64>) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        (a[(i, j)] + a[(j, i)].conj()) * 0.5
    })
}

pub fn kron(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> CMat {
    let (br, bc) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * br, a.ncols() * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Kronecker product of a list, leftmost factor slowest.
pub fn kron_all(factors: &[CMat]) -> CMat {
    let mut out = identity(1);
    for f in factors {
        out = kron(out.as_ref(), f.as_ref());
    }
    out
}

/// Column-major vectorization.
pub fn vec_of(rho: MatRef<'_, C64>) -> Vec<C64> {
    let n = rho.nrows();
    let m = rho.ncols();
    let mut v = Vec::with_capacity(n * m);
    for j in 0..m {
        for i in 0..n {
            v.push(rho[(i, j)]);
        }
    }
    v
}

pub fn unvec(v: &[C64], n: usize) -> CMat {
    assert_eq!(v.len(), n * n, "vector length is not a square");
    Mat::from_fn(n, n, |i, j| v[i + j * n])
}

pub fn mat_vec(a: MatRef<'_, C64>, x: &[C64]) -> Vec<C64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![ZERO; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == ZERO {
            continue;
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += a[(i, j)] * xj;
        }
    }
    y
}

/// Superoperator of `X ↦ A X B`.
pub fn sandwich_superop(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> CMat {
    kron(b.transpose(), a)
}

/// Superoperator of `X ↦ H X − X H`.
pub fn commutator_superop(h: MatRef<'_, C64>) -> CMat {
    let n = h.nrows();
    let id = identity(n);
    let left = kron(id.as_ref(), h);
    let right = kron(h.transpose(), id.as_ref());
    &left - &right
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// The argument is scaled until its 1-norm is below 1/2; the series is then
/// summed until the next term no longer changes the result.
pub fn expm(a: MatRef<'_, C64>) -> CMat {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut s = 1.0;
    while norm1 * s > 0.5 {
        s *= 0.5;
        squarings += 1;
    }
    let scaled = scale(a, C64::new(s, 0.0));
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=40 {
        term = &term * &scaled;
        term = scale(term.as_ref(), C64::new(1.0 / k as f64, 0.0));
        let size = fro(term.as_ref());
        result = &result + &term;
        if size <= f64::EPSILON * fro(result.as_ref()) * 1e-2 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Eigendecomposition of a Hermitian matrix: eigenvalues ascending and the
/// unitary of eigenvectors (columns).
pub fn eigh(h: MatRef<'_, C64>) -> Result<(Vec<f64>, CMat)> {
    let herm = hermitize(h);
    let evd = herm
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("hermitian eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let vals = (0..s.nrows()).map(|i| s[i].re).collect();
    Ok((vals, evd.U().to_owned()))
}

/// `f(H)` for Hermitian `H` evaluated in its eigenbasis.
pub fn hermitian_function(h: MatRef<'_, C64>, f: impl Fn(f64) -> C64) -> Result<CMat> {
    let (vals, u) = eigh(h)?;
    let n = vals.len();
    let mut scaled = u.clone();
    for (j, &v) in vals.iter().enumerate() {
        let fj = f(v);
        for i in 0..n {
            scaled[(i, j)] *= fj;
        }
    }
    Ok(&scaled * u.adjoint())
}

/// `exp(−i H t)` for Hermitian `H`.
pub fn unitary_propagator(h: MatRef<'_, C64>, t: f64) -> Result<CMat> {
    hermitian_function(h, |e| C64::from_polar(1.0, -e * t))
}

/// Trace distance `½‖ρ − σ‖₁` of two Hermitian matrices.
pub fn trace_distance(rho: MatRef<'_, C64>, sigma: MatRef<'_, C64>) -> f64 {
    let diff = rho - sigma;
    match eigh(diff.as_ref()) {
        Ok((vals, _)) => 0.5 * vals.iter().map(|v| v.abs()).sum::<f64>(),
        Err(_) => f64::NAN,
    }
}

/// Moore–Penrose-free inverse for small well-conditioned matrices, with the
/// 2-norm condition number reported alongside.
pub fn inverse_with_condition(a: MatRef<'_, C64>) -> Result<(CMat, f64)> {
    let n = a.nrows();
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let smax = (0..n).map(|i| s[i].re).fold(0.0, f64::max);
    let smin = (0..n).map(|i| s[i].re).fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !cond.is_finite() {
        return Ok((zeros(n, n), cond));
    }
    let u = svd.U();
    let v = svd.V();
    let mut vs = v.to_owned();
    for j in 0..n {
        let inv = C64::new(1.0 / s[j].re, 0.0);
        for i in 0..n {
            vs[(i, j)] *= inv;
        }
    }
    Ok((&vs * u.adjoint(), cond))
}

/// Ladder operator `b` truncated to `d` Fock levels.
pub fn annihilation(d: usize) -> CMat {
    from_real(
        d,
        d,
        |i, j| if j == i + 1 { (j as f64).sqrt() } else { 0.0 },
    )
}

pub fn number_op(d: usize) -> CMat {
    from_real(d, d, |i, j| if i == j { i as f64 } else { 0.0 })
}

/// Orthonormal Hermitian traceless basis (generalized Gell-Mann matrices),
/// normalized to `tr(GₐG_b) = δₐ_b`.
pub fn gell_mann_basis(n: usize) -> Vec<CMat> {
    let mut out = Vec::with_capacity(n * n - 1);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut x = zeros(n, n);
            x[(i, j)] = C64::new(r, 0.0);
            x[(j, i)] = C64::new(r, 0.0);
            out.push(x);
            let mut y = zeros(n, n);
            y[(i, j)] = C64::new(0.0, -r);
            y[(j, i)] = C64::new(0.0, r);
            out.push(y);
        }
    }
    for l in 1..n {
        let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
        let mut z = zeros(n, n);
        for k in 0..l {
            z[(k, k)] = C64::new(norm, 0.0);
        }
        z[(l, l)] = C64::new(-(l as f64) * norm, 0.0);
        out.push(z);
    }
    out
}

/// Checks that `rho` is a density matrix within `tol`.
pub fn validate_density(rho: MatRef<'_, C64>, tol: f64) -> Result<()> {
    if rho.nrows() != rho.ncols() {
        return Err(Error::Validation("density matrix must be square".into()));
    }
    let herm_err = fro((rho - rho.adjoint()).as_ref());
    if herm_err > tol {
        return Err(Error::Validation(format!(
            "density matrix is not Hermitian (‖ρ−ρ†‖ = {herm_err:.3e})"
        )));
    }
    let tr = trace(rho);
    if (tr - ONE).norm() > tol {
        return Err(Error::Validation(format!(
            "density matrix trace is {:.6} instead of 1",
            tr.re
        )));
    }
    let (vals, _) = eigh(rho)?;
    if let Some(&min) = vals.first() {
        if min < -tol {
            return Err(Error::Validation(format!(
                "density matrix is not positive semidefinite (min eigenvalue {min:.3e})"
            )));
        }
    }
    Ok(())
}

/// Pure-state projector `|ψ⟩⟨ψ|` for a normalized vector.
pub fn projector(psi: &[C64]) -> CMat {
    let n = psi.len();
    Mat::from_fn(n, n, |i, j| psi[i] * psi[j].conj())
}

/// Partial trace over everything except subsystem `keep` of a tensor-product
/// space with local dimensions `dims` (leftmost slowest).
pub fn partial_trace_keep(rho: MatRef<'_, C64>, dims: &[usize], keep: usize) -> CMat {
    let total: usize = dims.iter().product();
    assert_eq!(rho.nrows(), total);
    let dk = dims[keep];
    let inner: usize = dims[keep + 1..].iter().product();
    let outer: usize = dims[..keep].iter().product();
    let mut out = zeros(dk, dk);
    for o in 0..outer {
        for r in 0..inner {
            for a in 0..dk {
                let row = (o * dk + a) * inner + r;
                for b in 0..dk {
                    let col = (o * dk + b) * inner + r;
                    out[(a, b)] += rho[(row, col)];
                }
            }
        }
    }
    out
}
