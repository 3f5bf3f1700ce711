//! Dense complex linear algebra for small Hermitian operators.
//!
//! Everything here works on [`CMatrix`], a row-major square complex matrix
//! whose storage stays inline for qubits (four entries) and spills to the
//! heap for larger dimensions. The only spectral routine is a cyclic complex
//! Jacobi eigensolver ([`eigh`]); square roots, support-restricted inverse
//! square roots, fractional powers and exponentials are all built on it.
//!
//! Basis convention for the qubit constants: index 0 is the excited state
//! `|e>`, index 1 is the ground state `|g>`, so `sigma_z = diag(1, -1)` and
//! `sigma_minus = |g><e|`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;
use smallvec::SmallVec;

use crate::{Error, Result};

pub type C64 = Complex64;

/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as zero; anything below is
/// reported as [`Error::NotPsd`].
pub const PSD_CLAMP: f64 = 1e-10;

/// Default relative support threshold for [`pinv_sqrt`]-style inverses.
pub const SUPPORT_REL_TOL: f64 = 1e-12;

/// Smallest trace that can still be normalised.
pub const MIN_TRACE: f64 = 1e-300;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: SmallVec<[C64; 4]>,
}

/// Density operators (possibly unnormalised).
pub type DensityMatrix = CMatrix;
/// Positive operators used as retrodictive effects.
pub type Effect = CMatrix;

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        CMatrix {
            n,
            data: SmallVec::from_elem(ZERO, n * n),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = SmallVec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        CMatrix { n, data }
    }

    /// Builds a matrix from row slices. Panics if the rows are not square.
    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "rows must form a square matrix");
        Self::from_fn(n, |i, j| rows[i][j])
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "rows must form a square matrix");
        Self::from_fn(n, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = C64::new(*v, 0.0);
        }
        m
    }

    /// `|psi><psi|` for a (not necessarily normalised) vector.
    pub fn projector(psi: &[C64]) -> Self {
        let n = psi.len();
        Self::from_fn(n, |i, j| psi[i] * psi[j].conj())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn adjoint(&self) -> Self {
        let n = self.n;
        Self::from_fn(n, |i, j| self.data[j * n + i].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    /// Real part of the trace; the imaginary part of a Hermitian trace is round-off.
    pub fn trace_re(&self) -> f64 {
        self.trace().re
    }

    pub fn scale(&self, s: f64) -> Self {
        CMatrix {
            n: self.n,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_c(&self, s: C64) -> Self {
        CMatrix {
            n: self.n,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// `(A + A^dagger) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let n = self.n;
        Self::from_fn(n, |i, j| (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5)
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.n, other.n, "dimension mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest deviation from Hermiticity, `max |A_ij - conj(A_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let d = (self.data[i * n + j] - self.data[j * n + i].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `Tr[self * other]` without forming the product.
    pub fn trace_product(&self, other: &CMatrix) -> C64 {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let n = self.n;
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * other.data[k * n + i];
            }
        }
        acc
    }

    /// `self * x * self^dagger`.
    pub fn sandwich(&self, x: &CMatrix) -> CMatrix {
        &(self * x) * &self.adjoint()
    }

    /// `self^dagger * x * self`.
    pub fn sandwich_adjoint(&self, x: &CMatrix) -> CMatrix {
        &(&self.adjoint() * x) * self
    }

    pub fn commutator(&self, other: &CMatrix) -> CMatrix {
        &(self * other) - &(other * self)
    }

    pub fn anticommutator(&self, other: &CMatrix) -> CMatrix {
        &(self * other) + &(other * self)
    }

    /// Diagonal entries (real parts).
    pub fn diagonal_re(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.n + i].re).collect()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({}x{}) [", self.n, self.n)?;
        for i in 0..self.n {
            write!(f, "  ")?;
            for j in 0..self.n {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl<'a> Mul<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &'a CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

impl<'a> Add<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &'a CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        CMatrix {
            n: self.n,
            data: self.data.iter().zip(rhs.data.iter()).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &'a CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        CMatrix {
            n: self.n,
            data: self.data.iter().zip(rhs.data.iter()).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale(-1.0)
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

// Pauli operators in the (|e>, |g>) basis.

pub fn sigma_x() -> CMatrix {
    CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

pub fn sigma_y() -> CMatrix {
    CMatrix::from_rows(&[&[ZERO, C64::new(0.0, -1.0)], &[C64::new(0.0, 1.0), ZERO]])
}

pub fn sigma_z() -> CMatrix {
    CMatrix::diag(&[1.0, -1.0])
}

/// Raising operator `|e><g|`.
pub fn sigma_plus() -> CMatrix {
    CMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]])
}

/// Lowering operator `|g><e|`.
pub fn sigma_minus() -> CMatrix {
    CMatrix::from_real_rows(&[&[0.0, 0.0], &[1.0, 0.0]])
}

pub fn excited_state() -> DensityMatrix {
    CMatrix::diag(&[1.0, 0.0])
}

pub fn ground_state() -> DensityMatrix {
    CMatrix::diag(&[0.0, 1.0])
}

/// Qubit state `(1 + r . sigma) / 2`.
pub fn from_bloch(r: [f64; 3]) -> DensityMatrix {
    let half = 0.5;
    CMatrix::from_rows(&[
        &[C64::new(half * (1.0 + r[2]), 0.0), C64::new(half * r[0], -half * r[1])],
        &[C64::new(half * r[0], half * r[1]), C64::new(half * (1.0 - r[2]), 0.0)],
    ])
}

/// Bloch components `(Tr[rho sx], Tr[rho sy], Tr[rho sz]) / Tr[rho]` of a qubit state.
pub fn bloch_vector(rho: &CMatrix) -> [f64; 3] {
    assert_eq!(rho.dim(), 2, "Bloch vectors are defined for qubits only");
    let tr = rho.trace_re();
    let off = rho[(1, 0)];
    [
        2.0 * off.re / tr,
        2.0 * off.im / tr,
        (rho[(0, 0)].re - rho[(1, 1)].re) / tr,
    ]
}

/// Spectral decomposition `M = V diag(values) V^dagger`, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    /// `V diag(f(lambda)) V^dagger`.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        CMatrix::from_fn(n, |i, j| {
            let mut acc = ZERO;
            for k in 0..n {
                if fv[k] != 0.0 {
                    acc += v[(i, k)] * v[(j, k)].conj() * fv[k];
                }
            }
            acc
        })
    }

    /// Complex-valued spectral function, `V diag(f(lambda)) V^dagger`.
    pub fn map_complex(&self, mut f: impl FnMut(f64) -> C64) -> CMatrix {
        let n = self.values.len();
        let fv: Vec<C64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        CMatrix::from_fn(n, |i, j| {
            let mut acc = ZERO;
            for k in 0..n {
                acc += v[(i, k)] * v[(j, k)].conj() * fv[k];
            }
            acc
        })
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("empty spectrum")
    }
}

/// Eigendecomposition of the Hermitian part of `m` by cyclic complex Jacobi rotations.
pub fn eigh(m: &CMatrix) -> HermitianEigen {
    let n = m.dim();
    let mut a = m.hermitian_part();
    let mut v = CMatrix::identity(n);
    let scale = a.frobenius_norm();

    if scale > 0.0 && n > 1 {
        let target = (f64::EPSILON * scale).powi(2) * 1e-2;
        for _sweep in 0..64 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if off <= target {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    jacobi_rotate(&mut a, &mut v, p, q);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]));
    let values = order.iter().map(|&i| diag[i]).collect();
    let vectors = CMatrix::from_fn(n, |i, k| v[(i, order[k])]);
    HermitianEigen { values, vectors }
}

// Annihilates a[p][q] with the unitary G = D R, where D = diag(1, e^{-i theta})
// makes the (p, q) block real and R is the real symmetric Jacobi rotation.
fn jacobi_rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let n = a.dim();
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let phase = apq / mag; // e^{i theta}
    let zeta = (aqq - app) / (2.0 * mag);
    let t = if zeta >= 0.0 {
        1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
    } else {
        -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let ph_conj = phase.conj();

    // A <- A G (columns p, q)
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * c - akq * ph_conj * s;
        a[(k, q)] = akp * s + akq * ph_conj * c;
    }
    // A <- G^dagger A (rows p, q)
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = apk * c - aqk * phase * s;
        a[(q, k)] = apk * s + aqk * phase * c;
    }
    a[(p, q)] = ZERO;
    a[(q, p)] = ZERO;
    a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
    // V <- V G
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c - vkq * ph_conj * s;
        v[(k, q)] = vkp * s + vkq * ph_conj * c;
    }
}

fn check_psd(eig: &HermitianEigen) -> Result<()> {
    let lo = eig.min();
    if lo < -PSD_CLAMP || lo.is_nan() {
        Err(Error::NotPsd(lo))
    } else {
        Ok(())
    }
}

/// Principal square root of a PSD matrix.
///
/// Eigenvalues in `[-1e-10, 0)` are clamped, and eigenvalues at or below
/// `1e-12 * lambda_max` are treated as outside the support, so round-off in a
/// rank-deficient input is not amplified by the square root.
pub fn hermitian_sqrt(m: &CMatrix) -> Result<CMatrix> {
    let eig = eigh(m);
    check_psd(&eig)?;
    let tol = SUPPORT_REL_TOL * eig.max().max(0.0);
    Ok(eig.map(|l| if l > tol { l.sqrt() } else { 0.0 }))
}

/// Support-restricted inverse square root: `lambda > tol` maps to `lambda^{-1/2}`, the rest to 0.
pub fn pinv_sqrt(m: &CMatrix, tol: f64) -> Result<CMatrix> {
    let eig = eigh(m);
    check_psd(&eig)?;
    Ok(eig.map(|l| if l > tol { 1.0 / l.sqrt() } else { 0.0 }))
}

/// [`pinv_sqrt`] with the relative threshold `1e-12 * lambda_max`.
pub fn pinv_sqrt_rel(m: &CMatrix) -> Result<CMatrix> {
    let eig = eigh(m);
    check_psd(&eig)?;
    let tol = SUPPORT_REL_TOL * eig.max().max(0.0);
    Ok(eig.map(|l| if l > tol { 1.0 / l.sqrt() } else { 0.0 }))
}

/// Both `sqrt(M)` and its support-restricted inverse from one decomposition.
pub fn sqrt_and_pinv_sqrt(m: &CMatrix, tol: Option<f64>) -> Result<(CMatrix, CMatrix)> {
    let eig = eigh(m);
    check_psd(&eig)?;
    let tol = tol.unwrap_or(SUPPORT_REL_TOL * eig.max().max(0.0));
    let s = eig.map(|l| if l > tol { l.sqrt() } else { 0.0 });
    let si = eig.map(|l| if l > tol { 1.0 / l.sqrt() } else { 0.0 });
    Ok((s, si))
}

/// Fractional power on the support: `lambda^alpha` for `lambda > tol`, 0 otherwise.
pub fn support_power(m: &CMatrix, alpha: f64, tol: Option<f64>) -> Result<CMatrix> {
    let eig = eigh(m);
    check_psd(&eig)?;
    let tol = tol.unwrap_or(SUPPORT_REL_TOL * eig.max().max(0.0));
    Ok(eig.map(|l| if l > tol { l.powf(alpha) } else { 0.0 }))
}

/// Orthogonal projector onto the eigenvectors with eigenvalue above `tol`.
pub fn support_projector(m: &CMatrix, tol: f64) -> CMatrix {
    eigh(m).map(|l| if l > tol { 1.0 } else { 0.0 })
}

/// `exp(-i H t)` for Hermitian `H`.
pub fn unitary_propagator(h: &CMatrix, t: f64) -> CMatrix {
    eigh(h).map_complex(|l| C64::from_polar(1.0, -l * t))
}

/// `Tr[rho^2] / Tr[rho]^2`.
pub fn purity(rho: &CMatrix) -> Result<f64> {
    let tr = rho.trace_re();
    if !(tr > MIN_TRACE) {
        return Err(Error::ZeroTrace(tr));
    }
    Ok(rho.trace_product(rho).re / (tr * tr))
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    eigh(m).min()
}

/// `rho / Tr[rho]`, Hermitised.
pub fn normalize(rho: &CMatrix) -> Result<CMatrix> {
    let tr = rho.trace_re();
    if !(tr > MIN_TRACE) {
        return Err(Error::ZeroTrace(tr));
    }
    Ok(rho.hermitian_part().scale(1.0 / tr))
}

/// Checks that `rho` is a normalised density matrix within `tol`.
pub fn validate_density(rho: &CMatrix, tol: f64) -> Result<()> {
    if !rho.is_finite() {
        return Err(Error::InvalidParams("density matrix has non-finite entries".into()));
    }
    let h = rho.hermiticity_defect();
    if h > tol {
        return Err(Error::InvalidParams(format!(
            "density matrix is not Hermitian (defect {h:e})"
        )));
    }
    let tr = rho.trace_re();
    if (tr - 1.0).abs() > tol {
        return Err(Error::InvalidParams(format!("density matrix has trace {tr}")));
    }
    let lo = min_eigenvalue(rho);
    if lo < -PSD_CLAMP {
        return Err(Error::NotPsd(lo));
    }
    Ok(())
}
