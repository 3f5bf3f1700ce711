//! Completely positive maps in Kraus form and the Petz recovery map.

use crate::qmath::{self, CMatrix};
use crate::{Error, Result};

/// A completely positive map `rho -> sum_k K_k rho K_k^dagger`.
#[derive(Clone, Debug)]
pub struct CpMap {
    dim: usize,
    kraus: Vec<CMatrix>,
}

impl CpMap {
    pub fn new(kraus: Vec<CMatrix>) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| Error::InvalidParams("a CP map needs at least one Kraus operator".into()))?;
        let dim = first.dim();
        for k in &kraus {
            if k.dim() != dim {
                return Err(Error::DimMismatch(dim, k.dim()));
            }
            if !k.is_finite() {
                return Err(Error::InvalidParams("Kraus operator has non-finite entries".into()));
            }
        }
        Ok(CpMap { dim, kraus })
    }

    pub fn identity(dim: usize) -> Self {
        CpMap {
            dim,
            kraus: vec![CMatrix::identity(dim)],
        }
    }

    pub fn unitary(u: CMatrix) -> Self {
        CpMap {
            dim: u.dim(),
            kraus: vec![u],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    fn check_dim(&self, m: &CMatrix) -> Result<()> {
        if m.dim() != self.dim {
            Err(Error::DimMismatch(self.dim, m.dim()))
        } else {
            Ok(())
        }
    }

    /// `sum_k K_k rho K_k^dagger`.
    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        self.check_dim(rho)?;
        let mut out = CMatrix::zeros(self.dim);
        for k in &self.kraus {
            out += &k.sandwich(rho);
        }
        Ok(out.hermitian_part())
    }

    /// Heisenberg-picture action `sum_k K_k^dagger X K_k`.
    pub fn adjoint_apply(&self, x: &CMatrix) -> Result<CMatrix> {
        self.check_dim(x)?;
        let mut out = CMatrix::zeros(self.dim);
        for k in &self.kraus {
            out += &k.sandwich_adjoint(x);
        }
        Ok(out.hermitian_part())
    }

    /// `sum_k K_k^dagger K_k - 1`, as the largest entry magnitude.
    pub fn completeness_residual(&self) -> f64 {
        self.adjoint_apply(&CMatrix::identity(self.dim))
            .expect("identity has matching dimension")
            .max_abs_diff(&CMatrix::identity(self.dim))
    }

    /// Scales the map by a positive constant (Kraus operators by its square root).
    pub fn scaled(&self, factor: f64) -> CpMap {
        let s = factor.sqrt();
        CpMap {
            dim: self.dim,
            kraus: self.kraus.iter().map(|k| k.scale(s)).collect(),
        }
    }

    /// Sum of two maps: the union of their Kraus lists.
    pub fn sum(&self, other: &CpMap) -> Result<CpMap> {
        if other.dim != self.dim {
            return Err(Error::DimMismatch(self.dim, other.dim));
        }
        let mut kraus = self.kraus.clone();
        kraus.extend(other.kraus.iter().cloned());
        Ok(CpMap { dim: self.dim, kraus })
    }
}

/// `second o first`, with Kraus operators `second[j] * first[i]`.
pub fn compose(second: &CpMap, first: &CpMap) -> Result<CpMap> {
    if second.dim != first.dim {
        return Err(Error::DimMismatch(second.dim, first.dim));
    }
    let mut kraus = Vec::with_capacity(second.kraus.len() * first.kraus.len());
    for b in &second.kraus {
        for a in &first.kraus {
            kraus.push(b * a);
        }
    }
    Ok(CpMap { dim: first.dim, kraus })
}

/// Petz recovery of `map` with reference prior `gamma`, applied to `x`:
/// `gamma^{1/2} map^dagger[ map(gamma)^{-1/2} x map(gamma)^{-1/2} ] gamma^{1/2}`.
///
/// Inverse square roots act on the support of `map(gamma)`; `tol = None`
/// uses the relative threshold `1e-12 * lambda_max`.
pub fn petz_recover(map: &CpMap, gamma: &CMatrix, x: &CMatrix, tol: Option<f64>) -> Result<CMatrix> {
    map.check_dim(gamma)?;
    map.check_dim(x)?;
    let image = map.apply(gamma)?;
    petz_recover_with_image(map, gamma, &image, x, tol)
}

/// As [`petz_recover`] but with `map(gamma)` supplied by the caller, e.g. the
/// stored next filtered state of a trajectory.
pub fn petz_recover_with_image(
    map: &CpMap,
    gamma: &CMatrix,
    image: &CMatrix,
    x: &CMatrix,
    tol: Option<f64>,
) -> Result<CMatrix> {
    let inv = match tol {
        Some(t) => qmath::pinv_sqrt(image, t)?,
        None => qmath::pinv_sqrt_rel(image)?,
    };
    let sqrt_gamma = qmath::hermitian_sqrt(gamma)?;
    let inner = inv.sandwich(x);
    let pulled = map.adjoint_apply(&inner)?;
    Ok(sqrt_gamma.sandwich(&pulled).hermitian_part())
}
