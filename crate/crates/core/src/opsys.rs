//! Concrete operator systems `A ⊆ B(H)`.
//!
//! All geometry happens in the real vector space of self-adjoint matrices with
//! inner product `Re Tr(x* y)`. A complex operator system is represented by
//! its self-adjoint part: since `A = A*`, the complex span is the
//! complexification of `A_sa`, and every element splits as `h + i k` with
//! `h, k ∈ A_sa`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{lambda_min, ComplexMatrix, MatrixError, C64, HERMITIAN_TOL, I, ONE};
use crate::random::{normal, rng_from_seed};

/// Gram-Schmidt residual below which a candidate is treated as dependent.
pub const DROP_TOL: f64 = 1e-9;
/// Distance from the identity to the span above which a system is rejected.
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpsysError {
    #[error("identity is not in the span of the generators (distance {distance:.3e})")]
    IdentityNotInSpan { distance: f64 },
    #[error("span is not closed under adjoint: generator {index} has its adjoint at distance {distance:.3e}")]
    NotSelfAdjointClosed { index: usize, distance: f64 },
    #[error("generator {index} is not Hermitian")]
    NonHermitianGenerator { index: usize },
    #[error("dimension mismatch: expected {expected}x{expected}, found {rows}x{cols}")]
    DimensionMismatch { expected: usize, rows: usize, cols: usize },
    #[error("generated *-algebra did not stabilize within {passes} passes")]
    ClosureNotReached { passes: usize },
    #[error("operator system needs at least one generator")]
    NoGenerators,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    /// Real linear span of self-adjoint matrices.
    #[serde(rename = "real-sa")]
    RealSelfAdjoint,
    /// Complex span, closed under adjoint.
    #[serde(rename = "complex")]
    Complex,
}

/// Operator system with a cached orthonormal self-adjoint basis.
///
/// The basis is produced by Gram-Schmidt in generator order, so it is fully
/// determined by `(dim_h, flavor, generators)`; map images are stored against
/// this ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OpsysJson", into = "OpsysJson")]
pub struct OperatorSystem {
    dim_h: usize,
    flavor: Flavor,
    generators: Vec<ComplexMatrix>,
    basis: Vec<ComplexMatrix>,
}

#[derive(Serialize, Deserialize)]
struct OpsysJson {
    dim: usize,
    flavor: Flavor,
    generators: Vec<ComplexMatrix>,
}

impl TryFrom<OpsysJson> for OperatorSystem {
    type Error = OpsysError;

    fn try_from(json: OpsysJson) -> Result<Self, Self::Error> {
        OperatorSystem::build(json.dim, json.flavor, json.generators)
    }
}

impl From<OperatorSystem> for OpsysJson {
    fn from(a: OperatorSystem) -> Self {
        OpsysJson { dim: a.dim_h, flavor: a.flavor, generators: a.generators }
    }
}

/// Real Gram-Schmidt over self-adjoint matrices.
#[derive(Default)]
struct RealSpan {
    basis: Vec<ComplexMatrix>,
}

impl RealSpan {
    fn residual(&self, m: &ComplexMatrix) -> ComplexMatrix {
        let mut r = m.clone();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for b in &self.basis {
                let c = b.hs_inner(&r);
                r.axpy(C64::new(-c, 0.0), b);
            }
        }
        r
    }

    fn try_push(&mut self, m: &ComplexMatrix) -> bool {
        let r = self.residual(m);
        let norm = r.frobenius_norm();
        if norm < DROP_TOL * m.frobenius_norm().max(1.0) {
            return false;
        }
        self.basis.push(r.scale_real(1.0 / norm));
        true
    }
}

/// Complex Gram-Schmidt with inner product `Tr(x* y)`.
#[derive(Default)]
struct ComplexSpan {
    basis: Vec<ComplexMatrix>,
}

impl ComplexSpan {
    fn residual(&self, m: &ComplexMatrix) -> ComplexMatrix {
        let mut r = m.clone();
        for _ in 0..2 {
            for b in &self.basis {
                let c = b.hs_inner_complex(&r);
                r.axpy(-c, b);
            }
        }
        r
    }

    fn try_push(&mut self, m: &ComplexMatrix) -> bool {
        let r = self.residual(m);
        let norm = r.frobenius_norm();
        if norm < DROP_TOL * m.frobenius_norm().max(1.0) {
            return false;
        }
        self.basis.push(r.scale_real(1.0 / norm));
        true
    }
}

impl OperatorSystem {
    /// Validates the generators and computes the orthonormal self-adjoint basis.
    pub fn build(dim_h: usize, flavor: Flavor, generators: Vec<ComplexMatrix>) -> Result<Self, OpsysError> {
        if generators.is_empty() {
            return Err(OpsysError::NoGenerators);
        }
        for g in &generators {
            if g.rows() != dim_h || g.cols() != dim_h {
                return Err(OpsysError::DimensionMismatch { expected: dim_h, rows: g.rows(), cols: g.cols() });
            }
        }

        let mut candidates = Vec::with_capacity(2 * generators.len());
        match flavor {
            Flavor::RealSelfAdjoint => {
                for (index, g) in generators.iter().enumerate() {
                    if !g.is_hermitian(HERMITIAN_TOL) {
                        return Err(OpsysError::NonHermitianGenerator { index });
                    }
                    candidates.push(g.hermitian_part());
                }
            }
            Flavor::Complex => {
                let mut span = ComplexSpan::default();
                for g in &generators {
                    span.try_push(g);
                }
                for (index, g) in generators.iter().enumerate() {
                    let distance = span.residual(&g.adjoint()).frobenius_norm();
                    if distance > IDENTITY_TOL * g.frobenius_norm().max(1.0) {
                        return Err(OpsysError::NotSelfAdjointClosed { index, distance });
                    }
                }
                // g and g* have the same Hermitian parts up to sign.
                for g in &generators {
                    candidates.push(g.hermitian_part());
                    candidates.push(g.skew_part());
                }
            }
        }

        let mut span = RealSpan::default();
        for c in &candidates {
            span.try_push(c);
        }
        let distance = span.residual(&ComplexMatrix::identity(dim_h)).frobenius_norm();
        if distance >= IDENTITY_TOL {
            return Err(OpsysError::IdentityNotInSpan { distance });
        }
        Ok(Self { dim_h, flavor, generators, basis: span.basis })
    }

    /// All of `B(H)_sa`, generated by the orthonormal Hermitian matrix units
    /// `e_ii`, `(e_ij + e_ji)/√2` (i < j) and `i(e_ij - e_ji)/√2` (i > j),
    /// in row-major order.
    pub fn full(dim_h: usize) -> Self {
        Self::build(dim_h, Flavor::RealSelfAdjoint, hermitian_matrix_units(dim_h))
            .expect("matrix units span B(H)")
    }

    /// Diagonal matrices of `M_n`.
    pub fn diagonal(dim_h: usize) -> Self {
        let gens = (0..dim_h).map(|i| ComplexMatrix::unit(dim_h, i, i)).collect();
        Self::build(dim_h, Flavor::RealSelfAdjoint, gens).expect("diagonal units contain I")
    }

    /// `span{I, z, z*}` with `z = diag(1, ω, ..., ω^{n-1})`, `ω = e^{2πi/n}`.
    pub fn z_system(n: usize) -> Self {
        let z = z_matrix(n);
        Self::build(n, Flavor::Complex, vec![ComplexMatrix::identity(n), z.clone(), z.adjoint()])
            .expect("z-system is a valid operator system")
    }

    /// Self-adjoint part of the unital *-algebra generated by the given matrices.
    pub fn from_subalgebra_sa(dim_h: usize, algebra_generators: &[ComplexMatrix]) -> Result<Self, OpsysError> {
        for g in algebra_generators {
            if g.rows() != dim_h || g.cols() != dim_h {
                return Err(OpsysError::DimensionMismatch { expected: dim_h, rows: g.rows(), cols: g.cols() });
            }
        }
        let mut span = ComplexSpan::default();
        span.try_push(&ComplexMatrix::identity(dim_h));
        for g in algebra_generators {
            span.try_push(g);
            span.try_push(&g.adjoint());
        }

        let cap = dim_h.pow(4).max(1);
        let mut passes = 0;
        loop {
            if passes >= cap {
                return Err(OpsysError::ClosureNotReached { passes });
            }
            passes += 1;
            let current = span.basis.clone();
            let mut grew = false;
            for x in &current {
                for y in &current {
                    grew |= span.try_push(&x.matmul(y));
                }
            }
            if !grew {
                break;
            }
        }

        let mut gens = Vec::with_capacity(2 * span.basis.len());
        for b in &span.basis {
            gens.push(b.hermitian_part());
            gens.push(b.skew_part());
        }
        gens.retain(|g| g.frobenius_norm() > DROP_TOL);
        Self::build(dim_h, Flavor::RealSelfAdjoint, gens)
    }

    pub fn dim_h(&self) -> usize {
        self.dim_h
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn generators(&self) -> &[ComplexMatrix] {
        &self.generators
    }

    /// Hilbert-Schmidt orthonormal self-adjoint basis of `A_sa`.
    pub fn basis(&self) -> &[ComplexMatrix] {
        &self.basis
    }

    /// Real dimension of `A_sa` (equal to the complex dimension of `A` for the
    /// complex flavor).
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// True when the system is all of `B(H)_sa`.
    pub fn is_full(&self) -> bool {
        self.basis.len() == self.dim_h * self.dim_h
    }

    /// Coordinates `Tr(b_i m)` of `m` against the basis; real for Hermitian `m`.
    pub fn coordinates(&self, m: &ComplexMatrix) -> Vec<C64> {
        self.basis.iter().map(|b| b.hs_inner_complex(m)).collect()
    }

    pub fn combine(&self, coords: &[C64]) -> ComplexMatrix {
        assert_eq!(coords.len(), self.basis.len());
        let mut out = ComplexMatrix::zeros(self.dim_h, self.dim_h);
        for (c, b) in coords.iter().zip(&self.basis) {
            out.axpy(*c, b);
        }
        out
    }

    pub fn combine_real(&self, coords: &[f64]) -> ComplexMatrix {
        let coords: Vec<C64> = coords.iter().map(|&c| C64::new(c, 0.0)).collect();
        self.combine(&coords)
    }

    fn check_dim(&self, m: &ComplexMatrix) -> Result<(), OpsysError> {
        if m.rows() != self.dim_h || m.cols() != self.dim_h {
            return Err(OpsysError::DimensionMismatch { expected: self.dim_h, rows: m.rows(), cols: m.cols() });
        }
        Ok(())
    }

    /// Hilbert-Schmidt orthogonal projection onto the (complexified) span.
    /// Hermitian input gives Hermitian output.
    pub fn project(&self, m: &ComplexMatrix) -> Result<ComplexMatrix, OpsysError> {
        self.check_dim(m)?;
        Ok(self.combine(&self.coordinates(m)))
    }

    /// Distance from `m` to `A`: for the real flavor a non-Hermitian part
    /// counts entirely as distance; for the complex flavor both Hermitian
    /// parts are measured against the span.
    pub fn distance(&self, m: &ComplexMatrix) -> f64 {
        let h = m.hermitian_part();
        let k = m.skew_part();
        let dh = (&h - &self.combine(&self.coordinates(&h))).frobenius_norm();
        let dk = match self.flavor {
            Flavor::RealSelfAdjoint => k.frobenius_norm(),
            Flavor::Complex => (&k - &self.combine(&self.coordinates(&k))).frobenius_norm(),
        };
        dh.hypot(dk)
    }

    /// Distance from `m` to the complex span of `A` regardless of flavor.
    pub fn distance_complexified(&self, m: &ComplexMatrix) -> f64 {
        (m - &self.combine(&self.coordinates(m))).frobenius_norm()
    }

    pub fn contains(&self, m: &ComplexMatrix, tol: f64) -> bool {
        m.rows() == self.dim_h && m.cols() == self.dim_h && self.distance(m) < tol
    }

    /// A positive semidefinite element of `A` with `λ_min` at a random offset
    /// in `[0, 0.1]` above zero.
    pub fn sample_psd_element(&self, rng_seed: u64) -> ComplexMatrix {
        let mut rng = rng_from_seed(rng_seed);
        self.sample_psd_with(&mut rng)
    }

    pub fn sample_psd_with(&self, rng: &mut impl Rng) -> ComplexMatrix {
        let shift = rng.random_range(0.0..=0.1);
        self.random_boundary_psd(rng, shift)
    }

    /// Random self-adjoint `a ∈ A` shifted to `a - λ_min(a)·I + shift·I`.
    /// Membership is exact because `I ∈ A`.
    pub fn random_boundary_psd(&self, rng: &mut impl Rng, shift: f64) -> ComplexMatrix {
        let coords: Vec<f64> = (0..self.dim()).map(|_| normal(rng)).collect();
        self.boundary_psd_from_coords(&coords, shift)
    }

    pub fn boundary_psd_from_coords(&self, coords: &[f64], shift: f64) -> ComplexMatrix {
        let a = self.combine_real(coords).hermitian_part();
        let lmin = lambda_min(&a).expect("combination of Hermitian basis is Hermitian");
        let mut out = a;
        for i in 0..self.dim_h {
            out[(i, i)] += C64::new(shift - lmin, 0.0);
        }
        out
    }
}

/// Orthonormal Hermitian basis of `M_n` (see [`OperatorSystem::full`]).
pub fn hermitian_matrix_units(n: usize) -> Vec<ComplexMatrix> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let m = if i == j {
                ComplexMatrix::unit(n, i, i)
            } else if i < j {
                let mut m = ComplexMatrix::zeros(n, n);
                m[(i, j)] = ONE * s;
                m[(j, i)] = ONE * s;
                m
            } else {
                let mut m = ComplexMatrix::zeros(n, n);
                m[(i, j)] = I * s;
                m[(j, i)] = -I * s;
                m
            };
            out.push(m);
        }
    }
    out
}

/// `diag(1, ω, ..., ω^{n-1})` with `ω = e^{2πi/n}`.
pub fn z_matrix(n: usize) -> ComplexMatrix {
    let diag: Vec<C64> = (0..n)
        .map(|j| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / n as f64))
        .collect();
    ComplexMatrix::from_diag(&diag)
}
