//! Linear maps `φ: A → B(K)` on operator systems.
//!
//! A map is stored by its images of the domain's orthonormal self-adjoint
//! basis; evaluation on the complex span extends by complex linearity. The
//! Choi matrix follows the normalization
//! `Tr(C_φ (a ⊗ b)) = Tr(φ(a) bᵗ)`, which forces
//! `C_φ = Σ_ij e_ij ⊗ φ(e_ji)ᵗ` (the transpose of the textbook Choi matrix).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{hermitian_eig, kron, operator_norm, ComplexMatrix, MatrixError, C64, HERMITIAN_TOL, ZERO};
use crate::opsys::{z_matrix, Flavor, OperatorSystem, OpsysError};
use crate::random::{normal, rng_from_seed};
use crate::search::{pattern_maximize, PatternOptions};

/// Membership tolerance for arguments of [`LinearMap::apply`].
pub const DOMAIN_TOL: f64 = 1e-8;
/// Eigenvalues of `φ(1)` at or below this are treated as outside its range.
pub const RANGE_CUTOFF: f64 = 1e-9;
/// A positivity witness must push `λ_min(φ(a))` below `-VIOLATION_TOL`.
pub const VIOLATION_TOL: f64 = 1e-8;

const POSITIVITY_RESTARTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PosmapError {
    #[error("argument is not in the domain (distance {distance:.3e})")]
    NotInDomain { distance: f64 },
    #[error("map needs the full domain B(H)_sa, got a {dim}-dimensional system in M_{dim_h}")]
    DomainNotFull { dim: usize, dim_h: usize },
    #[error("element is not in the product span A ⊗ B(K) (distance {distance:.3e})")]
    NotInProductSpan { distance: f64 },
    #[error("matrix is not Hermitian")]
    NonHermitian,
    #[error("image {index} is not Hermitian")]
    NonHermitianImage { index: usize },
    #[error("expected {expected} images, got {found}")]
    ImageCountMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("φ(1) is not positive semidefinite (λ_min = {lambda_min:.3e})")]
    NotPositiveAtIdentity { lambda_min: f64 },
    #[error("φ(1) = 0, so the map has empty range")]
    ZeroMap,
    #[error("subsystem is not contained in the domain")]
    NotASubsystem,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Opsys(#[from] OpsysError),
}

/// Linear map from an operator system into `B(K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapJson", into = "MapJson")]
pub struct LinearMap {
    domain: OperatorSystem,
    dim_k: usize,
    images: Vec<ComplexMatrix>,
}

#[derive(Serialize, Deserialize)]
struct MapJson {
    domain: OperatorSystem,
    dim_k: usize,
    images: Vec<ComplexMatrix>,
}

impl TryFrom<MapJson> for LinearMap {
    type Error = PosmapError;

    fn try_from(json: MapJson) -> Result<Self, Self::Error> {
        LinearMap::new(json.domain, json.dim_k, json.images)
    }
}

impl From<LinearMap> for MapJson {
    fn from(m: LinearMap) -> Self {
        MapJson { domain: m.domain, dim_k: m.dim_k, images: m.images }
    }
}

impl LinearMap {
    /// `images[i]` is the image of `domain.basis()[i]`.
    pub fn new(domain: OperatorSystem, dim_k: usize, images: Vec<ComplexMatrix>) -> Result<Self, PosmapError> {
        if images.len() != domain.dim() {
            return Err(PosmapError::ImageCountMismatch { expected: domain.dim(), found: images.len() });
        }
        let mut clean = Vec::with_capacity(images.len());
        for (index, img) in images.into_iter().enumerate() {
            if img.rows() != dim_k || img.cols() != dim_k {
                return Err(PosmapError::DimensionMismatch {
                    expected: format!("{dim_k}x{dim_k}"),
                    found: format!("{}x{}", img.rows(), img.cols()),
                });
            }
            if !img.is_hermitian(HERMITIAN_TOL) {
                return Err(PosmapError::NonHermitianImage { index });
            }
            clean.push(img.hermitian_part());
        }
        Ok(Self { domain, dim_k, images: clean })
    }

    /// Map defined by a closure on the domain basis. The closure must send
    /// self-adjoint matrices to self-adjoint matrices.
    pub fn from_fn(
        domain: OperatorSystem,
        dim_k: usize,
        f: impl Fn(&ComplexMatrix) -> ComplexMatrix,
    ) -> Result<Self, PosmapError> {
        let images = domain.basis().iter().map(f).collect();
        Self::new(domain, dim_k, images)
    }

    /// Inclusion `ι: A → B(H)`.
    pub fn identity(domain: OperatorSystem) -> Self {
        let dim_k = domain.dim_h();
        let images = domain.basis().to_vec();
        Self { domain, dim_k, images }
    }

    pub fn zero(domain: OperatorSystem, dim_k: usize) -> Self {
        let images = vec![ComplexMatrix::zeros(dim_k, dim_k); domain.dim()];
        Self { domain, dim_k, images }
    }

    /// Transpose map `x ↦ xᵗ` on the given domain.
    pub fn transpose(domain: OperatorSystem) -> Self {
        let dim_k = domain.dim_h();
        Self::from_fn(domain, dim_k, |b| b.transpose()).expect("transpose preserves Hermiticity")
    }

    pub fn domain(&self) -> &OperatorSystem {
        &self.domain
    }

    pub fn dim_h(&self) -> usize {
        self.domain.dim_h()
    }

    pub fn dim_k(&self) -> usize {
        self.dim_k
    }

    pub fn images(&self) -> &[ComplexMatrix] {
        &self.images
    }

    /// Evaluates `φ(a)` for `a` in the complex span of the domain.
    pub fn apply(&self, a: &ComplexMatrix) -> Result<ComplexMatrix, PosmapError> {
        let n = self.dim_h();
        if a.rows() != n || a.cols() != n {
            return Err(PosmapError::DimensionMismatch {
                expected: format!("{n}x{n}"),
                found: format!("{}x{}", a.rows(), a.cols()),
            });
        }
        let distance = self.domain.distance_complexified(a);
        if distance > DOMAIN_TOL * a.frobenius_norm().max(1.0) {
            return Err(PosmapError::NotInDomain { distance });
        }
        Ok(self.apply_unchecked(a))
    }

    /// `φ(P_A a)`: evaluation of the map precomposed with the projection onto
    /// the domain. Equals `φ(a)` whenever `a` is in the domain.
    pub fn apply_unchecked(&self, a: &ComplexMatrix) -> ComplexMatrix {
        self.apply_coords(&self.domain.coordinates(a))
    }

    pub fn apply_coords(&self, coords: &[C64]) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim_k, self.dim_k);
        for (c, img) in coords.iter().zip(&self.images) {
            if *c != ZERO {
                out.axpy(*c, img);
            }
        }
        out
    }

    /// Restriction to a subsystem of the domain.
    pub fn restrict(&self, sub: &OperatorSystem) -> Result<LinearMap, PosmapError> {
        if sub.dim_h() != self.dim_h() {
            return Err(PosmapError::NotASubsystem);
        }
        let mut images = Vec::with_capacity(sub.dim());
        for b in sub.basis() {
            if self.domain.distance(b) > DOMAIN_TOL {
                return Err(PosmapError::NotASubsystem);
            }
            images.push(self.apply_unchecked(b));
        }
        LinearMap::new(sub.clone(), self.dim_k, images)
    }

    /// Composition `Ad V ∘ φ`, i.e. `a ↦ V* φ(a) V`, with `V` of shape `dim_k x r`.
    pub fn conjugate(&self, v: &ComplexMatrix) -> LinearMap {
        let vh = v.adjoint();
        let images = self.images.iter().map(|img| vh.matmul(img).matmul(v).hermitian_part()).collect();
        LinearMap { domain: self.domain.clone(), dim_k: v.cols(), images }
    }

    /// Pointwise sum `self + s·other` on a common domain.
    pub fn add_scaled(&self, s: f64, other: &LinearMap) -> LinearMap {
        assert_eq!(self.domain, other.domain);
        assert_eq!(self.dim_k, other.dim_k);
        let images = self
            .images
            .iter()
            .zip(&other.images)
            .map(|(a, b)| {
                let mut m = a.clone();
                m.axpy(C64::new(s, 0.0), b);
                m
            })
            .collect();
        LinearMap { domain: self.domain.clone(), dim_k: self.dim_k, images }
    }

    pub fn scale(&self, s: f64) -> LinearMap {
        LinearMap {
            domain: self.domain.clone(),
            dim_k: self.dim_k,
            images: self.images.iter().map(|m| m.scale_real(s)).collect(),
        }
    }

    /// `φ(e_ij)` by complex linearity (full-domain maps).
    fn image_of_unit(&self, i: usize, j: usize) -> ComplexMatrix {
        self.apply_unchecked(&ComplexMatrix::unit(self.dim_h(), i, j))
    }

    /// Choi matrix `C = Σ_ij e_ij ⊗ φ(e_ji)ᵗ` of a full-domain map.
    pub fn choi_matrix(&self) -> Result<ChoiMatrix, PosmapError> {
        if !self.domain.is_full() {
            return Err(PosmapError::DomainNotFull { dim: self.domain.dim(), dim_h: self.dim_h() });
        }
        let (n, k) = (self.dim_h(), self.dim_k);
        let mut c = ComplexMatrix::zeros(n * k, n * k);
        for i in 0..n {
            for j in 0..n {
                c.set_block(i, j, &self.image_of_unit(j, i).transpose());
            }
        }
        Ok(ChoiMatrix { dim_h: n, dim_k: k, matrix: c.hermitian_part() })
    }

    /// `Tr(φ(a) bᵗ)` for `a` in the domain span and arbitrary `b ∈ B(K)`.
    pub fn pairing(&self, a: &ComplexMatrix, b: &ComplexMatrix) -> Result<C64, PosmapError> {
        Ok(self.apply(a)?.trace_product(&b.transpose()))
    }

    /// Dual functional `φ̃` on the product span `A ⊗ B(K)`, determined by
    /// `φ̃(a ⊗ b) = Tr(φ(a) bᵗ)`.
    pub fn dual_functional(&self, x: &ComplexMatrix) -> Result<C64, PosmapError> {
        let (n, k) = (self.dim_h(), self.dim_k);
        if x.rows() != n * k || x.cols() != n * k {
            return Err(PosmapError::DimensionMismatch {
                expected: format!("{0}x{0}", n * k),
                found: format!("{}x{}", x.rows(), x.cols()),
            });
        }
        let slices = product_coefficients(&self.domain, k, x)?;
        Ok(slices.iter().zip(&self.images).map(|(y, img)| img.trace_product(&y.transpose())).sum())
    }

    /// Drops the domain to `A_sa` viewed as a real operator system.
    pub fn to_real_domain(&self) -> LinearMap {
        if self.domain.flavor() == Flavor::RealSelfAdjoint {
            return self.clone();
        }
        let domain = OperatorSystem::build(self.dim_h(), Flavor::RealSelfAdjoint, self.domain.basis().to_vec())
            .expect("self-adjoint part of an operator system is a real operator system");
        // same Gram-Schmidt input, so the basis (and image order) is unchanged
        LinearMap { domain, dim_k: self.dim_k, images: self.images.clone() }
    }

    /// Largest deviation `max_i ‖self(b_i) - other(b_i)‖_F` over `other`'s
    /// domain basis.
    pub fn agreement_error(&self, other: &LinearMap) -> f64 {
        other
            .domain
            .basis()
            .iter()
            .zip(&other.images)
            .map(|(b, img)| (&self.apply_unchecked(b) - img).frobenius_norm())
            .fold(0.0, f64::max)
    }
}

/// The map on `span{1, z, z*}` (with `z` from [`z_matrix`]) into `M_2` given by
/// `1 ↦ 1`, `z ↦ c·e_12`, `z* ↦ c·e_21`.
pub fn z_map(n: usize, c: f64) -> LinearMap {
    let domain = OperatorSystem::z_system(n);
    let z = z_matrix(n);
    let nn = n as f64;
    LinearMap::from_fn(domain, 2, |b| {
        let alpha = b.trace() / nn;
        let beta = z.adjoint().trace_product(b) / nn;
        let gamma = z.trace_product(b) / nn;
        let mut m = ComplexMatrix::identity(2).scale(alpha);
        m[(0, 1)] += beta * c;
        m[(1, 0)] += gamma * c;
        m
    })
    .expect("images are Hermitian")
}

/// Partial contraction `Tr_H((a ⊗ 1) x)`, a `k x k` matrix.
pub fn contract_h(a: &ComplexMatrix, x: &ComplexMatrix, k: usize) -> ComplexMatrix {
    let n = a.rows();
    let mut out = ComplexMatrix::zeros(k, k);
    for u in 0..n {
        for s in 0..n {
            let w = a[(u, s)];
            if w == ZERO {
                continue;
            }
            for p in 0..k {
                for q in 0..k {
                    out[(p, q)] += w * x[(s * k + p, u * k + q)];
                }
            }
        }
    }
    out
}

/// Coefficient slices `y_i = Tr_H((b_i ⊗ 1) x)` with `x = Σ b_i ⊗ y_i` for
/// `x` in the product span of the domain and `B(K)`.
pub fn product_coefficients(domain: &OperatorSystem, k: usize, x: &ComplexMatrix) -> Result<Vec<ComplexMatrix>, PosmapError> {
    let slices: Vec<ComplexMatrix> = domain.basis().iter().map(|b| contract_h(b, x, k)).collect();
    let mut recon = ComplexMatrix::zeros(x.rows(), x.cols());
    for (b, y) in domain.basis().iter().zip(&slices) {
        recon += &kron(b, y);
    }
    let distance = (x - &recon).frobenius_norm();
    if distance > DOMAIN_TOL * x.frobenius_norm().max(1.0) {
        return Err(PosmapError::NotInProductSpan { distance });
    }
    Ok(slices)
}

/// Choi matrix of a full-domain map `B(H) → B(K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiMatrix {
    dim_h: usize,
    dim_k: usize,
    matrix: ComplexMatrix,
}

impl ChoiMatrix {
    pub fn new(dim_h: usize, dim_k: usize, matrix: ComplexMatrix) -> Result<Self, PosmapError> {
        let d = dim_h * dim_k;
        if matrix.rows() != d || matrix.cols() != d {
            return Err(PosmapError::DimensionMismatch {
                expected: format!("{d}x{d}"),
                found: format!("{}x{}", matrix.rows(), matrix.cols()),
            });
        }
        if !matrix.is_hermitian(HERMITIAN_TOL) {
            return Err(PosmapError::NonHermitian);
        }
        Ok(Self { dim_h, dim_k, matrix: matrix.hermitian_part() })
    }

    pub fn dim_h(&self) -> usize {
        self.dim_h
    }

    pub fn dim_k(&self) -> usize {
        self.dim_k
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }
}

/// Full-domain map with the given Choi matrix: `φ(e_ji) = (C_ij)ᵗ` where
/// `C_ij` is the `(i, j)` block.
pub fn map_from_choi(c: &ChoiMatrix) -> LinearMap {
    let (n, k) = (c.dim_h, c.dim_k);
    let domain = OperatorSystem::full(n);
    let mut unit_images = vec![ComplexMatrix::zeros(k, k); n * n];
    for i in 0..n {
        for j in 0..n {
            unit_images[j * n + i] = c.matrix.block(i, j, k).transpose();
        }
    }
    let images = domain
        .basis()
        .iter()
        .map(|b| {
            let mut img = ComplexMatrix::zeros(k, k);
            for r in 0..n {
                for s in 0..n {
                    let w = b[(r, s)];
                    if w != ZERO {
                        img.axpy(w, &unit_images[r * n + s]);
                    }
                }
            }
            img.hermitian_part()
        })
        .collect();
    LinearMap { domain, dim_k: k, images }
}

/// Data for the reduction `φ ↦ Ad V ∘ φ` to a unital map, and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitalizationRecord {
    /// Projection onto the range of `φ(1)`, in `B(K)`.
    pub range_projection: ComplexMatrix,
    /// `(W* φ(1) W)^{-1/2}` on the compressed space.
    pub scaling: ComplexMatrix,
    pub compressed_dim: usize,
    /// Isometry `W: C^r → K` onto the range (the identity when `φ(1)` is invertible).
    pub isometry: ComplexMatrix,
    /// `(W* φ(1) W)^{1/2}`.
    pub scaling_inverse: ComplexMatrix,
}

impl UnitalizationRecord {
    /// `V = W S`, so that the unitalized map is `a ↦ V* φ(a) V`.
    pub fn conjugation(&self) -> ComplexMatrix {
        self.isometry.matmul(&self.scaling)
    }

    /// `T = W S^{-1}`; `a ↦ T η(a) T*` undoes the unitalization.
    pub fn inverse_conjugation(&self) -> ComplexMatrix {
        self.isometry.matmul(&self.scaling_inverse)
    }

    /// Carries an extension `η` of the unitalized map back to an extension of
    /// the original map (exact on the domain for positive `φ`, whose images
    /// live in the range of `φ(1)`).
    pub fn transport_extension(&self, eta: &LinearMap) -> LinearMap {
        eta.conjugate(&self.inverse_conjugation().adjoint())
    }
}

/// Unitalizes `φ`: compress to the range of `φ(1)`, then conjugate by
/// `φ(1)^{-1/2}` there.
pub fn unitalize(phi: &LinearMap) -> Result<(LinearMap, UnitalizationRecord), PosmapError> {
    let k = phi.dim_k;
    let one = phi.apply(&ComplexMatrix::identity(phi.dim_h()))?;
    let eig = hermitian_eig(&one)?;
    let scale = one.max_abs().max(1.0);
    if eig.min() < -HERMITIAN_TOL * scale {
        return Err(PosmapError::NotPositiveAtIdentity { lambda_min: eig.min() });
    }
    let kept: Vec<usize> = (0..k).filter(|&i| eig.eigenvalues[i] > RANGE_CUTOFF).collect();
    if kept.is_empty() {
        return Err(PosmapError::ZeroMap);
    }
    let r = kept.len();
    let (isometry, scaling, scaling_inverse) = if r == k {
        (
            ComplexMatrix::identity(k),
            eig.reconstruct_with(|l| 1.0 / l.sqrt()),
            eig.reconstruct_with(|l| l.sqrt()),
        )
    } else {
        let w = ComplexMatrix::from_fn(k, r, |row, col| eig.eigenvectors[(row, kept[col])]);
        let lam: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
        let s: Vec<f64> = lam.iter().map(|l| 1.0 / l.sqrt()).collect();
        let si: Vec<f64> = lam.iter().map(|l| l.sqrt()).collect();
        (w, ComplexMatrix::from_real_diag(&s), ComplexMatrix::from_real_diag(&si))
    };
    let record = UnitalizationRecord {
        range_projection: isometry.matmul(&isometry.adjoint()),
        scaling,
        compressed_dim: r,
        isometry,
        scaling_inverse,
    };
    let unital = phi.conjugate(&record.conjugation());
    Ok((unital, record))
}

/// Outcome of the positivity semi-decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum PositivityVerdict {
    /// `element` is positive semidefinite in the domain, normalized to
    /// operator norm one, and `λ_min(φ(element)) = lambda_min < 0`.
    ViolationWitness { element: ComplexMatrix, lambda_min: f64 },
    NoViolationFound { samples_used: usize, best_lambda_min: f64 },
}

impl PositivityVerdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, PositivityVerdict::ViolationWitness { .. })
    }
}

/// The boundary element `a = h(c) - λ_min(h(c))·1` scaled to `λ_max(a) = 1`
/// and re-shifted so that `λ_min(a) = 0` holds to working precision. `None`
/// when the shift cancels almost all of `h(c)`.
fn normalized_boundary(domain: &OperatorSystem, coords: &[f64]) -> Option<ComplexMatrix> {
    let h_scale = domain.combine_real(coords).max_abs();
    let a = domain.boundary_psd_from_coords(coords, 0.0);
    let top = hermitian_eig(&a).ok()?.max();
    if !(top > 1e-8 * h_scale) || top < 1e-300 {
        return None;
    }
    let mut a = a.scale_real(1.0 / top);
    let low = hermitian_eig(&a).ok()?.min();
    for i in 0..a.rows() {
        a[(i, i)] -= C64::new(low, 0.0);
    }
    Some(a)
}

/// `λ_min(φ(a))` at the normalized boundary element for `coords`.
fn boundary_objective(phi: &LinearMap, coords: &[f64]) -> Option<(f64, ComplexMatrix)> {
    let a = normalized_boundary(&phi.domain, coords)?;
    let lmin = hermitian_eig(&phi.apply_unchecked(&a)).ok()?.min();
    Some((lmin, a))
}

/// Searches for a positive semidefinite `a ∈ A` with `φ(a)` not positive.
///
/// `budget` random elements from [`OperatorSystem::sample_psd_with`] are
/// tried first; then a compass search minimizes `λ_min(φ(a))` over the
/// boundary of `A⁺` from 64 starts (the best random draw, the generators'
/// directions and random points).
pub fn check_positive(phi: &LinearMap, budget: usize, rng_seed: u64) -> PositivityVerdict {
    let mut rng = rng_from_seed(rng_seed);
    let domain = &phi.domain;
    let mut best: Option<(f64, ComplexMatrix)> = None;
    let mut samples = 0;
    let consider = |cand: (f64, ComplexMatrix), best: &mut Option<(f64, ComplexMatrix)>| {
        if best.as_ref().is_none_or(|(b, _)| cand.0 < *b) {
            *best = Some(cand);
        }
    };

    let mut best_coords: Option<(f64, Vec<f64>)> = None;
    for _ in 0..budget {
        let shift = rng.random_range(0.0..=0.1);
        let coords: Vec<f64> = (0..domain.dim()).map(|_| normal(&mut rng)).collect();
        samples += 1;
        let Some(mut a) = normalized_boundary(domain, &coords) else { continue };
        // lift off the boundary by `shift`, keeping λ_max(a) = 1
        a = a.scale_real(1.0 / (1.0 + shift));
        for i in 0..a.rows() {
            a[(i, i)] += C64::new(shift / (1.0 + shift), 0.0);
        }
        let Ok(img_eig) = hermitian_eig(&phi.apply_unchecked(&a)) else { continue };
        let lmin = img_eig.min();
        if best_coords.as_ref().is_none_or(|(b, _)| lmin < *b) {
            best_coords = Some((lmin, coords));
        }
        consider((lmin, a), &mut best);
    }

    if budget > 0 && domain.dim() > 1 {
        let d = domain.dim();
        let mut starts: Vec<Vec<f64>> = Vec::new();
        if let Some((_, c)) = &best_coords {
            starts.push(c.clone());
        }
        for g in domain.generators() {
            for part in [g.hermitian_part(), g.skew_part()] {
                for sign in [1.0, -1.0] {
                    let c: Vec<f64> = domain.coordinates(&part).iter().map(|z| sign * z.re).collect();
                    if c.iter().any(|x| x.abs() > 1e-12) {
                        starts.push(c);
                    }
                }
            }
        }
        starts.truncate(POSITIVITY_RESTARTS / 2);
        while starts.len() < POSITIVITY_RESTARTS {
            starts.push((0..d).map(|_| normal(&mut rng)).collect());
        }
        for start in starts {
            let res = pattern_maximize(
                |c| boundary_objective(phi, c).map(|(l, _)| -l).unwrap_or(f64::NEG_INFINITY),
                start,
                PatternOptions { initial_step: 0.25, min_step: 1e-7, max_evals: 4000, normalize: true },
                &mut rng,
            );
            samples += res.evals;
            if let Some(cand) = boundary_objective(phi, &res.x) {
                consider(cand, &mut best);
            }
        }
    }

    match best {
        Some((lmin, element)) if lmin < -VIOLATION_TOL => PositivityVerdict::ViolationWitness { element, lambda_min: lmin },
        Some((lmin, _)) => PositivityVerdict::NoViolationFound { samples_used: samples, best_lambda_min: lmin },
        None => PositivityVerdict::NoViolationFound { samples_used: samples, best_lambda_min: f64::INFINITY },
    }
}

/// Certified lower bound on `‖φ‖` with the element attaining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    /// `‖φ(witness)‖ / ‖witness‖`.
    pub lower_bound: f64,
    /// Element of the domain span with operator norm one.
    pub witness: ComplexMatrix,
    /// Whether the supremum ran over the complex span (complex flavor) or
    /// only over self-adjoint elements (real flavor).
    pub over_complex_span: bool,
}

fn norm_ratio(phi: &LinearMap, params: &[f64], complex: bool) -> f64 {
    let coords = params_to_coords(params, complex);
    let a = phi.domain.combine(&coords);
    let na = operator_norm(&a);
    if na < 1e-300 {
        return f64::NEG_INFINITY;
    }
    operator_norm(&phi.apply_coords(&coords)) / na
}

fn params_to_coords(params: &[f64], complex: bool) -> Vec<C64> {
    if complex {
        params.chunks(2).map(|p| C64::new(p[0], p[1])).collect()
    } else {
        params.iter().map(|&p| C64::new(p, 0.0)).collect()
    }
}

fn coords_to_params(coords: &[C64], complex: bool) -> Vec<f64> {
    if complex {
        coords.iter().flat_map(|z| [z.re, z.im]).collect()
    } else {
        coords.iter().map(|z| z.re).collect()
    }
}

/// Lower bound on the norm of `φ` on its domain by multistart ascent of
/// `‖φ(a)‖ / ‖a‖` over the domain coordinates.
///
/// Starts are the identity, each generator, each basis element and
/// `restarts` random points.
pub fn restricted_norm(phi: &LinearMap, restarts: usize, rng_seed: u64) -> NormEstimate {
    let mut rng = rng_from_seed(rng_seed);
    let domain = &phi.domain;
    let complex = domain.flavor() == Flavor::Complex;
    let n = domain.dim_h();

    let mut starts: Vec<Vec<C64>> = vec![domain.coordinates(&ComplexMatrix::identity(n))];
    for g in domain.generators() {
        let g = if complex { g.clone() } else { g.hermitian_part() };
        starts.push(domain.coordinates(&g));
    }
    for i in 0..domain.dim() {
        let mut c = vec![ZERO; domain.dim()];
        c[i] = C64::new(1.0, 0.0);
        starts.push(c);
    }
    for _ in 0..restarts {
        starts.push(
            (0..domain.dim())
                .map(|_| if complex { C64::new(normal(&mut rng), normal(&mut rng)) } else { C64::new(normal(&mut rng), 0.0) })
                .collect(),
        );
    }

    let mut best_value = f64::NEG_INFINITY;
    let mut best_params = Vec::new();
    for start in starts {
        let x0 = coords_to_params(&start, complex);
        if x0.iter().all(|x| x.abs() < 1e-300) {
            continue;
        }
        let res = pattern_maximize(
            |p| norm_ratio(phi, p, complex),
            x0,
            PatternOptions { initial_step: 0.25, min_step: 1e-10, max_evals: 20_000, normalize: true },
            &mut rng,
        );
        if res.value > best_value {
            best_value = res.value;
            best_params = res.x;
        }
    }

    let coords = params_to_coords(&best_params, complex);
    let a = domain.combine(&coords);
    let na = operator_norm(&a);
    let witness = a.scale_real(1.0 / na);
    let lower_bound = operator_norm(&phi.apply_unchecked(&witness));
    NormEstimate { lower_bound, witness, over_complex_span: complex }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{lambda_min, ONE};
    use crate::random::{random_hermitian, rng_from_seed};

    fn random_full_map(seed: u64, n: usize, k: usize) -> LinearMap {
        let mut rng = rng_from_seed(seed);
        let domain = OperatorSystem::full(n);
        let images = (0..domain.dim()).map(|_| random_hermitian(&mut rng, k)).collect();
        LinearMap::new(domain, k, images).unwrap()
    }

    fn pauli_system() -> OperatorSystem {
        let x = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let z = ComplexMatrix::from_real_diag(&[1.0, -1.0]);
        OperatorSystem::build(2, Flavor::RealSelfAdjoint, vec![ComplexMatrix::identity(2), x, z]).unwrap()
    }

    /// `α + βz + γz* ↦ α·1 + c(β E12 + γ E21)` on the n-th z-system.

    #[test]
    fn apply_identity_and_zero() {
        let id = LinearMap::identity(OperatorSystem::full(2));
        let x = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(id.apply(&x).unwrap().max_abs_diff(&x) < 1e-14);
        let zero = LinearMap::zero(OperatorSystem::full(3), 2);
        assert!(zero.apply(&ComplexMatrix::identity(3)).unwrap().max_abs() == 0.0);
        let diag = LinearMap::identity(OperatorSystem::diagonal(2));
        assert!(matches!(diag.apply(&x), Err(PosmapError::NotInDomain { .. })));
    }

    #[test]
    fn apply_is_linear() {
        let phi = random_full_map(1, 3, 2);
        let mut rng = rng_from_seed(2);
        let a = random_hermitian(&mut rng, 3);
        let b = random_hermitian(&mut rng, 3);
        let (al, be) = (C64::new(0.3, -1.2), C64::new(2.0, 0.5));
        let lhs = phi.apply(&(&a.scale(al) + &b.scale(be))).unwrap();
        let rhs = &phi.apply(&a).unwrap().scale(al) + &phi.apply(&b).unwrap().scale(be);
        assert!(lhs.max_abs_diff(&rhs) < 1e-11);
    }

    #[test]
    fn choi_of_identity_transpose_and_trace() {
        let id = LinearMap::identity(OperatorSystem::full(2)).choi_matrix().unwrap();
        let eig = hermitian_eig(id.matrix()).unwrap();
        let expected = [0.0, 0.0, 0.0, 2.0];
        for (l, e) in eig.eigenvalues.iter().zip(expected) {
            assert!((l - e).abs() < 1e-12);
        }
        let mut omega = ComplexMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                omega += &kron(&ComplexMatrix::unit(2, i, j), &ComplexMatrix::unit(2, i, j));
            }
        }
        assert!(id.matrix().max_abs_diff(&omega) < 1e-14);

        let t = LinearMap::transpose(OperatorSystem::full(2)).choi_matrix().unwrap();
        let eig = hermitian_eig(t.matrix()).unwrap();
        for (l, e) in eig.eigenvalues.iter().zip([-1.0, 1.0, 1.0, 1.0]) {
            assert!((l - e).abs() < 1e-12);
        }

        let tr = LinearMap::from_fn(OperatorSystem::full(2), 2, |b| ComplexMatrix::identity(2).scale(b.trace())).unwrap();
        assert!(tr.choi_matrix().unwrap().matrix().max_abs_diff(&ComplexMatrix::identity(4)) < 1e-14);
    }

    #[test]
    fn choi_requires_full_domain() {
        let phi = LinearMap::identity(pauli_system());
        assert!(matches!(phi.choi_matrix(), Err(PosmapError::DomainNotFull { .. })));
    }

    #[test]
    fn map_from_identity_choi_is_trace_map() {
        let c = ChoiMatrix::new(2, 3, ComplexMatrix::identity(6)).unwrap();
        let phi = map_from_choi(&c);
        let mut rng = rng_from_seed(4);
        let a = random_hermitian(&mut rng, 2);
        let expected = ComplexMatrix::identity(3).scale(a.trace());
        assert!(phi.apply(&a).unwrap().max_abs_diff(&expected) < 1e-13);
        assert!(matches!(ChoiMatrix::new(2, 2, ComplexMatrix::unit(4, 0, 1)), Err(PosmapError::NonHermitian)));
    }

    #[test]
    fn choi_round_trip_on_identity() {
        let id = LinearMap::identity(OperatorSystem::full(3));
        let back = map_from_choi(&id.choi_matrix().unwrap());
        for (x, y) in back.images().iter().zip(id.images()) {
            assert!(x.max_abs_diff(y) < 1e-13);
        }
    }

    #[test]
    fn dual_functional_examples() {
        let id = LinearMap::identity(OperatorSystem::full(2));
        let x = kron(&ComplexMatrix::unit(2, 0, 0), &ComplexMatrix::unit(2, 0, 0));
        assert!((id.dual_functional(&x).unwrap() - ONE).norm() < 1e-14);

        let t = LinearMap::transpose(OperatorSystem::full(2));
        let x = kron(&ComplexMatrix::unit(2, 0, 1), &ComplexMatrix::unit(2, 1, 0));
        assert!((t.dual_functional(&x).unwrap() - ONE).norm() < 1e-14);

        let restricted = LinearMap::identity(OperatorSystem::diagonal(2));
        let off = kron(&ComplexMatrix::unit(2, 0, 1), &ComplexMatrix::identity(2));
        assert!(matches!(restricted.dual_functional(&off), Err(PosmapError::NotInProductSpan { .. })));
    }

    #[test]
    fn dual_functional_matches_choi_pairing() {
        let phi = random_full_map(7, 3, 2);
        let c = phi.choi_matrix().unwrap();
        let mut rng = rng_from_seed(8);
        for _ in 0..200 {
            let x = crate::random::random_matrix(&mut rng, 6);
            let lhs = phi.dual_functional(&x).unwrap();
            let rhs = c.matrix().trace_product(&x);
            assert!((lhs - rhs).norm() < 1e-11);
        }
    }

    #[test]
    fn unitalize_examples() {
        let id = LinearMap::identity(OperatorSystem::full(2));
        let (u, rec) = unitalize(&id).unwrap();
        assert!(rec.scaling.max_abs_diff(&ComplexMatrix::identity(2)) < 1e-14);
        assert_eq!(rec.compressed_dim, 2);
        for (x, y) in u.images().iter().zip(id.images()) {
            assert!(x.max_abs_diff(y) < 1e-14);
        }

        let d = ComplexMatrix::from_real_diag(&[4.0, 1.0]);
        let phi = id.conjugate(&ComplexMatrix::from_real_diag(&[2.0, 1.0]));
        assert!(phi.apply(&ComplexMatrix::identity(2)).unwrap().max_abs_diff(&d) < 1e-14);
        let (u, rec) = unitalize(&phi).unwrap();
        assert!(rec.scaling.max_abs_diff(&ComplexMatrix::from_real_diag(&[0.5, 1.0])) < 1e-14);
        assert!(u.apply(&ComplexMatrix::identity(2)).unwrap().max_abs_diff(&ComplexMatrix::identity(2)) < 1e-12);

        let p = id.conjugate(&ComplexMatrix::from_real_diag(&[1.0, 0.0]));
        let (u, rec) = unitalize(&p).unwrap();
        assert_eq!(rec.compressed_dim, 1);
        assert_eq!(u.dim_k(), 1);
        assert!((u.apply(&ComplexMatrix::identity(2)).unwrap()[(0, 0)] - ONE).norm() < 1e-12);

        assert!(matches!(unitalize(&LinearMap::zero(OperatorSystem::full(2), 2)), Err(PosmapError::ZeroMap)));
        assert!(matches!(unitalize(&id.scale(-1.0)), Err(PosmapError::NotPositiveAtIdentity { .. })));
    }

    #[test]
    fn unitalize_transport_recovers_map() {
        let mut rng = rng_from_seed(12);
        let v = crate::random::random_matrix(&mut rng, 3);
        let phi = LinearMap::identity(OperatorSystem::full(3)).conjugate(&v);
        let (u, rec) = unitalize(&phi).unwrap();
        let one = phi.apply(&ComplexMatrix::identity(3)).unwrap();
        let s = hermitian_eig(&one).unwrap().reconstruct_with(|l| 1.0 / l.sqrt());
        let a = random_hermitian(&mut rng, 3);
        let expected = s.matmul(&phi.apply(&a).unwrap()).matmul(&s);
        assert!(u.apply(&a).unwrap().max_abs_diff(&expected) < 1e-10);
        assert!(rec.transport_extension(&u).agreement_error(&phi) < 1e-10);
    }

    #[test]
    fn positivity_of_identity_and_transpose() {
        let id = LinearMap::identity(OperatorSystem::z_system(4));
        assert!(!check_positive(&id, 200, 0).is_violation());
        let t = LinearMap::transpose(pauli_system());
        assert!(!check_positive(&t, 200, 1).is_violation());
    }

    #[test]
    fn unscaled_zmap_is_not_positive() {
        let phi = z_map(4, 2.0);
        match check_positive(&phi, 1000, 3) {
            PositivityVerdict::ViolationWitness { element, lambda_min } => {
                assert!(lambda_min < -1e-8);
                assert!(lambda_min_of(&element) >= -1e-12);
                assert!(phi.domain().contains(&element, 1e-9));
                let img = phi.apply(&element).unwrap();
                assert!((lambda_min_of(&img) - lambda_min).abs() < 1e-10);
            }
            v => panic!("expected a witness, got {v:?}"),
        }
    }

    fn lambda_min_of(m: &ComplexMatrix) -> f64 {
        lambda_min(m).unwrap()
    }

    #[test]
    fn grid_confirms_zmap_positivity_split() {
        // brute force over a = α + βz + β̄z* with α the smallest admissible value
        let n = 4;
        let z = z_matrix(n);
        let scaled = z_map(n, 2.0 * (std::f64::consts::PI / n as f64).cos());
        let unscaled = z_map(n, 2.0);
        let mut worst_scaled = f64::INFINITY;
        let mut worst_unscaled = f64::INFINITY;
        for step in 0..360 {
            let beta = C64::from_polar(1.0, step as f64 * std::f64::consts::PI / 180.0);
            let core = &z.scale(beta) + &z.adjoint().scale(beta.conj());
            let alpha = -lambda_min_of(&core);
            let mut a = core;
            for i in 0..n {
                a[(i, i)] += C64::new(alpha, 0.0);
            }
            worst_scaled = worst_scaled.min(lambda_min_of(&scaled.apply(&a).unwrap()));
            worst_unscaled = worst_unscaled.min(lambda_min_of(&unscaled.apply(&a).unwrap()));
        }
        assert!(worst_scaled > -1e-10);
        let expected = 2.0 * (std::f64::consts::PI / 4.0).cos() - 2.0;
        assert!((worst_unscaled - expected).abs() < 1e-10);
    }

    #[test]
    fn norm_of_identity_and_z_map() {
        let id = LinearMap::identity(OperatorSystem::full(2));
        let est = restricted_norm(&id, 4, 0);
        assert!((est.lower_bound - 1.0).abs() < 1e-9);

        let phi = z_map(4, std::f64::consts::SQRT_2);
        let est = restricted_norm(&phi, 8, 0);
        assert!(est.lower_bound >= std::f64::consts::SQRT_2 - 1e-9);
        assert!(est.over_complex_span);
        assert!((operator_norm(&est.witness) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_grows_with_domain() {
        let phi = random_full_map(21, 2, 2);
        let full = restricted_norm(&phi, 8, 1).lower_bound;
        let sub = restricted_norm(&phi.restrict(&pauli_system()).unwrap(), 8, 1).lower_bound;
        assert!(sub <= full + 1e-9);
    }
}
