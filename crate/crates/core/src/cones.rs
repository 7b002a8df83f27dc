//! Mapping cones on `B(H)`, the cone
//! `P(A, C) = { x ∈ (A ⊗ B(K))_sa : (α ⊗ ι)(x) ≥ 0 for all α ∈ C }`
//! and sampled checks of `C`-positivity.
//!
//! Cone elements act on the `H` tensor factor. Membership in `P(A, C)` can
//! only be refuted, never proved, from finitely many sampled `α`; verdicts
//! carry the witness or the number of checks passed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{hermitian_eig, kron, lambda_min, ComplexMatrix, C64, HERMITIAN_TOL};
use crate::opsys::{hermitian_matrix_units, OperatorSystem};
use crate::posmap::{product_coefficients, ChoiMatrix, LinearMap, PosmapError, map_from_choi};
use crate::random::{derive_seed, normal, random_matrix, random_unit_vector, rng_from_seed};

/// `λ_min` below this rejects membership or flags a violation.
pub const REJECT_TOL: f64 = 1e-8;

/// Inputs tried by the k-positivity spot check.
const KPOS_SPOT_CHECKS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConeError {
    #[error("unknown cone {0:?}; expected cp, cocp, dec, pos or kpos:<k>")]
    UnknownKind(String),
    #[error("element is not Hermitian")]
    NonHermitian,
    #[error("element of side {side} does not factor as {dim_h} x k")]
    BadCompositeDimension { side: usize, dim_h: usize },
    #[error(transparent)]
    Posmap(#[from] PosmapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    CompletelyPositive,
    CoCompletelyPositive,
    Decomposable,
    /// Decomposable maps, plus the Choi map generator when `dim_h = 3`.
    /// Only an inner approximation of the cone of all positive maps.
    PositiveApprox,
    KPositive(usize),
}

impl FromStr for ConeKind {
    type Err = ConeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cp" => Ok(ConeKind::CompletelyPositive),
            "cocp" => Ok(ConeKind::CoCompletelyPositive),
            "dec" => Ok(ConeKind::Decomposable),
            "pos" => Ok(ConeKind::PositiveApprox),
            other => other
                .strip_prefix("kpos:")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(ConeKind::KPositive)
                .ok_or_else(|| ConeError::UnknownKind(other.to_string())),
        }
    }
}

impl fmt::Display for ConeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConeKind::CompletelyPositive => write!(f, "cp"),
            ConeKind::CoCompletelyPositive => write!(f, "cocp"),
            ConeKind::Decomposable => write!(f, "dec"),
            ConeKind::PositiveApprox => write!(f, "pos"),
            ConeKind::KPositive(k) => write!(f, "kpos:{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of sampled cone elements tried per membership test.
    pub checks: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { checks: 16, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingCone {
    pub dim_h: usize,
    pub kind: ConeKind,
    pub sampler: SamplerConfig,
}

impl MappingCone {
    pub fn new(dim_h: usize, kind: ConeKind) -> Self {
        Self { dim_h, kind, sampler: SamplerConfig::default() }
    }

    pub fn with_sampler(mut self, sampler: SamplerConfig) -> Self {
        self.sampler = sampler;
        self
    }
}

/// `x ↦ Σ_r V_r* x V_r` with `V_r` of shape `n x m`, as a map `B(C^n) → B(C^m)`.
pub fn kraus_map(kraus: &[ComplexMatrix]) -> LinearMap {
    let n = kraus[0].rows();
    let m = kraus[0].cols();
    LinearMap::from_fn(OperatorSystem::full(n), m, |x| {
        let mut out = ComplexMatrix::zeros(m, m);
        for v in kraus {
            out += &v.adjoint().matmul(x).matmul(v);
        }
        out
    })
    .expect("Kraus maps preserve Hermiticity")
}

/// `x ↦ Σ_r V_r* xᵗ V_r`.
pub fn co_kraus_map(kraus: &[ComplexMatrix]) -> LinearMap {
    let cp = kraus_map(kraus);
    LinearMap::from_fn(cp.domain().clone(), cp.dim_k(), |x| cp.apply_unchecked(&x.transpose()))
        .expect("transpose preserves Hermiticity")
}

/// `w·a + (1 - w)·b` for maps on the same domain.
pub fn convex_combination(a: &LinearMap, b: &LinearMap, w: f64) -> LinearMap {
    a.scale(w).add_scaled(1.0 - w, b)
}

/// Choi's positive, non-decomposable map on `M_3`: diagonal entries
/// `(x11 + x33, x11 + x22, x22 + x33)`, off-diagonal entries `-x_ij`.
pub fn choi_map() -> LinearMap {
    LinearMap::from_fn(OperatorSystem::full(3), 3, |x| {
        let mut out = x.scale_real(-1.0);
        let d = |i: usize| x[(i, i)];
        out[(0, 0)] = d(0) + d(2);
        out[(1, 1)] = d(1) + d(0);
        out[(2, 2)] = d(2) + d(1);
        out
    })
    .expect("Choi map preserves Hermiticity")
}

fn random_kraus(rng: &mut impl Rng, n: usize) -> Vec<ComplexMatrix> {
    let terms = rng.random_range(1..=3);
    let scale = 1.0 / ((n * terms) as f64).sqrt();
    (0..terms).map(|_| random_matrix(rng, n).scale_real(scale)).collect()
}

/// `(ι_k ⊗ α)(x)` for `x` on `C^k ⊗ H`.
pub fn ampliate(alpha: &LinearMap, k: usize, x: &ComplexMatrix) -> ComplexMatrix {
    let n = alpha.dim_h();
    let m = alpha.dim_k();
    let mut out = ComplexMatrix::zeros(k * m, k * m);
    for s in 0..k {
        for t in 0..k {
            out.set_block(s, t, &alpha.apply_unchecked(&x.block(s, t, n)));
        }
    }
    out
}

/// Spot check of k-positivity on random rank-one inputs.
pub fn spot_check_k_positive(alpha: &LinearMap, k: usize, trials: usize, rng: &mut impl Rng) -> bool {
    let n = alpha.dim_h();
    (0..trials).all(|_| {
        let v = random_unit_vector(rng, k * n);
        let x = ComplexMatrix::outer(&v, &v);
        lambda_min(&ampliate(alpha, k, &x)).map(|l| l >= -1e-10).unwrap_or(false)
    })
}

fn sample_with(cone: &MappingCone, rng: &mut impl Rng) -> LinearMap {
    let n = cone.dim_h;
    let cp = |rng: &mut _| kraus_map(&random_kraus(rng, n));
    let cocp = |rng: &mut _| co_kraus_map(&random_kraus(rng, n));
    match cone.kind {
        ConeKind::CompletelyPositive => cp(rng),
        ConeKind::CoCompletelyPositive => cocp(rng),
        ConeKind::Decomposable => {
            let w = rng.random_range(0.0..=1.0);
            convex_combination(&cp(rng), &cocp(rng), w)
        }
        ConeKind::PositiveApprox => {
            if n == 3 && rng.random_range(0..3) == 0 {
                // γ ∘ Φ ∘ δ stays in every mapping cone containing Φ
                let inner = kraus_map(&random_kraus(rng, n));
                let outer = kraus_map(&random_kraus(rng, n));
                let phi = choi_map();
                LinearMap::from_fn(OperatorSystem::full(n), n, |x| {
                    outer.apply_unchecked(&phi.apply_unchecked(&inner.apply_unchecked(x)))
                })
                .expect("composition of Hermitian-preserving maps")
            } else {
                let w = rng.random_range(0.0..=1.0);
                convex_combination(&cp(rng), &cocp(rng), w)
            }
        }
        ConeKind::KPositive(k) => {
            let base = cp(rng);
            if k >= n {
                return base;
            }
            // push the Choi matrix negative along a maximally entangled
            // direction (Schmidt rank n > k), backing off until the spot
            // check accepts
            let choi = base.choi_matrix().expect("full domain").into_matrix();
            let u = random_matrix(rng, n);
            let mut omega = vec![C64::new(0.0, 0.0); n * n];
            for i in 0..n {
                for j in 0..n {
                    omega[i * n + j] = u[(j, i)];
                }
            }
            crate::matrix::normalize(&mut omega);
            let dir = ComplexMatrix::outer(&omega, &omega);
            let top = hermitian_eig(&choi).map(|e| e.max()).unwrap_or(1.0);
            let mut eps = top;
            for _ in 0..20 {
                let mut perturbed = choi.clone();
                perturbed.axpy(C64::new(-eps, 0.0), &dir);
                let cand = map_from_choi(&ChoiMatrix::new(n, n, perturbed).expect("Hermitian perturbation"));
                if spot_check_k_positive(&cand, k, KPOS_SPOT_CHECKS, rng) {
                    return cand;
                }
                eps *= 0.5;
            }
            base
        }
    }
}

/// Random element of the cone, as a full-domain map `B(H) → B(H)`.
pub fn sample_cone_element(cone: &MappingCone, rng_seed: u64) -> LinearMap {
    sample_with(cone, &mut rng_from_seed(rng_seed))
}

/// Cone element `α` with the images `α(e_st)` of all matrix units cached.
struct PreparedMap {
    map: LinearMap,
    unit_images: Vec<ComplexMatrix>,
}

impl PreparedMap {
    fn new(map: LinearMap) -> Self {
        let n = map.dim_h();
        let unit_images = (0..n * n).map(|i| map.apply_unchecked(&ComplexMatrix::unit(n, i / n, i % n))).collect();
        Self { map, unit_images }
    }

    /// `(α ⊗ ι)(x)` with `α` on the first factor.
    fn apply_on_h(&self, x: &ComplexMatrix, k: usize) -> ComplexMatrix {
        let n = self.map.dim_h();
        let m = self.map.dim_k();
        let mut out = ComplexMatrix::zeros(m * k, m * k);
        for s in 0..n {
            for t in 0..n {
                out += &kron(&self.unit_images[s * n + t], &x.block(s, t, k));
            }
        }
        out
    }
}

fn prepared_samples(cone: &MappingCone, budget: usize, rng_seed: u64) -> Vec<PreparedMap> {
    (0..budget).map(|j| PreparedMap::new(sample_cone_element(cone, derive_seed(rng_seed, j as u64)))).collect()
}

/// `(α ⊗ ι)(x)` with `α` acting on the `H` factor of `x ∈ B(H ⊗ K)`.
pub fn apply_on_h_factor(alpha: &LinearMap, x: &ComplexMatrix) -> ComplexMatrix {
    let k = x.rows() / alpha.dim_h();
    PreparedMap::new(alpha.clone()).apply_on_h(x, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum PacVerdict {
    /// `(α ⊗ ι)(x)` has `λ_min = lambda_min < 0`; `alpha` is `None` for the
    /// identity map.
    Rejected { alpha: Option<LinearMap>, lambda_min: f64 },
    NotRejected { checks: usize },
}

impl PacVerdict {
    pub fn is_rejected(&self) -> bool {
        matches!(self, PacVerdict::Rejected { .. })
    }
}

fn composite_k(x: &ComplexMatrix, dim_h: usize) -> Result<usize, ConeError> {
    if !x.is_square() || x.rows() % dim_h != 0 || x.rows() == 0 {
        return Err(ConeError::BadCompositeDimension { side: x.rows(), dim_h });
    }
    Ok(x.rows() / dim_h)
}

fn membership_with(x: &ComplexMatrix, k: usize, samples: &[PreparedMap]) -> PacVerdict {
    let lmin = lambda_min(x).expect("checked Hermitian");
    if lmin < -REJECT_TOL {
        return PacVerdict::Rejected { alpha: None, lambda_min: lmin };
    }
    for s in samples {
        let y = s.apply_on_h(x, k);
        let l = lambda_min(&y.hermitian_part()).expect("Hermitian");
        if l < -REJECT_TOL {
            return PacVerdict::Rejected { alpha: Some(s.map.clone()), lambda_min: l };
        }
    }
    PacVerdict::NotRejected { checks: samples.len() + 1 }
}

/// Membership test for `P(A, C)`: the identity first, then `budget` sampled
/// cone elements (seeded per index, so a larger budget extends the same
/// sequence).
pub fn membership_pac(
    x: &ComplexMatrix,
    domain: &OperatorSystem,
    cone: &MappingCone,
    budget: usize,
    rng_seed: u64,
) -> Result<PacVerdict, ConeError> {
    let k = composite_k(x, domain.dim_h())?;
    if !x.is_hermitian(HERMITIAN_TOL) {
        return Err(ConeError::NonHermitian);
    }
    product_coefficients(domain, k, x)?;
    let samples = prepared_samples(cone, budget, rng_seed);
    Ok(membership_with(&x.hermitian_part(), k, &samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacSample {
    pub element: ComplexMatrix,
    pub checks_passed: usize,
}

/// Candidate draws for `P(A, C)`, cycling through three constructions:
/// a random Hermitian element of `A ⊗ B(K)` shifted by a multiple of `1 ⊗ 1`
/// that may leave it indefinite; a product `a ⊗ ηη*` with `a` on the boundary
/// of `A⁺`; and, for the full system, a random rank-one projector.
fn draw_candidate(domain: &OperatorSystem, k: usize, rng: &mut impl Rng, kind: usize) -> ComplexMatrix {
    let n = domain.dim_h();
    match kind % 3 {
        1 => {
            let a = domain.random_boundary_psd(rng, 0.0);
            let eta = random_unit_vector(rng, k);
            kron(&a, &ComplexMatrix::outer(&eta, &eta))
        }
        2 if domain.is_full() => {
            let v = random_unit_vector(rng, n * k);
            ComplexMatrix::outer(&v, &v)
        }
        _ => {
            let hk = hermitian_matrix_units(k);
            let mut y = ComplexMatrix::zeros(n * k, n * k);
            for a in domain.basis() {
                for b in &hk {
                    y.axpy(C64::new(normal(rng), 0.0), &kron(a, b));
                }
            }
            let eig = hermitian_eig(&y).expect("Hermitian");
            let u: f64 = rng.random_range(-0.25..=0.25);
            let shift = -eig.min() + u * (eig.max() - eig.min());
            for i in 0..n * k {
                y[(i, i)] += C64::new(shift, 0.0);
            }
            y
        }
    }
}

/// Sampled elements of `P(A, C)`: always `1 ⊗ 1` first, then the survivors of
/// `budget` random draws under [`membership_pac`] with the cone's configured
/// number of checks.
pub fn sample_pac(domain: &OperatorSystem, dim_k: usize, cone: &MappingCone, budget: usize, rng_seed: u64) -> Vec<PacSample> {
    let n = domain.dim_h();
    let checks = prepared_samples(cone, cone.sampler.checks, derive_seed(rng_seed, u64::MAX));
    let mut rng = rng_from_seed(rng_seed);
    let mut out = vec![PacSample { element: ComplexMatrix::identity(n * dim_k), checks_passed: checks.len() + 1 }];
    for j in 0..budget {
        let x = draw_candidate(domain, dim_k, &mut rng, j);
        if let PacVerdict::NotRejected { checks } = membership_with(&x, dim_k, &checks) {
            out.push(PacSample { element: x, checks_passed: checks });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum CPositivityVerdict {
    /// `φ̃(x) = value < 0` for `x` (normalized to unit trace) in sampled `P(A, C)`.
    Violation { x: ComplexMatrix, value: f64 },
    NoViolationFound { samples: usize, min_value: f64 },
}

impl CPositivityVerdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, CPositivityVerdict::Violation { .. })
    }
}

/// Tests `φ̃ ≥ 0` on sampled elements of `P(A, C)`. For full-domain maps the
/// eigenvectors of negative eigenvalues of `C_φ` are added as candidates
/// (kept only if they pass the membership test).
pub fn check_c_positive(phi: &LinearMap, cone: &MappingCone, budget: usize, rng_seed: u64) -> CPositivityVerdict {
    let k = phi.dim_k();
    let mut candidates: Vec<ComplexMatrix> =
        sample_pac(phi.domain(), k, cone, budget, rng_seed).into_iter().map(|s| s.element).collect();
    if let Ok(choi) = phi.choi_matrix() {
        let eig = hermitian_eig(choi.matrix()).expect("Choi matrix is Hermitian");
        let checks = prepared_samples(cone, cone.sampler.checks, derive_seed(rng_seed, u64::MAX));
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l >= -REJECT_TOL {
                break;
            }
            let v = eig.vector(i);
            let x = ComplexMatrix::outer(&v, &v);
            if !membership_with(&x, k, &checks).is_rejected() {
                candidates.push(x);
            }
        }
    }

    let mut min_value = f64::INFINITY;
    let total = candidates.len();
    for x in candidates {
        let tr = x.trace().re;
        if tr <= 0.0 {
            continue;
        }
        let x = x.scale_real(1.0 / tr);
        let value = match phi.dual_functional(&x) {
            Ok(v) => v.re,
            Err(_) => continue,
        };
        if value < -REJECT_TOL {
            return CPositivityVerdict::Violation { x, value };
        }
        min_value = min_value.min(value);
    }
    CPositivityVerdict::NoViolationFound { samples: total, min_value }
}
