//! Extensions of maps `φ: A → B(K)` to all of `B(H)`, found through their
//! Choi matrices.
//!
//! A Choi matrix `X` on `H ⊗ K` defines an extension of `φ` exactly when
//! `Tr(X (a ⊗ b)) = Tr(φ(a) bᵗ)` for a basis of `A` and of `B(K)_sa`. These
//! equalities cut out an affine subspace, and the target class (CP, positive,
//! `C`-positive) is a convex cone on top of it: the PSD cone, block-positive
//! matrices, or half-spaces from sampled elements of `P(H, C)`.
//!
//! Hermitian matrices are handled as real vectors through the isometry
//! `X ↦ (X_ii, √2 Re X_ij, √2 Im X_ij)_{i<j}`, so the real trace pairing
//! becomes the Euclidean inner product.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cones::{check_c_positive, sample_pac, CPositivityVerdict, ConeError, MappingCone};
use crate::matrix::{hermitian_eig, kron, psd_project, ComplexMatrix, C64};
use crate::opsys::{hermitian_matrix_units, OperatorSystem};
use crate::posmap::{
    check_positive, map_from_choi, restricted_norm, unitalize, ChoiMatrix, LinearMap, PosmapError, PositivityVerdict,
};
use crate::random::{derive_seed, normal, random_unit_vector, rng_from_seed};

/// Agreement and certificate tolerance for reporting success.
pub const ACCEPT_TOL: f64 = 1e-8;
/// A norm estimate above `1 + NORM_MARGIN` rules out a unital positive extension.
pub const NORM_MARGIN: f64 = 1e-6;

const STALL_WINDOW: usize = 500;
const STALL_RELATIVE: f64 = 1e-12;
const POLISH_STEPS: usize = 60;
const POLISH_AT: [usize; 3] = [2_000, 8_000, 32_000];
const CUT_ROUNDS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtendError {
    #[error("affine constraints are inconsistent (residual {residual:.3e})")]
    InconsistentAffine { residual: f64 },
    #[error("constraint {index} has the wrong shape")]
    DimensionMismatch { index: usize },
    #[error("composite dimension {side} is not {dim_h} x {dim_k}")]
    BadCompositeDimension { side: usize, dim_h: usize, dim_k: usize },
    #[error("map is not positive: λ_min = {lambda_min:.3e} at a positive element")]
    NotPositive { lambda_min: f64, element: ComplexMatrix },
    #[error(transparent)]
    Posmap(#[from] PosmapError),
    #[error(transparent)]
    Cone(#[from] ConeError),
}

fn herm_len(n: usize) -> usize {
    n * n
}

pub(crate) fn herm_to_vec(m: &ComplexMatrix) -> Vec<f64> {
    let n = m.rows();
    let s = std::f64::consts::SQRT_2;
    let mut v = Vec::with_capacity(herm_len(n));
    v.extend((0..n).map(|i| m[(i, i)].re));
    for i in 0..n {
        for j in i + 1..n {
            let z = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            v.push(s * z.re);
            v.push(s * z.im);
        }
    }
    v
}

pub(crate) fn vec_to_herm(v: &[f64], n: usize) -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = C64::new(v[i], 0.0);
    }
    let mut idx = n;
    for i in 0..n {
        for j in i + 1..n {
            let z = C64::new(v[idx] * s, v[idx + 1] * s);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            idx += 2;
        }
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(a, b)| *a += s * b);
}

/// `Re Tr(F X) = target` for Hermitian `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineConstraint {
    pub matrix: ComplexMatrix,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConeConstraint {
    Psd,
    /// `Re Tr(G X) ≥ 0` for each `G`.
    HalfSpaces(Vec<ComplexMatrix>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Bound on both the step length and the affine/cone gap at termination.
    pub tolerance: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iterations: 100_000, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityProblem {
    /// Side of the Hermitian unknown `X`.
    pub dim: usize,
    pub affine: Vec<AffineConstraint>,
    pub cone: ConeConstraint,
    pub options: SolveOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    /// The distance between the affine set and the cone stopped changing
    /// while still positive.
    Infeasible { stall_distance: f64 },
    MaxIterations { residual: f64 },
}

impl SolveStatus {
    pub fn is_feasible(&self) -> bool {
        matches!(self, SolveStatus::Feasible)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    /// The final iterate projected onto the affine set.
    pub x: ComplexMatrix,
    /// Largest `|Re Tr(F_i X) - t_i|`.
    pub affine_residual: f64,
    /// `λ_min(X)` for the PSD cone, else the smallest normalized margin
    /// `Re Tr(G X) / ‖G‖`.
    pub cone_residual: f64,
    pub iterations: usize,
}

/// Orthonormalized constraint rows with correspondingly transformed targets.
struct AffineProjector {
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    len: usize,
}

impl AffineProjector {
    fn new(dim: usize, constraints: &[AffineConstraint]) -> Result<Self, ExtendError> {
        let len = herm_len(dim);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut targets = Vec::new();
        for (index, c) in constraints.iter().enumerate() {
            if c.matrix.rows() != dim || c.matrix.cols() != dim {
                return Err(ExtendError::DimensionMismatch { index });
            }
            let mut v = herm_to_vec(&c.matrix);
            let mut t = c.target;
            let size = norm(&v).max(1.0);
            for _ in 0..2 {
                for (q, tau) in rows.iter().zip(&targets) {
                    let proj = dot(q, &v);
                    axpy(&mut v, -proj, q);
                    t -= proj * tau;
                }
            }
            let r = norm(&v);
            if r <= 1e-10 * size {
                if t.abs() > 1e-8 * c.target.abs().max(1.0) {
                    return Err(ExtendError::InconsistentAffine { residual: t.abs() });
                }
                continue;
            }
            v.iter_mut().for_each(|x| *x /= r);
            rows.push(v);
            targets.push(t / r);
        }
        Ok(Self { rows, targets, len })
    }

    fn project(&self, x: &mut [f64]) {
        for (q, tau) in self.rows.iter().zip(&self.targets) {
            let c = tau - dot(q, x);
            axpy(x, c, q);
        }
    }

    /// Orthogonal projection onto the directions along the affine set.
    fn project_null(&self, g: &mut [f64]) {
        for q in &self.rows {
            let c = dot(q, g);
            axpy(g, -c, q);
        }
    }

    /// Orthonormal basis of the directions along the affine set.
    fn null_basis(&self) -> Vec<Vec<f64>> {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for i in 0..self.len {
            let mut e = vec![0.0; self.len];
            e[i] = 1.0;
            for _ in 0..2 {
                self.project_null(&mut e);
                for b in &basis {
                    let c = dot(b, &e);
                    axpy(&mut e, -c, b);
                }
            }
            let r = norm(&e);
            if r > 1e-8 {
                e.iter_mut().for_each(|x| *x /= r);
                basis.push(e);
            }
            if basis.len() + self.rows.len() == self.len {
                break;
            }
        }
        basis
    }

    fn least_norm(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.len];
        self.project(&mut x);
        x
    }
}

fn affine_residual(problem: &FeasibilityProblem, x: &ComplexMatrix) -> f64 {
    problem
        .affine
        .iter()
        .map(|c| (c.matrix.hs_inner(x) - c.target).abs())
        .fold(0.0, f64::max)
}

fn min_margin(halfspaces: &[(Vec<f64>, f64)], x: &[f64]) -> f64 {
    halfspaces.iter().map(|(g, gn)| dot(g, x) / gn).fold(f64::INFINITY, f64::min)
}

/// Tracks the affine/cone gap to detect a stall at a positive distance.
struct StallDetector {
    history: Vec<f64>,
}

impl StallDetector {
    fn push(&mut self, gap: f64, tol: f64) -> bool {
        self.history.push(gap);
        let t = self.history.len();
        if t <= STALL_WINDOW || gap < tol {
            return false;
        }
        let old = self.history[t - 1 - STALL_WINDOW];
        (old - gap).abs() <= STALL_RELATIVE * gap
    }
}

/// Dykstra's alternating projections between the affine set and the cone,
/// started from the origin (so the first affine step is the least-norm
/// point).
pub fn dykstra_solve(problem: &FeasibilityProblem) -> Result<Solution, ExtendError> {
    let n = problem.dim;
    let proj = AffineProjector::new(n, &problem.affine)?;
    let opts = problem.options;
    let len = herm_len(n);

    let halfspaces: Vec<(Vec<f64>, f64)> = match &problem.cone {
        ConeConstraint::Psd => Vec::new(),
        ConeConstraint::HalfSpaces(gs) => gs
            .iter()
            .enumerate()
            .map(|(index, g)| {
                if g.rows() != n || g.cols() != n {
                    return Err(ExtendError::DimensionMismatch { index: problem.affine.len() + index });
                }
                let v = herm_to_vec(g);
                let gn = norm(&v);
                Ok((v, gn))
            })
            .filter(|r| r.as_ref().map(|(_, gn)| *gn > 0.0).unwrap_or(true))
            .collect::<Result<_, _>>()?,
    };
    let psd = matches!(problem.cone, ConeConstraint::Psd);

    let mut x = vec![0.0; len];
    let mut corrections = vec![vec![0.0; len]; if psd { 1 } else { halfspaces.len() }];
    let mut stall = StallDetector { history: Vec::new() };
    let mut status = None;
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    // without a strictly feasible point the iterates creep along a face of
    // the cone, so a factored Newton solve is attempted along the way
    let mut polished = None;

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut y = x.clone();
        proj.project(&mut y);
        let mut v = y.clone();
        if psd {
            let z: Vec<f64> = v.iter().zip(&corrections[0]).map(|(a, b)| a + b).collect();
            let p = herm_to_vec(&psd_project(&vec_to_herm(&z, n)).expect("symmetric input"));
            corrections[0] = z.iter().zip(&p).map(|(a, b)| a - b).collect();
            v = p;
        } else {
            for ((g, gn), q) in halfspaces.iter().zip(corrections.iter_mut()) {
                let z: Vec<f64> = v.iter().zip(q.iter()).map(|(a, b)| a + b).collect();
                let mut p = z.clone();
                let m = dot(g, &p);
                if m < 0.0 {
                    axpy(&mut p, -m / (gn * gn), g);
                }
                *q = z.iter().zip(&p).map(|(a, b)| a - b).collect();
                v = p;
            }
        }
        let step = dist(&v, &x);
        gap = dist(&v, &y);
        x = v;
        if step < opts.tolerance && gap < opts.tolerance {
            status = Some(SolveStatus::Feasible);
            break;
        }
        if psd && POLISH_AT.contains(&iterations) {
            if let Some(exact) = face_polish(&proj, &x, n, opts.tolerance) {
                polished = Some(exact);
                status = Some(SolveStatus::Feasible);
                break;
            }
        }
        if stall.push(gap, opts.tolerance) {
            status = Some(SolveStatus::Infeasible { stall_distance: gap });
            break;
        }
    }

    if psd && polished.is_none() && !matches!(status, Some(SolveStatus::Feasible)) {
        polished = face_polish(&proj, &x, n, opts.tolerance);
    }
    let mut out = match polished {
        Some(exact) => {
            status = Some(SolveStatus::Feasible);
            exact
        }
        None => {
            let mut out = x;
            proj.project(&mut out);
            out
        }
    };
    if !psd && !matches!(status, Some(SolveStatus::Feasible)) {
        // cyclic projections can stagnate near thin feasible sets; settle
        // the question exactly in the affine fiber
        if let Some(exact) = exact_halfspace_point(&proj, &halfspaces) {
            out = exact;
            status = Some(SolveStatus::Feasible);
        }
    }
    let xm = vec_to_herm(&out, n);
    let cone_residual = if psd {
        hermitian_eig(&xm).expect("Hermitian").min()
    } else {
        min_margin(&halfspaces, &out)
    };
    Ok(Solution {
        status: status.unwrap_or(SolveStatus::MaxIterations { residual: gap }),
        affine_residual: affine_residual(problem, &xm),
        x: xm,
        cone_residual,
        iterations,
    })
}

/// Feasible point of the form `Y Y*`, refined by damped Gauss-Newton
/// (Levenberg-Marquardt) on the affine equations, starting from the
/// dominant part of the cone iterate `x`. The factored form keeps every
/// candidate positive semidefinite. `None` unless some rank converges to an
/// exact fit.
fn face_polish(proj: &AffineProjector, x: &[f64], n: usize, tol: f64) -> Option<Vec<f64>> {
    let eig = hermitian_eig(&vec_to_herm(x, n)).ok()?;
    let top = eig.max();
    if top <= 0.0 {
        return None;
    }
    let x0 = proj.least_norm();
    let row_part = |c: &[f64]| {
        let mut g = c.to_vec();
        proj.project_null(&mut g);
        c.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<f64>>()
    };
    let residual_of = |y: &ComplexMatrix| {
        let candidate = herm_to_vec(&y.matmul(&y.adjoint()));
        let r: Vec<f64> = x0.iter().zip(row_part(&candidate)).map(|(a, b)| a - b).collect();
        (candidate, r)
    };
    let mut ranks: Vec<usize> = [1e-9, 1e-7, 1e-5, 1e-3, 1e-2, 1e-1]
        .iter()
        .map(|c| eig.eigenvalues.iter().filter(|&&l| l > c * top).count())
        .collect();
    ranks.dedup();
    // the limit's rank can differ from what the iterate shows
    ranks.extend((1..=n).filter(|r| !ranks.contains(r)).collect::<Vec<_>>());
    for r in ranks {
        let mut y = ComplexMatrix::from_fn(n, r, |i, j| {
            let k = n - 1 - j;
            eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(1e-4 * top).sqrt()
        });
        let (mut candidate, mut residual) = residual_of(&y);
        let mut damping = 1e-8 * top;
        let params = 2 * n * r;
        let perturb = |y: &ComplexMatrix, p: usize, d: f64| {
            let mut out = y.clone();
            out[(p / 2 / r, p / 2 % r)] += if p % 2 == 0 { C64::new(d, 0.0) } else { C64::new(0.0, d) };
            out
        };
        for _ in 0..POLISH_STEPS {
            if norm(&residual) < 0.1 * tol {
                return Some(candidate);
            }
            let jac: Vec<Vec<f64>> = (0..params)
                .map(|p| {
                    let dy = perturb(&ComplexMatrix::zeros(n, r), p, 1.0);
                    let t = dy.matmul(&y.adjoint());
                    row_part(&herm_to_vec(&(&t + &t.adjoint())))
                })
                .collect();
            let mut improved = false;
            for _ in 0..12 {
                // damping enters as extra rows sqrt(damping) * I with zero target
                let cols: Vec<Vec<f64>> = jac
                    .iter()
                    .enumerate()
                    .map(|(p, c)| {
                        let mut col = c.clone();
                        col.extend((0..params).map(|q| if q == p { damping.sqrt() } else { 0.0 }));
                        col
                    })
                    .collect();
                let mut rhs = residual.clone();
                rhs.resize(residual.len() + params, 0.0);
                let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
                let step = least_squares(&refs, &rhs);
                let trial = step.iter().enumerate().fold(y.clone(), |acc, (p, &d)| perturb(&acc, p, d));
                let (c, res) = residual_of(&trial);
                if norm(&res) < norm(&residual) {
                    y = trial;
                    candidate = c;
                    residual = res;
                    damping /= 10.0;
                    improved = true;
                    break;
                }
                damping *= 10.0;
            }
            if !improved {
                break;
            }
        }
        if norm(&residual) < 0.1 * tol {
            return Some(candidate);
        }
    }
    None
}

/// Least-squares solution of `min ‖Σ_j z_j c_j - f‖` over the given columns,
/// by Gram-Schmidt QR.
fn least_squares(cols: &[&[f64]], f: &[f64]) -> Vec<f64> {
    let p = cols.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut r = vec![vec![0.0; p]; p];
    // dependent columns leave round-off residuals; treat them as zero
    let pivot_floor = 1e-10 * cols.iter().map(|c| norm(c)).fold(1e-300, f64::max);
    for (j, c) in cols.iter().enumerate() {
        let mut v = c.to_vec();
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let d = dot(qi, &v);
                r[i][j] += d;
                axpy(&mut v, -d, qi);
            }
        }
        let nv = norm(&v);
        if nv > pivot_floor {
            r[j][j] = nv;
            v.iter_mut().for_each(|x| *x /= nv);
        } else {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        q.push(v);
    }
    let qtf: Vec<f64> = q.iter().map(|qi| dot(qi, f)).collect();
    let mut z = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = ((i + 1)..p).map(|j| r[i][j] * z[j]).sum();
        z[i] = if r[i][i].abs() > pivot_floor { (qtf[i] - s) / r[i][i] } else { 0.0 };
    }
    z
}

/// Lawson-Hanson active-set solver for `min ‖E u - f‖` with `u ≥ 0`; `cols`
/// are the columns of `E`.
fn nnls(cols: &[Vec<f64>], f: &[f64]) -> Vec<f64> {
    let m = cols.len();
    let mut u = vec![0.0; m];
    let mut passive = vec![false; m];
    let residual = |u: &[f64]| {
        let mut r = f.to_vec();
        for (c, &w) in cols.iter().zip(u) {
            if w != 0.0 {
                axpy(&mut r, -w, c);
            }
        }
        r
    };
    let scale = cols.iter().map(|c| norm(c)).fold(norm(f), f64::max).max(1.0);
    let tol = 1e-12 * scale * scale;
    for _ in 0..3 * m + 10 {
        let r = residual(&u);
        let Some((t, wt)) = (0..m)
            .filter(|&j| !passive[j])
            .map(|j| (j, dot(&cols[j], &r)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
        else {
            break;
        };
        if wt <= tol {
            break;
        }
        passive[t] = true;
        loop {
            let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
            let sub: Vec<&[f64]> = idx.iter().map(|&j| cols[j].as_slice()).collect();
            let z = least_squares(&sub, f);
            if z.iter().all(|&v| v > 0.0) {
                u.iter_mut().for_each(|x| *x = 0.0);
                for (&j, &v) in idx.iter().zip(&z) {
                    u[j] = v;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (&j, &v) in idx.iter().zip(&z) {
                if v <= 0.0 {
                    alpha = alpha.min(u[j] / (u[j] - v));
                }
            }
            for (&j, &v) in idx.iter().zip(&z) {
                u[j] += alpha * (v - u[j]);
                if u[j] <= 1e-15 {
                    u[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    u
}

/// Point of the affine set satisfying every half-space, or `None` when the
/// system is infeasible. Solves the least-distance problem
/// `min ‖s‖` with `G s ≥ h` in fiber coordinates `X = X0 + N s` through its
/// NNLS dual.
fn exact_halfspace_point(proj: &AffineProjector, halfspaces: &[(Vec<f64>, f64)]) -> Option<Vec<f64>> {
    let x0 = proj.least_norm();
    let null = proj.null_basis();
    let d = null.len();
    // column j of E is (G_j, h_j) with G_j = Nᵀ g_j / ‖g_j‖ and h_j = -⟨g_j, X0⟩ / ‖g_j‖
    let cols: Vec<Vec<f64>> = halfspaces
        .iter()
        .map(|(g, gn)| {
            let mut c: Vec<f64> = null.iter().map(|b| dot(b, g) / gn).collect();
            c.push(-dot(g, &x0) / gn);
            c
        })
        .collect();
    let mut f = vec![0.0; d + 1];
    f[d] = 1.0;
    let u = nnls(&cols, &f);
    let mut r: Vec<f64> = f.iter().map(|v| -v).collect();
    for (c, &w) in cols.iter().zip(&u) {
        axpy(&mut r, w, c);
    }
    if r[d].abs() < 1e-12 {
        return None;
    }
    let mut x = x0;
    for (b, rj) in null.iter().zip(&r[..d]) {
        axpy(&mut x, -rj / r[d], b);
    }
    let worst = min_margin(halfspaces, &x);
    (worst >= -1e-10).then_some(x)
}

/// Complex vector as `[re, im]` pairs for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct StateVector(pub Vec<C64>);

impl From<Vec<[f64; 2]>> for StateVector {
    fn from(v: Vec<[f64; 2]>) -> Self {
        StateVector(v.into_iter().map(|[re, im]| C64::new(re, im)).collect())
    }
}

impl From<StateVector> for Vec<[f64; 2]> {
    fn from(v: StateVector) -> Self {
        v.0.into_iter().map(|z| [z.re, z.im]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// Smallest eigenvalue of the extension's Choi matrix.
    ChoiSpectrum { min_eigenvalue: f64 },
    /// Smallest `⟨ξ⊗η, C (ξ⊗η)⟩` found over unit product vectors.
    ProductStateValue { value: f64, xi: StateVector, eta: StateVector },
    /// Smallest margin over the sampled half-spaces, with the final sampled
    /// `C`-positivity check of the extension (absent when no samples were used).
    SampledMargins { min_margin: f64, constraints: usize, post_check: Option<CPositivityVerdict> },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionResult {
    pub status: SolveStatus,
    pub extension: Option<LinearMap>,
    pub certificate: Certificate,
    pub agreement_error: Option<f64>,
    pub iterations: usize,
}

/// `Re Tr(X (a ⊗ b)) = Re Tr(φ(a) bᵗ)` for the domain basis `a` and the
/// Hermitian matrix units `b` of `B(K)`.
pub fn extension_constraints(phi: &LinearMap) -> Vec<AffineConstraint> {
    let k = phi.dim_k();
    let units = hermitian_matrix_units(k);
    let mut out = Vec::with_capacity(phi.domain().dim() * k * k);
    for (a, img) in phi.domain().basis().iter().zip(phi.images()) {
        for b in &units {
            out.push(AffineConstraint { matrix: kron(a, b), target: img.trace_product(&b.transpose()).re });
        }
    }
    out
}

fn choi_to_map(x: &ComplexMatrix, n: usize, k: usize) -> LinearMap {
    map_from_choi(&ChoiMatrix::new(n, k, x.hermitian_part()).expect("Hermitian part"))
}

/// Completely positive extension via a PSD Choi matrix.
pub fn extend_cp(phi: &LinearMap, options: SolveOptions) -> Result<ExtensionResult, ExtendError> {
    let (n, k) = (phi.dim_h(), phi.dim_k());
    let problem =
        FeasibilityProblem { dim: n * k, affine: extension_constraints(phi), cone: ConeConstraint::Psd, options };
    let sol = dykstra_solve(&problem)?;
    let mut status = sol.status.clone();
    let (extension, agreement, certificate) = if status.is_feasible() {
        let ext = choi_to_map(&sol.x, n, k);
        let err = ext.agreement_error(phi);
        if err >= ACCEPT_TOL || sol.cone_residual < -ACCEPT_TOL {
            status = SolveStatus::MaxIterations { residual: err.max(-sol.cone_residual) };
        }
        (Some(ext), Some(err), Certificate::ChoiSpectrum { min_eigenvalue: sol.cone_residual })
    } else {
        (None, None, Certificate::ChoiSpectrum { min_eigenvalue: sol.cone_residual })
    };
    let extension = if status.is_feasible() { extension } else { None };
    let agreement_error = if status.is_feasible() { agreement } else { None };
    Ok(ExtensionResult { status, extension, certificate, agreement_error, iterations: sol.iterations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductMin {
    pub value: f64,
    pub xi: Vec<C64>,
    pub eta: Vec<C64>,
}

impl ProductMin {
    pub fn product_vector(&self) -> Vec<C64> {
        self.xi.iter().flat_map(|a| self.eta.iter().map(move |b| a * b)).collect()
    }
}

/// `(ξ* ⊗ 1) C (ξ ⊗ 1)`, a `k x k` matrix.
fn contract_first(c: &ComplexMatrix, xi: &[C64], k: usize) -> ComplexMatrix {
    let n = xi.len();
    let mut out = ComplexMatrix::zeros(k, k);
    for s in 0..n {
        for t in 0..n {
            let w = xi[s].conj() * xi[t];
            for p in 0..k {
                for q in 0..k {
                    out[(p, q)] += w * c[(s * k + p, t * k + q)];
                }
            }
        }
    }
    out.hermitian_part()
}

/// `(1 ⊗ η*) C (1 ⊗ η)`, an `n x n` matrix.
fn contract_second(c: &ComplexMatrix, eta: &[C64], n: usize) -> ComplexMatrix {
    let k = eta.len();
    let mut out = ComplexMatrix::zeros(n, n);
    for p in 0..k {
        for q in 0..k {
            let w = eta[p].conj() * eta[q];
            for s in 0..n {
                for t in 0..n {
                    out[(s, t)] += w * c[(s * k + p, t * k + q)];
                }
            }
        }
    }
    out.hermitian_part()
}

fn bottom(m: &ComplexMatrix) -> (f64, Vec<C64>) {
    let e = hermitian_eig(m).expect("Hermitian");
    (e.min(), e.vector(0))
}

/// Alternating minimization from one starting `ξ`.
fn alternate(c: &ComplexMatrix, n: usize, k: usize, mut xi: Vec<C64>) -> ProductMin {
    let (mut value, mut eta) = bottom(&contract_first(c, &xi, k));
    for _ in 0..500 {
        let (_, new_xi) = bottom(&contract_second(c, &eta, n));
        xi = new_xi;
        let (v, new_eta) = bottom(&contract_first(c, &xi, k));
        eta = new_eta;
        let done = value - v <= 1e-14 * (1.0 + v.abs());
        value = v;
        if done {
            break;
        }
    }
    ProductMin { value, xi, eta }
}

fn product_min_from(
    c: &ComplexMatrix,
    n: usize,
    k: usize,
    restarts: usize,
    rng_seed: u64,
    warm: Option<&[C64]>,
) -> ProductMin {
    let mut rng = rng_from_seed(rng_seed);
    let mut best: Option<ProductMin> = None;
    let mut starts: Vec<Vec<C64>> = warm.map(|w| vec![w.to_vec()]).unwrap_or_default();
    for r in 0..restarts.max(1) {
        if r < n {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[r] = C64::new(1.0, 0.0);
            starts.push(e);
        } else {
            starts.push(random_unit_vector(&mut rng, n));
        }
    }
    for xi in starts {
        let cand = alternate(c, n, k, xi);
        if best.as_ref().is_none_or(|b| cand.value < b.value) {
            best = Some(cand);
        }
    }
    best.expect("at least one start")
}

/// Smallest `⟨ξ⊗η, C (ξ⊗η)⟩` over unit `ξ ∈ C^{dim_h}`, `η ∈ C^{dim_k}`, by
/// multistart alternating minimization. The result is an upper bound on the
/// true minimum.
pub fn min_product_state_value(
    c: &ComplexMatrix,
    dim_h: usize,
    dim_k: usize,
    restarts: usize,
    rng_seed: u64,
) -> Result<ProductMin, ExtendError> {
    if !c.is_square() || c.rows() != dim_h * dim_k || dim_h == 0 || dim_k == 0 {
        return Err(ExtendError::BadCompositeDimension { side: c.rows(), dim_h, dim_k });
    }
    if !c.is_hermitian(crate::matrix::HERMITIAN_TOL) {
        return Err(ExtendError::Posmap(PosmapError::NonHermitian));
    }
    Ok(product_min_from(&c.hermitian_part(), dim_h, dim_k, restarts, rng_seed, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveOptions {
    /// Starting points for the ascent; the first is the least-norm point.
    pub restarts: usize,
    pub max_steps: usize,
    /// Restarts of the inner product-state minimization at each step.
    pub inner_restarts: usize,
    /// Restarts of the final product-state check before reporting success.
    pub verify_restarts: usize,
}

impl Default for PositiveOptions {
    fn default() -> Self {
        Self { restarts: 64, max_steps: 400, inner_restarts: 4, verify_restarts: 256 }
    }
}

impl PositiveOptions {
    pub fn with_restarts(restarts: usize) -> Self {
        Self { restarts, ..Self::default() }
    }
}

/// Positive extension: a block-positive Choi matrix in the affine fiber.
///
/// `v(X) = min ⟨ξ⊗η, X ξ⊗η⟩` is concave on the fiber. Each start runs
/// supergradient ascent with Polyak steps toward `v = 0`, the supergradient
/// being the fiber component of `(ξ⊗η)(ξ⊗η)*` at the current minimizer.
/// A candidate is accepted only after a check with `verify_restarts` starts.
pub fn extend_positive(phi: &LinearMap, options: PositiveOptions, rng_seed: u64) -> Result<ExtensionResult, ExtendError> {
    let (n, k) = (phi.dim_h(), phi.dim_k());
    let dim = n * k;
    let proj = AffineProjector::new(dim, &extension_constraints(phi))?;
    let x0 = proj.least_norm();
    let spread = norm(&x0).max(1.0) * 0.5;

    let mut best: Option<ProductMin> = None;
    let mut total_steps = 0;
    for r in 0..options.restarts.max(1) {
        let stream = derive_seed(rng_seed, r as u64);
        let mut x = x0.clone();
        if r > 0 {
            let mut rng = rng_from_seed(stream);
            let mut g: Vec<f64> = (0..x.len()).map(|_| normal(&mut rng)).collect();
            proj.project_null(&mut g);
            let gn = norm(&g);
            if gn > 0.0 {
                axpy(&mut x, spread / gn, &g);
            }
        }
        let mut warm: Option<Vec<C64>> = None;
        let mut restart_best = f64::NEG_INFINITY;
        let mut since_improvement = 0;
        for t in 0..options.max_steps {
            total_steps += 1;
            let xm = vec_to_herm(&x, dim);
            let mut pm =
                product_min_from(&xm, n, k, options.inner_restarts, derive_seed(stream, t as u64 + 1), warm.as_deref());
            if pm.value >= -ACCEPT_TOL * 0.1 {
                let check = product_min_from(&xm, n, k, options.verify_restarts, derive_seed(stream, 0), Some(&pm.xi));
                if check.value >= -ACCEPT_TOL {
                    let ext = choi_to_map(&xm, n, k);
                    let err = ext.agreement_error(phi);
                    if err < ACCEPT_TOL {
                        return Ok(ExtensionResult {
                            status: SolveStatus::Feasible,
                            extension: Some(ext),
                            certificate: Certificate::ProductStateValue {
                                value: check.value,
                                xi: StateVector(check.xi),
                                eta: StateVector(check.eta),
                            },
                            agreement_error: Some(err),
                            iterations: total_steps,
                        });
                    }
                }
                pm = check;
            }
            if best.as_ref().is_none_or(|b| pm.value > b.value) {
                best = Some(pm.clone());
            }
            if pm.value > restart_best + 1e-9 * (1.0 + restart_best.abs()) {
                restart_best = pm.value;
                since_improvement = 0;
            } else {
                since_improvement += 1;
                if since_improvement >= 60 {
                    break;
                }
            }
            let p = pm.product_vector();
            let mut g = herm_to_vec(&ComplexMatrix::outer(&p, &p));
            proj.project_null(&mut g);
            let g2 = dot(&g, &g);
            if g2 < 1e-14 {
                // this product value is pinned by the constraints
                break;
            }
            axpy(&mut x, (1e-10 - pm.value) / g2, &g);
            warm = Some(pm.xi);
        }
    }
    let best = best.expect("at least one step");
    Ok(ExtensionResult {
        status: SolveStatus::Infeasible { stall_distance: -best.value },
        extension: None,
        certificate: Certificate::ProductStateValue { value: best.value, xi: StateVector(best.xi), eta: StateVector(best.eta) },
        agreement_error: None,
        iterations: total_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionOptions {
    pub restarts: usize,
    /// Extra extension searches (with doubled restarts) when the norm test
    /// passes but the first search fails.
    pub retries: usize,
    /// Report a failed search as `Inconclusive` instead of `ProbablyExists`.
    pub report_inconclusive: bool,
    pub positivity_budget: usize,
}

impl Default for CriterionOptions {
    fn default() -> Self {
        Self { restarts: 64, retries: 1, report_inconclusive: false, positivity_budget: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum CriterionVerdict {
    /// The unitalized map has norm at least `norm_lower_bound > 1` on its
    /// domain, attained at `witness`, so no positive extension exists.
    NoExtension { norm_lower_bound: f64, witness: ComplexMatrix },
    /// No norm witness above one was found. `extension` holds the search
    /// result, transported back to the original map when successful.
    ProbablyExists { norm_estimate: f64, extension: ExtensionResult },
    Inconclusive { norm_estimate: f64, extension: ExtensionResult },
}

/// Decides extendibility of a positive map through the norm of its
/// unitalization, with a constructive search when the norm looks like one.
pub fn extension_criterion(
    phi: &LinearMap,
    options: CriterionOptions,
    rng_seed: u64,
) -> Result<CriterionVerdict, ExtendError> {
    if let PositivityVerdict::ViolationWitness { element, lambda_min } =
        check_positive(phi, options.positivity_budget, rng_seed)
    {
        return Err(ExtendError::NotPositive { lambda_min, element });
    }
    let (unital, record) = unitalize(phi)?;
    let estimate = restricted_norm(&unital, options.restarts, derive_seed(rng_seed, 1));
    if estimate.lower_bound > 1.0 + NORM_MARGIN {
        return Ok(CriterionVerdict::NoExtension { norm_lower_bound: estimate.lower_bound, witness: estimate.witness });
    }

    let mut result = None;
    for attempt in 0..=options.retries {
        let opts = PositiveOptions::with_restarts(options.restarts << attempt);
        let res = extend_positive(&unital, opts, derive_seed(rng_seed, 2 + attempt as u64))?;
        let done = res.status.is_feasible();
        result = Some(res);
        if done {
            break;
        }
    }
    let mut res = result.expect("at least one attempt");
    if let Some(eta) = res.extension.take() {
        let ext = record.transport_extension(&eta);
        let choi = ext.choi_matrix()?;
        let pm = product_min_from(choi.matrix(), ext.dim_h(), ext.dim_k(), 64, derive_seed(rng_seed, 99), None);
        let err = ext.agreement_error(phi);
        res.agreement_error = Some(err);
        res.certificate =
            Certificate::ProductStateValue { value: pm.value, xi: StateVector(pm.xi), eta: StateVector(pm.eta) };
        if err >= ACCEPT_TOL || pm.value < -ACCEPT_TOL {
            res.status = SolveStatus::MaxIterations { residual: err.max(-pm.value) };
            res.agreement_error = None;
        } else {
            res.extension = Some(ext);
        }
    }
    if !res.status.is_feasible() && options.report_inconclusive {
        return Ok(CriterionVerdict::Inconclusive { norm_estimate: estimate.lower_bound, extension: res });
    }
    Ok(CriterionVerdict::ProbablyExists { norm_estimate: estimate.lower_bound, extension: res })
}

fn unit_frobenius(m: ComplexMatrix) -> ComplexMatrix {
    let f = m.frobenius_norm();
    if f > 0.0 {
        m.scale_real(1.0 / f)
    } else {
        m
    }
}

/// `C`-positive extension: the Choi matrix must pair nonnegatively with
/// sampled elements of `P(H, C)`. After each solve, a fresh sampled check
/// of the extension runs and any violating element is added as a cut, for
/// up to ten rounds. With `sample_budget = 0` only the affine constraints
/// (and `1 ⊗ 1`) are imposed and no check runs.
pub fn extend_c_positive(
    phi: &LinearMap,
    cone: &MappingCone,
    sample_budget: usize,
    rng_seed: u64,
    options: SolveOptions,
) -> Result<ExtensionResult, ExtendError> {
    let phi = phi.to_real_domain();
    let (n, k) = (phi.dim_h(), phi.dim_k());
    let affine = extension_constraints(&phi);
    AffineProjector::new(n * k, &affine)?;
    let full = OperatorSystem::full(n);
    let mut cuts: Vec<ComplexMatrix> = sample_pac(&full, k, cone, sample_budget, rng_seed)
        .into_iter()
        .map(|s| unit_frobenius(s.element))
        .collect();

    let mut iterations = 0;
    let mut round = 0;
    loop {
        let problem = FeasibilityProblem {
            dim: n * k,
            affine: affine.clone(),
            cone: ConeConstraint::HalfSpaces(cuts.clone()),
            options,
        };
        let sol = dykstra_solve(&problem)?;
        iterations += sol.iterations;
        if !sol.status.is_feasible() {
            return Ok(ExtensionResult {
                status: sol.status,
                extension: None,
                certificate: Certificate::SampledMargins {
                    min_margin: sol.cone_residual,
                    constraints: cuts.len(),
                    post_check: None,
                },
                agreement_error: None,
                iterations,
            });
        }
        let ext = choi_to_map(&sol.x, n, k);
        let post_check = (sample_budget > 0)
            .then(|| check_c_positive(&ext, cone, sample_budget, derive_seed(rng_seed, 1000 + round as u64)));
        if let Some(CPositivityVerdict::Violation { x, .. }) = &post_check {
            if round < CUT_ROUNDS {
                cuts.push(unit_frobenius(x.clone()));
                round += 1;
                continue;
            }
        }
        let err = ext.agreement_error(&phi);
        let mut status = sol.status;
        if err >= ACCEPT_TOL || sol.cone_residual < -ACCEPT_TOL {
            status = SolveStatus::MaxIterations { residual: err.max(-sol.cone_residual) };
        }
        let ok = status.is_feasible();
        return Ok(ExtensionResult {
            status,
            extension: ok.then_some(ext),
            certificate: Certificate::SampledMargins { min_margin: sol.cone_residual, constraints: cuts.len(), post_check },
            agreement_error: ok.then_some(err),
            iterations,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::{kraus_map, ConeKind};
    use crate::matrix::lambda_min;
    use crate::opsys::Flavor;
    use crate::posmap::z_map;
    use crate::random::{random_hermitian, random_matrix};

    fn pauli_x() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    fn span_i_x() -> OperatorSystem {
        OperatorSystem::build(2, Flavor::RealSelfAdjoint, vec![ComplexMatrix::identity(2), pauli_x()]).unwrap()
    }

    #[test]
    fn vector_isometry_round_trips() {
        let mut rng = rng_from_seed(0);
        let a = random_hermitian(&mut rng, 5);
        let b = random_hermitian(&mut rng, 5);
        assert!(vec_to_herm(&herm_to_vec(&a), 5).max_abs_diff(&a) < 1e-14);
        assert!((dot(&herm_to_vec(&a), &herm_to_vec(&b)) - a.hs_inner(&b)).abs() < 1e-12);
    }

    fn planted(n: usize, m: usize, seed: u64) -> (FeasibilityProblem, ComplexMatrix) {
        let mut rng = rng_from_seed(seed);
        let g = random_matrix(&mut rng, n);
        let x = g.adjoint().matmul(&g);
        let affine = (0..m)
            .map(|_| {
                let f = random_hermitian(&mut rng, n);
                let target = f.hs_inner(&x);
                AffineConstraint { matrix: f, target }
            })
            .collect();
        (FeasibilityProblem { dim: n, affine, cone: ConeConstraint::Psd, options: SolveOptions::default() }, x)
    }

    #[test]
    fn planted_psd_problems_are_solved() {
        for seed in 0..200u64 {
            let n = 2 + (seed as usize % 5);
            let m = (n * n) / 2;
            let (problem, _) = planted(n, m, seed);
            let sol = dykstra_solve(&problem).unwrap();
            assert!(sol.status.is_feasible(), "seed {seed}: {:?}", sol.status);
            assert!(sol.affine_residual < 1e-9, "seed {seed}: {}", sol.affine_residual);
            assert!(sol.cone_residual >= -1e-9);
        }
    }

    #[test]
    fn planted_problem_of_side_sixteen() {
        let (problem, _) = planted(16, 128, 77);
        let sol = dykstra_solve(&problem).unwrap();
        assert!(sol.status.is_feasible());
        assert!(sol.affine_residual < 1e-9);
        assert!(sol.cone_residual >= -1e-9);
    }

    #[test]
    fn inconsistent_constraints_are_rejected() {
        let f = ComplexMatrix::identity(2);
        let problem = FeasibilityProblem {
            dim: 2,
            affine: vec![
                AffineConstraint { matrix: f.clone(), target: 1.0 },
                AffineConstraint { matrix: f.scale_real(2.0), target: 3.0 },
            ],
            cone: ConeConstraint::Psd,
            options: SolveOptions::default(),
        };
        assert!(matches!(dykstra_solve(&problem), Err(ExtendError::InconsistentAffine { .. })));
    }

    #[test]
    fn infeasible_psd_problem_stalls_at_distance() {
        // X = diag(-1, 0) is forced; its distance to the PSD cone is 1
        let problem = FeasibilityProblem {
            dim: 2,
            affine: hermitian_matrix_units(2)
                .into_iter()
                .enumerate()
                .map(|(i, m)| AffineConstraint { matrix: m, target: if i == 0 { -1.0 } else { 0.0 } })
                .collect(),
            cone: ConeConstraint::Psd,
            options: SolveOptions::default(),
        };
        match dykstra_solve(&problem).unwrap().status {
            SolveStatus::Infeasible { stall_distance } => assert!((stall_distance - 1.0).abs() < 1e-9),
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn halfspace_problem() {
        // x11 + x22 = 1 with x11 - x22 ≥ 0.5 and x11 ≥ 0, x22 ≥ 0
        let problem = FeasibilityProblem {
            dim: 2,
            affine: vec![AffineConstraint { matrix: ComplexMatrix::identity(2), target: 1.0 }],
            cone: ConeConstraint::HalfSpaces(vec![
                ComplexMatrix::from_real_rows(&[&[0.5, 0.0], &[0.0, -1.5]]),
                ComplexMatrix::unit(2, 0, 0),
                ComplexMatrix::unit(2, 1, 1),
            ]),
            options: SolveOptions::default(),
        };
        let sol = dykstra_solve(&problem).unwrap();
        assert!(sol.status.is_feasible());
        assert!(sol.x[(0, 0)].re - sol.x[(1, 1)].re >= 0.5 - 1e-8);
        assert!(sol.cone_residual >= -1e-9);
    }

    #[test]
    fn nnls_matches_known_solution() {
        // min ‖E u - f‖ with u ≥ 0, E = I_2 and f = (1, -2) → u = (1, 0)
        let u = nnls(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, -2.0]);
        assert!((u[0] - 1.0).abs() < 1e-14 && u[1] == 0.0);
    }

    #[test]
    fn contradictory_halfspaces_are_infeasible() {
        let problem = FeasibilityProblem {
            dim: 2,
            affine: vec![AffineConstraint { matrix: ComplexMatrix::identity(2), target: 1.0 }],
            cone: ConeConstraint::HalfSpaces(vec![
                ComplexMatrix::from_real_rows(&[&[-1.0, 0.0], &[0.0, 1.0]]),
                ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]),
                ComplexMatrix::from_real_rows(&[&[-1.0, 0.0], &[0.0, 0.0]]),
            ]),
            options: SolveOptions { max_iterations: 5000, tolerance: 1e-10 },
        };
        // x11 ≤ 0, x22 ≥ x11, x11 ≥ x22 force x11 = x22 ≤ 0, against trace 1
        let sol = dykstra_solve(&problem).unwrap();
        assert!(!sol.status.is_feasible(), "{:?}", sol.status);
    }

    #[test]
    fn thin_halfspace_system_is_found_feasible() {
        // x11 + x22 = 1 and the wedge x11 - x22 ≥ 0, x22 - x11 ≥ -1e-9
        let problem = FeasibilityProblem {
            dim: 2,
            affine: vec![AffineConstraint { matrix: ComplexMatrix::identity(2), target: 1.0 }],
            cone: ConeConstraint::HalfSpaces(vec![
                ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]),
                ComplexMatrix::from_real_rows(&[&[-1.0 + 1e-9, 0.0], &[0.0, 1.0 + 1e-9]]),
                ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]),
                ComplexMatrix::from_real_rows(&[&[0.0, -1.0], &[-1.0, 0.0]]),
            ]),
            options: SolveOptions { max_iterations: 3000, tolerance: 1e-10 },
        };
        let sol = dykstra_solve(&problem).unwrap();
        assert!(sol.status.is_feasible(), "{:?}", sol.status);
        assert!(sol.cone_residual >= -1e-10);
        assert!(sol.affine_residual < 1e-12);
    }

    #[test]
    fn cp_extension_of_inclusion_on_span_i_x() {
        let phi = LinearMap::identity(span_i_x());
        let res = extend_cp(&phi, SolveOptions::default()).unwrap();
        assert!(res.status.is_feasible(), "{:?}", res.status);
        assert!(res.agreement_error.unwrap() < 1e-8);
        match res.certificate {
            Certificate::ChoiSpectrum { min_eigenvalue } => assert!(min_eigenvalue >= -1e-8),
            c => panic!("{c:?}"),
        }
    }

    #[test]
    fn transpose_has_no_cp_extension() {
        let res = extend_cp(&LinearMap::transpose(OperatorSystem::full(2)), SolveOptions::default()).unwrap();
        match res.status {
            SolveStatus::Infeasible { stall_distance } => assert!((stall_distance - 1.0).abs() < 1e-3),
            s => panic!("{s:?}"),
        }
        assert!(res.extension.is_none());
    }

    #[test]
    fn full_domain_cp_map_is_its_own_extension() {
        let mut rng = rng_from_seed(2);
        let phi = kraus_map(&[random_matrix(&mut rng, 2), random_matrix(&mut rng, 2)]);
        let res = extend_cp(&phi, SolveOptions::default()).unwrap();
        assert!(res.status.is_feasible());
        let ext = res.extension.unwrap();
        assert!(ext.choi_matrix().unwrap().matrix().max_abs_diff(phi.choi_matrix().unwrap().matrix()) < 1e-8);
    }

    #[test]
    fn product_state_minimum_examples() {
        let swap = LinearMap::transpose(OperatorSystem::full(2)).choi_matrix().unwrap().into_matrix();
        let pm = min_product_state_value(&swap, 2, 2, 16, 0).unwrap();
        assert!(pm.value.abs() < 1e-10, "{}", pm.value);
        let neg = ComplexMatrix::identity(6).scale_real(-1.0);
        assert!((min_product_state_value(&neg, 2, 3, 4, 0).unwrap().value + 1.0).abs() < 1e-12);
        let choi = crate::cones::choi_map().choi_matrix().unwrap().into_matrix();
        assert!(min_product_state_value(&choi, 3, 3, 32, 1).unwrap().value > -1e-9);
        assert!(matches!(
            min_product_state_value(&ComplexMatrix::identity(5), 2, 2, 1, 0),
            Err(ExtendError::BadCompositeDimension { .. })
        ));
    }

    #[test]
    fn product_state_value_matches_brute_force_on_qubits() {
        let mut rng = rng_from_seed(8);
        for _ in 0..5 {
            let c = random_hermitian(&mut rng, 4);
            let pm = min_product_state_value(&c, 2, 2, 8, 3).unwrap();
            // grid over the Bloch spheres
            let steps = 40;
            let mut grid = f64::INFINITY;
            let vec = |th: f64, ph: f64| vec![C64::new((th / 2.0).cos(), 0.0), C64::from_polar((th / 2.0).sin(), ph)];
            for a in 0..=steps {
                for b in 0..steps {
                    let xi = vec(std::f64::consts::PI * a as f64 / steps as f64, 2.0 * std::f64::consts::PI * b as f64 / steps as f64);
                    let m = contract_first(&c, &xi, 2);
                    grid = grid.min(lambda_min(&m).unwrap());
                }
            }
            assert!(pm.value <= grid + 1e-12);
            assert!(pm.value >= grid - 0.02);
        }
    }

    #[test]
    fn z_map_three_has_positive_extension() {
        let phi = z_map(3, 1.0);
        let res = extend_positive(&phi, PositiveOptions::with_restarts(8), 0).unwrap();
        assert!(res.status.is_feasible(), "{:?}", res.status);
        assert!(res.agreement_error.unwrap() < 1e-8);
    }

    #[test]
    fn positive_extension_of_decomposable_restriction() {
        let mut rng = rng_from_seed(5);
        let cp = kraus_map(&[random_matrix(&mut rng, 3).scale_real(0.5)]);
        let t = crate::cones::co_kraus_map(&[random_matrix(&mut rng, 3).scale_real(0.5)]);
        let phi = cp.add_scaled(1.0, &t).restrict(&OperatorSystem::diagonal(3)).unwrap();
        let res = extend_positive(&phi, PositiveOptions::with_restarts(4), 1).unwrap();
        assert!(res.status.is_feasible());
        let ext = res.extension.unwrap();
        assert!(ext.agreement_error(&phi) < 1e-8);
        let c = ext.choi_matrix().unwrap();
        assert!(min_product_state_value(c.matrix(), 3, 3, 64, 9).unwrap().value >= -1e-8);
    }

    #[test]
    fn criterion_on_z_maps() {
        let scaled = z_map(4, 2.0 * (std::f64::consts::PI / 4.0).cos());
        match extension_criterion(&scaled, CriterionOptions::default(), 0).unwrap() {
            CriterionVerdict::NoExtension { norm_lower_bound, .. } => {
                assert!(norm_lower_bound >= 2f64.sqrt() - 1e-6)
            }
            v => panic!("{v:?}"),
        }
        let three = z_map(3, 1.0);
        match extension_criterion(&three, CriterionOptions::default(), 0).unwrap() {
            CriterionVerdict::ProbablyExists { norm_estimate, extension } => {
                assert!(norm_estimate <= 1.0 + 1e-6);
                assert!(extension.status.is_feasible());
                assert!(extension.extension.unwrap().agreement_error(&three) < 1e-8);
            }
            v => panic!("{v:?}"),
        }
        assert!(matches!(
            extension_criterion(&z_map(4, 2.0), CriterionOptions::default(), 0),
            Err(ExtendError::NotPositive { .. })
        ));
    }

    #[test]
    fn criterion_transports_non_unital_maps() {
        // φ(a) = 3·a on span{1, X}, so φ(1) = 3·1
        let phi = LinearMap::identity(span_i_x()).scale(3.0);
        match extension_criterion(&phi, CriterionOptions { restarts: 8, ..Default::default() }, 2).unwrap() {
            CriterionVerdict::ProbablyExists { extension, .. } => {
                assert!(extension.status.is_feasible());
                assert!(extension.extension.unwrap().agreement_error(&phi) < 1e-8);
            }
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn c_positive_extension_under_cp_cone() {
        let mut rng = rng_from_seed(11);
        let cp = kraus_map(&[random_matrix(&mut rng, 2)]);
        let phi = cp.restrict(&span_i_x()).unwrap();
        let cone = MappingCone::new(2, ConeKind::CompletelyPositive);
        let res = extend_c_positive(&phi, &cone, 60, 0, SolveOptions::default()).unwrap();
        assert!(res.status.is_feasible(), "{:?}", res.status);
        assert!(res.agreement_error.unwrap() < 1e-8);
        let bare = extend_c_positive(&phi, &cone, 0, 0, SolveOptions::default()).unwrap();
        assert!(bare.status.is_feasible());
        assert!(bare.agreement_error.unwrap() < 1e-8);
    }

    #[test]
    fn results_serialize() {
        let res = extend_cp(&LinearMap::identity(span_i_x()), SolveOptions::default()).unwrap();
        let json = serde_json::to_string(&res).unwrap();
        let back: ExtensionResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.status, res.status);
        assert!(json.contains("\"status\":\"feasible\""));
    }
}
