//! Instance generators and batch experiment suites.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cones::{co_kraus_map, kraus_map, membership_pac, ConeKind, MappingCone};
use crate::extend::{
    extend_c_positive, extend_cp, extension_criterion, min_product_state_value, Certificate, CriterionOptions,
    CriterionVerdict, SolveOptions, ACCEPT_TOL,
};
use crate::matrix::{kron, lambda_min, ComplexMatrix, C64};
use crate::opsys::{Flavor, OperatorSystem};
use crate::posmap::{map_from_choi, z_map, LinearMap};
use crate::random::{derive_seed, random_hermitian, random_rect, rng_from_seed, SeededRng};

/// Largest `dim_h` and `dim_k` accepted without an explicit override.
pub const MAX_DIM_H: usize = 4;
pub const MAX_DIM_K: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid instance spec: {0}")]
    InvalidSpec(String),
    #[error("unknown suite {0:?}; expected duality, arveson, thm1 or thm2")]
    UnknownSuite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Full,
    Diagonal,
    ZSystem(usize),
    /// Random real operator system of the given dimension (containing `1`).
    Random(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Identity,
    Transpose,
    /// `x ↦ Tr(x)·1 - x`.
    Reduction,
    ZmapScaled,
    ZmapUnscaled,
    RandomCpRestriction,
    RandomPositiveRestriction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub dim_h: usize,
    pub dim_k: usize,
    pub system_kind: SystemKind,
    pub map_kind: MapKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub spec: InstanceSpec,
    pub map: LinearMap,
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::InvalidSpec(msg.into())
}

fn random_system(rng: &mut SeededRng, n: usize, dim: usize) -> OperatorSystem {
    let mut gens = vec![ComplexMatrix::identity(n)];
    gens.extend((1..dim).map(|_| random_hermitian(rng, n)));
    OperatorSystem::build(n, Flavor::RealSelfAdjoint, gens).expect("contains the identity")
}

fn random_cp(rng: &mut SeededRng, n: usize, k: usize) -> LinearMap {
    let terms = rng.random_range(1..=3);
    let scale = 1.0 / ((n * terms) as f64).sqrt();
    let kraus: Vec<ComplexMatrix> = (0..terms).map(|_| random_rect(rng, n, k).scale_real(scale)).collect();
    kraus_map(&kraus)
}

fn random_cocp(rng: &mut SeededRng, n: usize, k: usize) -> LinearMap {
    let terms = rng.random_range(1..=3);
    let scale = 1.0 / ((n * terms) as f64).sqrt();
    let kraus: Vec<ComplexMatrix> = (0..terms).map(|_| random_rect(rng, n, k).scale_real(scale)).collect();
    co_kraus_map(&kraus)
}

/// Random positive map `B(C^n) → B(C^k)`: a convex mix of a CP and a co-CP
/// map, with a reduction-map component when `n = k`. Positivity is checked
/// through the product-state value of the Choi matrix.
pub fn random_positive_map(rng: &mut SeededRng, n: usize, k: usize) -> LinearMap {
    let w = rng.random_range(0.0..=1.0);
    let mut phi = random_cp(rng, n, k).scale(w).add_scaled(1.0 - w, &random_cocp(rng, n, k));
    if n == k && rng.random_range(0..2) == 0 {
        phi = phi.add_scaled(rng.random_range(0.0..=1.0), &reduction_map(OperatorSystem::full(n)));
    }
    let c = phi.choi_matrix().expect("full domain");
    let pm = min_product_state_value(c.matrix(), n, k, 32, rng.random()).expect("dimensions match");
    assert!(pm.value >= -ACCEPT_TOL, "generated map failed its positivity certificate");
    phi
}

pub fn reduction_map(domain: OperatorSystem) -> LinearMap {
    let n = domain.dim_h();
    LinearMap::from_fn(domain, n, |b| {
        let mut out = b.scale_real(-1.0);
        let t = b.trace();
        for i in 0..n {
            out[(i, i)] += t;
        }
        out
    })
    .expect("reduction map preserves Hermiticity")
}

fn validate(spec: &InstanceSpec) -> Result<(), ExperimentError> {
    let (n, k) = (spec.dim_h, spec.dim_k);
    if n == 0 || k == 0 {
        return Err(invalid("dimensions must be positive"));
    }
    match spec.system_kind {
        SystemKind::ZSystem(m) if m < 3 => return Err(invalid("z_system(n) requires n >= 3")),
        SystemKind::ZSystem(m) if m != n => return Err(invalid("z_system(n) requires n = dim_h")),
        SystemKind::Random(d) if d == 0 || d > n * n => {
            return Err(invalid(format!("random({d}) needs 1 <= dim <= {}", n * n)))
        }
        _ => {}
    }
    match spec.map_kind {
        MapKind::ZmapScaled | MapKind::ZmapUnscaled => {
            if !matches!(spec.system_kind, SystemKind::ZSystem(_)) || k != 2 {
                return Err(invalid("z-map kinds need system_kind z_system and dim_k = 2"));
            }
        }
        MapKind::Identity | MapKind::Transpose | MapKind::Reduction if k != n => {
            return Err(invalid("identity, transpose and reduction need dim_k = dim_h"));
        }
        _ => {}
    }
    Ok(())
}

/// Builds the instance described by `spec`, deterministically in its seed.
pub fn generate_instance(spec: &InstanceSpec) -> Result<Instance, ExperimentError> {
    validate(spec)?;
    let (n, k) = (spec.dim_h, spec.dim_k);
    let mut rng = rng_from_seed(spec.seed);
    let system = match spec.system_kind {
        SystemKind::Full => OperatorSystem::full(n),
        SystemKind::Diagonal => OperatorSystem::diagonal(n),
        SystemKind::ZSystem(m) => OperatorSystem::z_system(m),
        SystemKind::Random(d) => random_system(&mut rng, n, d),
    };
    let restrict = |phi: LinearMap| phi.restrict(&system).expect("full-domain maps restrict to any system");
    let map = match spec.map_kind {
        MapKind::Identity => LinearMap::identity(system.clone()),
        MapKind::Transpose => LinearMap::transpose(system.clone()),
        MapKind::Reduction => reduction_map(system.clone()),
        MapKind::ZmapScaled => z_map(n, 2.0 * (std::f64::consts::PI / n as f64).cos()),
        MapKind::ZmapUnscaled => z_map(n, 2.0),
        MapKind::RandomCpRestriction => restrict(random_cp(&mut rng, n, k)),
        MapKind::RandomPositiveRestriction => restrict(random_positive_map(&mut rng, n, k)),
    };
    Ok(Instance { spec: *spec, map })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Duality,
    Arveson,
    Thm1,
    Thm2,
}

impl FromStr for Suite {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "duality" => Ok(Suite::Duality),
            "arveson" => Ok(Suite::Arveson),
            "thm1" => Ok(Suite::Thm1),
            "thm2" => Ok(Suite::Thm2),
            other => Err(ExperimentError::UnknownSuite(other.to_string())),
        }
    }
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Duality => "duality",
            Suite::Arveson => "arveson",
            Suite::Thm1 => "thm1",
            Suite::Thm2 => "thm2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    /// Name under which the instance is (or would be) persisted.
    pub instance: String,
    pub diagnostic: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub suite: Suite,
    pub trials: usize,
    #[serde(rename = "pass")]
    pub pass_count: usize,
    pub failures: Vec<Failure>,
    /// Only filled in on request, so that reports stay reproducible.
    #[serde(rename = "wall_time_s")]
    pub wall_time_seconds: Option<f64>,
}

impl ExperimentReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>7} {:>7} {:>7}", "suite", "trials", "pass", "fail");
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>7} {:>7}",
            self.suite.name(),
            self.trials,
            self.pass_count,
            self.failures.len()
        );
        if !self.failures.is_empty() {
            let _ = writeln!(out, "\n{:<22} {:<18} diagnostic", "seed", "instance");
            for f in &self.failures {
                let _ = writeln!(out, "{:<22} {:<18} {}", f.seed, f.instance, f.diagnostic);
            }
        }
        if let Some(t) = self.wall_time_seconds {
            let _ = writeln!(out, "\nwall time: {t:.2} s");
        }
        out
    }
}

/// Options for [`run_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SuiteOptions {
    /// Fixed `(dim_h, dim_k)`; each suite picks its own mix when absent.
    pub dims: Option<(usize, usize)>,
    /// Lift the [`MAX_DIM_H`] / [`MAX_DIM_K`] guard.
    pub allow_large: bool,
}

struct TrialOutcome {
    instance: Option<Instance>,
    diagnostic: Option<String>,
}

impl TrialOutcome {
    fn pass() -> Self {
        Self { instance: None, diagnostic: None }
    }

    fn fail(instance: Option<Instance>, diagnostic: String) -> Self {
        Self { instance, diagnostic: Some(diagnostic) }
    }
}

fn pick_dims(rng: &mut SeededRng, fixed: Option<(usize, usize)>, pool: &[(usize, usize)]) -> (usize, usize) {
    fixed.unwrap_or_else(|| pool[rng.random_range(0..pool.len())])
}

fn random_full_map(rng: &mut SeededRng, n: usize, k: usize) -> LinearMap {
    let images = OperatorSystem::full(n).basis().iter().map(|_| random_hermitian(rng, k)).collect();
    LinearMap::new(OperatorSystem::full(n), k, images).expect("Hermitian images")
}

/// Largest `|Tr(C_φ (e_ij ⊗ e_pq)) - Tr(φ(e_ij) e_pqᵗ)|` over matrix units.
pub fn duality_defect(phi: &LinearMap) -> f64 {
    let (n, k) = (phi.dim_h(), phi.dim_k());
    let c = phi.choi_matrix().expect("full domain").into_matrix();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = ComplexMatrix::unit(n, i, j);
            let img = phi.apply_unchecked(&a);
            for p in 0..k {
                for q in 0..k {
                    let b = ComplexMatrix::unit(k, p, q);
                    let lhs = c.trace_product(&kron(&a, &b));
                    let rhs = img.trace_product(&b.transpose());
                    worst = worst.max((lhs - rhs).norm());
                }
            }
        }
    }
    worst
}

/// Largest entry deviation of `C ↦ map ↦ C` and `φ ↦ C ↦ φ`.
pub fn choi_round_trip_defect(phi: &LinearMap) -> f64 {
    let c = phi.choi_matrix().expect("full domain");
    let back = map_from_choi(&c);
    let d1 = back.agreement_error(phi);
    let d2 = back.choi_matrix().expect("full domain").matrix().max_abs_diff(c.matrix());
    d1.max(d2)
}

fn duality_trial(seed: u64, opts: &SuiteOptions) -> TrialOutcome {
    let mut rng = rng_from_seed(seed);
    let (n, k) = pick_dims(&mut rng, opts.dims, &[(2, 2), (2, 3), (3, 2), (3, 3)]);
    let phi = random_full_map(&mut rng, n, k);
    let dual = duality_defect(&phi);
    let round = choi_round_trip_defect(&phi);
    if dual < 1e-11 && round < 1e-11 {
        TrialOutcome::pass()
    } else {
        TrialOutcome::fail(None, format!("duality defect {dual:.3e}, round trip defect {round:.3e}"))
    }
}

fn random_restriction_spec(rng: &mut SeededRng, n: usize, k: usize, map_kind: MapKind) -> InstanceSpec {
    let dim = rng.random_range(2..=n * n);
    InstanceSpec { dim_h: n, dim_k: k, system_kind: SystemKind::Random(dim), map_kind, seed: rng.random() }
}

fn arveson_trial(seed: u64, opts: &SuiteOptions) -> TrialOutcome {
    let mut rng = rng_from_seed(seed);
    let (n, k) = pick_dims(&mut rng, opts.dims, &[(2, 2), (2, 3), (3, 2), (3, 3)]);
    let spec = random_restriction_spec(&mut rng, n, k, MapKind::RandomCpRestriction);
    let inst = generate_instance(&spec).expect("valid spec");
    match extend_cp(&inst.map, SolveOptions::default()) {
        Ok(res) => {
            let lmin = match res.certificate {
                Certificate::ChoiSpectrum { min_eigenvalue } => min_eigenvalue,
                _ => f64::NEG_INFINITY,
            };
            let err = res.agreement_error.unwrap_or(f64::INFINITY);
            if res.status.is_feasible() && lmin >= -ACCEPT_TOL && err < ACCEPT_TOL {
                TrialOutcome::pass()
            } else {
                TrialOutcome::fail(Some(inst), format!("status {:?}, λ_min {lmin:.3e}, agreement {err:.3e}", res.status))
            }
        }
        Err(e) => TrialOutcome::fail(Some(inst), e.to_string()),
    }
}

fn thm1_trial(seed: u64, opts: &SuiteOptions) -> TrialOutcome {
    let mut rng = rng_from_seed(seed);
    let (n, k) = pick_dims(&mut rng, opts.dims, &[(2, 2)]);
    let cone = MappingCone::new(n, ConeKind::CompletelyPositive);

    // membership in P(B(H), CP) is the PSD test
    let full = OperatorSystem::full(n);
    for j in 0..10u64 {
        let mut x = random_hermitian(&mut rng, n * k);
        let shift = -lambda_min(&x).expect("Hermitian") + rng.random_range(-0.3..0.3);
        for i in 0..n * k {
            x[(i, i)] += C64::new(shift, 0.0);
        }
        let direct = lambda_min(&x).expect("Hermitian") >= -crate::cones::REJECT_TOL;
        let sampled = !membership_pac(&x, &full, &cone, 4, derive_seed(seed, j)).expect("valid element").is_rejected();
        if direct != sampled {
            return TrialOutcome::fail(None, format!("membership disagreement on draw {j}"));
        }
    }

    // extension verdicts under the CP cone match the CP extension
    let inst = if rng.random_range(0..5) == 0 && opts.dims.is_none_or(|(h, kk)| h == kk) {
        generate_instance(&InstanceSpec {
            dim_h: n,
            dim_k: n,
            system_kind: SystemKind::Full,
            map_kind: MapKind::Transpose,
            seed,
        })
    } else {
        generate_instance(&random_restriction_spec(&mut rng, n, k, MapKind::RandomCpRestriction))
    }
    .expect("valid spec");
    let cp = extend_cp(&inst.map, SolveOptions::default());
    let cone_res = extend_c_positive(&inst.map, &cone, 60, seed, SolveOptions::default());
    match (cp, cone_res) {
        (Ok(a), Ok(b)) if a.status.is_feasible() == b.status.is_feasible() => TrialOutcome::pass(),
        (Ok(a), Ok(b)) => TrialOutcome::fail(
            Some(inst),
            format!("extend_cp {:?} but extend_c_positive {:?}", a.status, b.status),
        ),
        (Err(e), _) | (_, Err(e)) => TrialOutcome::fail(Some(inst), e.to_string()),
    }
}

fn thm2_trial(index: usize, seed: u64, opts: &SuiteOptions) -> TrialOutcome {
    let criterion = CriterionOptions { restarts: 16, ..CriterionOptions::default() };
    let zmap = |n: usize| InstanceSpec {
        dim_h: n,
        dim_k: 2,
        system_kind: SystemKind::ZSystem(n),
        map_kind: MapKind::ZmapScaled,
        seed,
    };
    let (spec, expect_extension) = match index {
        0 => (zmap(4), false),
        1 => (zmap(3), true),
        _ => {
            let mut rng = rng_from_seed(seed);
            let (n, k) = pick_dims(&mut rng, opts.dims, &[(2, 2), (3, 2)]);
            (random_restriction_spec(&mut rng, n, k, MapKind::RandomPositiveRestriction), true)
        }
    };
    let inst = generate_instance(&spec).expect("valid spec");
    match extension_criterion(&inst.map, criterion, seed) {
        Ok(CriterionVerdict::NoExtension { norm_lower_bound, .. }) if expect_extension => {
            TrialOutcome::fail(Some(inst), format!("NoExtension with norm bound {norm_lower_bound:.9}"))
        }
        Ok(CriterionVerdict::NoExtension { .. }) => TrialOutcome::pass(),
        Ok(v) if !expect_extension => TrialOutcome::fail(Some(inst), format!("expected NoExtension, got {v:?}")),
        Ok(_) => TrialOutcome::pass(),
        Err(e) => TrialOutcome::fail(Some(inst), e.to_string()),
    }
}

/// Runs `trials` trials of `suite`; trial `i` uses the seed
/// `derive_seed(seed, i)`. Failing instances are returned alongside the
/// report so callers can persist them under the names given in the report.
pub fn run_suite_with_instances(
    suite: Suite,
    trials: usize,
    seed: u64,
    options: SuiteOptions,
) -> Result<(ExperimentReport, Vec<(String, Instance)>), ExperimentError> {
    if let Some((h, k)) = options.dims {
        if h == 0 || k == 0 {
            return Err(invalid("dimensions must be positive"));
        }
        if !options.allow_large && (h > MAX_DIM_H || k > MAX_DIM_K) {
            return Err(invalid(format!("dims ({h}, {k}) exceed ({MAX_DIM_H}, {MAX_DIM_K}); pass the override to run")));
        }
    }
    let mut failures = Vec::new();
    let mut instances = Vec::new();
    for i in 0..trials {
        let trial_seed = derive_seed(seed, i as u64);
        let outcome = match suite {
            Suite::Duality => duality_trial(trial_seed, &options),
            Suite::Arveson => arveson_trial(trial_seed, &options),
            Suite::Thm1 => thm1_trial(trial_seed, &options),
            Suite::Thm2 => thm2_trial(i, trial_seed, &options),
        };
        if let Some(diagnostic) = outcome.diagnostic {
            let name = format!("{}-trial-{i}.json", suite.name());
            if let Some(inst) = outcome.instance {
                instances.push((name.clone(), inst));
            }
            failures.push(Failure { seed: trial_seed, instance: name, diagnostic });
        }
    }
    let report = ExperimentReport {
        suite,
        trials,
        pass_count: trials - failures.len(),
        failures,
        wall_time_seconds: None,
    };
    Ok((report, instances))
}

pub fn run_suite(suite: Suite, trials: usize, seed: u64, options: SuiteOptions) -> Result<ExperimentReport, ExperimentError> {
    run_suite_with_instances(suite, trials, seed, options).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        let base = InstanceSpec {
            dim_h: 4,
            dim_k: 2,
            system_kind: SystemKind::ZSystem(4),
            map_kind: MapKind::ZmapScaled,
            seed: 0,
        };
        assert!(generate_instance(&base).is_ok());
        assert!(generate_instance(&InstanceSpec { dim_k: 3, ..base }).is_err());
        assert!(generate_instance(&InstanceSpec { system_kind: SystemKind::Full, ..base }).is_err());
        assert!(generate_instance(&InstanceSpec { dim_h: 2, system_kind: SystemKind::ZSystem(2), ..base }).is_err());
        assert!(generate_instance(&InstanceSpec {
            dim_h: 2,
            dim_k: 2,
            system_kind: SystemKind::Random(5),
            map_kind: MapKind::Identity,
            seed: 0
        })
        .is_err());
    }

    #[test]
    fn identity_on_full_system() {
        let inst = generate_instance(&InstanceSpec {
            dim_h: 3,
            dim_k: 3,
            system_kind: SystemKind::Full,
            map_kind: MapKind::Identity,
            seed: 0,
        })
        .unwrap();
        let x = random_hermitian(&mut rng_from_seed(1), 3);
        assert!(inst.map.apply(&x).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = InstanceSpec {
            dim_h: 3,
            dim_k: 2,
            system_kind: SystemKind::Random(4),
            map_kind: MapKind::RandomPositiveRestriction,
            seed: 42,
        };
        let a = serde_json::to_string(&generate_instance(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_instance(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spec_json_shape() {
        let spec = InstanceSpec {
            dim_h: 4,
            dim_k: 2,
            system_kind: SystemKind::ZSystem(4),
            map_kind: MapKind::ZmapScaled,
            seed: 3,
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"dim_h":4,"dim_k":2,"system_kind":{"z_system":4},"map_kind":"zmap_scaled","seed":3}"#);
    }

    #[test]
    fn zero_trials_is_empty_success() {
        let r = run_suite(Suite::Thm2, 0, 0, SuiteOptions::default()).unwrap();
        assert_eq!(r.pass_count, 0);
        assert!(r.failures.is_empty());
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"{"suite":"thm2","trials":0,"pass":0,"failures":[],"wall_time_s":null}"#);
    }

    #[test]
    fn small_suites_pass() {
        for suite in [Suite::Duality, Suite::Arveson, Suite::Thm1] {
            let r = run_suite(suite, 6, 1, SuiteOptions::default()).unwrap();
            assert_eq!(r.pass_count, r.trials, "{}", r.table());
        }
    }

    #[test]
    fn dims_guard() {
        let opts = SuiteOptions { dims: Some((5, 2)), allow_large: false };
        assert!(run_suite(Suite::Duality, 1, 0, opts).is_err());
        let opts = SuiteOptions { dims: Some((5, 2)), allow_large: true };
        assert!(run_suite(Suite::Duality, 1, 0, opts).is_ok());
    }
}
