use proptest::prelude::*;

use opext::cones::{kraus_map, ConeKind, MappingCone};
use opext::experiments::{generate_instance, random_positive_map, InstanceSpec, MapKind, SystemKind};
use opext::extend::{
    dykstra_solve, extend_c_positive, extend_cp, extend_positive, extension_criterion, min_product_state_value,
    AffineConstraint, Certificate, ConeConstraint, CriterionOptions, CriterionVerdict, ExtensionResult,
    FeasibilityProblem, PositiveOptions, SolveOptions,
};
use opext::matrix::lambda_min;
use opext::posmap::{unitalize, z_map};
use opext::random::{derive_seed, random_hermitian, random_matrix, rng_from_seed};
use opext::{ComplexMatrix, Flavor, LinearMap, OperatorSystem};

/// Every Feasible result must agree with `phi` and pass its own certificate.
fn assert_sound(res: &ExtensionResult, phi: &LinearMap) {
    if !res.status.is_feasible() {
        return;
    }
    let ext = res.extension.as_ref().expect("feasible results carry the extension");
    let err = ext.agreement_error(phi);
    assert!(err < 1e-8, "agreement {err}");
    assert!(res.agreement_error.unwrap() < 1e-8);
    let choi = ext.choi_matrix().unwrap();
    match &res.certificate {
        Certificate::ChoiSpectrum { min_eigenvalue } => {
            assert!(*min_eigenvalue >= -1e-8);
            assert!(lambda_min(choi.matrix()).unwrap() >= -1e-8);
        }
        Certificate::ProductStateValue { value, .. } => {
            assert!(*value >= -1e-8);
            let pm = min_product_state_value(choi.matrix(), ext.dim_h(), ext.dim_k(), 64, 5).unwrap();
            assert!(pm.value >= -1e-8, "independent product check {}", pm.value);
        }
        Certificate::SampledMargins { min_margin, .. } => assert!(*min_margin >= -1e-8),
        Certificate::None => panic!("feasible result without certificate"),
    }
}

fn random_system(rng: &mut opext::random::SeededRng, n: usize, dim: usize) -> OperatorSystem {
    let mut gens = vec![ComplexMatrix::identity(n)];
    gens.extend((1..dim).map(|_| random_hermitian(rng, n)));
    OperatorSystem::build(n, Flavor::RealSelfAdjoint, gens).unwrap()
}

#[test]
fn no_extension_verdict_is_never_contradicted() {
    let phi = z_map(4, 2.0 * (std::f64::consts::PI / 4.0).cos());
    let verdict = extension_criterion(&phi, CriterionOptions::default(), 0).unwrap();
    assert!(matches!(verdict, CriterionVerdict::NoExtension { .. }));
    let (unital, _) = unitalize(&phi).unwrap();
    for seed in 0..16 {
        let res = extend_positive(&phi, PositiveOptions::with_restarts(16), seed).unwrap();
        assert!(!res.status.is_feasible(), "seed {seed}");
        let res = extend_positive(&unital, PositiveOptions::with_restarts(8), seed).unwrap();
        assert!(!res.status.is_feasible(), "unitalized, seed {seed}");
    }
}

#[test]
fn arveson_consistency() {
    for i in 0..200u64 {
        let mut rng = rng_from_seed(derive_seed(21, i));
        let (n, k) = [(2, 2), (2, 3), (3, 2), (3, 3)][i as usize % 4];
        let kraus: Vec<ComplexMatrix> =
            (0..1 + i as usize % 3).map(|_| opext::random::random_rect(&mut rng, n, k)).collect();
        let dim = 2 + (i as usize % (n * n - 1));
        let a = random_system(&mut rng, n, dim);
        let phi = kraus_map(&kraus).restrict(&a).unwrap();
        let res = extend_cp(&phi, SolveOptions::default()).unwrap();
        assert!(res.status.is_feasible(), "instance {i}: {:?}", res.status);
        assert_sound(&res, &phi);
    }
}

#[test]
fn forward_direction_never_reports_no_extension() {
    for i in 0..60u64 {
        let (n, k) = if i % 2 == 0 { (2, 2) } else { (3, 2) };
        let spec = InstanceSpec {
            dim_h: n,
            dim_k: k,
            system_kind: SystemKind::Random(2 + (i as usize % (n * n - 1))),
            map_kind: MapKind::RandomPositiveRestriction,
            seed: derive_seed(31, i),
        };
        let phi = generate_instance(&spec).unwrap().map;
        let opts = CriterionOptions { restarts: 16, ..CriterionOptions::default() };
        match extension_criterion(&phi, opts, i).unwrap() {
            CriterionVerdict::NoExtension { norm_lower_bound, .. } => {
                panic!("instance {i}: NoExtension with bound {norm_lower_bound}")
            }
            CriterionVerdict::ProbablyExists { extension, .. } | CriterionVerdict::Inconclusive { extension, .. } => {
                assert_sound(&extension, &phi)
            }
        }
    }
}

#[test]
fn positive_extensions_are_sound() {
    for i in 0..20u64 {
        let mut rng = rng_from_seed(derive_seed(41, i));
        let (n, k) = [(2, 2), (3, 2), (2, 3)][i as usize % 3];
        let full = random_positive_map(&mut rng, n, k);
        let a = random_system(&mut rng, n, 2 + i as usize % 3);
        let phi = full.restrict(&a).unwrap();
        let res = extend_positive(&phi, PositiveOptions::with_restarts(8), i).unwrap();
        assert!(res.status.is_feasible(), "instance {i}");
        assert_sound(&res, &phi);
    }
}

#[test]
fn cone_extension_examples() {
    let diag = OperatorSystem::diagonal(2);
    let phi = LinearMap::identity(diag);
    let cone = MappingCone::new(2, ConeKind::Decomposable);
    let res = extend_c_positive(&phi, &cone, 100, 0, SolveOptions::default()).unwrap();
    assert!(res.status.is_feasible());
    assert_sound(&res, &phi);

    // complex domains are reduced to their self-adjoint part first
    let z = OperatorSystem::z_system(3);
    let phi = LinearMap::identity(z);
    let cp = MappingCone::new(3, ConeKind::CompletelyPositive);
    let res = extend_c_positive(&phi, &cp, 40, 1, SolveOptions::default()).unwrap();
    assert!(res.status.is_feasible());
    assert_sound(&res, &phi);
}

#[test]
fn cone_extension_agrees_with_cp_extension_under_cp_cone() {
    let cp = MappingCone::new(2, ConeKind::CompletelyPositive);
    for i in 0..50u64 {
        let mut rng = rng_from_seed(derive_seed(51, i));
        let phi = if i % 10 == 9 {
            LinearMap::transpose(OperatorSystem::full(2))
        } else {
            let kraus = vec![random_matrix(&mut rng, 2), random_matrix(&mut rng, 2)];
            let a = random_system(&mut rng, 2, 2 + i as usize % 3);
            kraus_map(&kraus).restrict(&a).unwrap()
        };
        let a = extend_cp(&phi, SolveOptions::default()).unwrap();
        let b = extend_c_positive(&phi, &cp, 60, i, SolveOptions::default()).unwrap();
        assert_eq!(a.status.is_feasible(), b.status.is_feasible(), "instance {i}");
        assert_sound(&b, &phi);
    }
}

#[test]
fn planted_feasibility_problems() {
    for i in 0..500u64 {
        let n = 2 + (i as usize % 15);
        let mut rng = rng_from_seed(derive_seed(61, i));
        let g = random_matrix(&mut rng, n);
        let x = g.adjoint().matmul(&g);
        let m = 1 + (i as usize * 7) % (n * n - 1);
        let affine = (0..m)
            .map(|_| {
                let f = random_hermitian(&mut rng, n);
                let target = f.hs_inner(&x);
                AffineConstraint { matrix: f, target }
            })
            .collect();
        let problem = FeasibilityProblem { dim: n, affine, cone: ConeConstraint::Psd, options: SolveOptions::default() };
        let sol = dykstra_solve(&problem).unwrap();
        assert!(sol.status.is_feasible(), "instance {i} (n = {n}, m = {m}): {:?}", sol.status);
        assert!(sol.affine_residual < 1e-9);
        assert!(sol.cone_residual >= -1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn product_value_is_at_least_smallest_eigenvalue(seed in any::<u64>(), n in 1usize..=3, k in 1usize..=3) {
        let c = random_hermitian(&mut rng_from_seed(seed), n * k);
        let pm = min_product_state_value(&c, n, k, 4, seed).unwrap();
        prop_assert!(pm.value >= lambda_min(&c).unwrap() - 1e-10);
        // the reported vectors attain the reported value
        let p = pm.product_vector();
        prop_assert!((c.quadratic_form(&p).re - pm.value).abs() < 1e-9);
    }
}
