use cutfem_uc::assembly::{KappaMode, StabParams};
use cutfem_uc::mesh::Rect;
use cutfem_uc::problems::{make_problem, CatalogId, ExactSolution, NoiseParams, Overrides, ProblemSpec, Region};
use cutfem_uc::runner::{level_n, run_convergence_spec, solve_level};
use cutfem_uc::Error;

fn diffusion(p: usize) -> ProblemSpec {
    make_problem(CatalogId::DiffusionL4, &Overrides { p: Some(p), q: Some(p), ..Default::default() }).unwrap()
}

// A quadratic lies in the p = 2 space on both sides, so the only obstacles
// to recovery are the Tikhonov term and the geometry.
#[test]
fn quadratic_solution_is_recovered_with_quadratic_elements() {
    let mut spec = diffusion(2);
    spec.solution = ExactSolution::Quadratic { mu: 2.0, c: [1.0, -0.5, 0.25, 0.7, -1.1, 0.4] };
    let err = run_convergence_spec(&spec, 3).unwrap().rel_l2();
    assert!(err[1] < err[0] && err[2] < err[1], "{err:?}");
    assert!(err[2] < 1e-2, "{err:?}");
}

#[test]
fn target_inside_data_domain_converges() {
    let mut spec = diffusion(2);
    spec.target = Region::rect(Rect::centered(0.4));
    let err = run_convergence_spec(&spec, 3).unwrap().rel_l2();
    assert!(err[0] / err[2] > 10.0, "{err:?}");
}

#[test]
fn triple_norm_error_decreases_for_every_contrast() {
    for mu in [[2.0, 20.0], [20.0, 2.0]] {
        let spec = make_problem(CatalogId::DiffusionL4, &Overrides { mu: Some(mu), ..Default::default() }).unwrap();
        let report = run_convergence_spec(&spec, 3).unwrap();
        let t = report.column(|r| r.tnorm_err);
        assert!(t[0] > t[1] && t[1] > t[2], "{mu:?}: {t:?}");
        assert!(report.rows.iter().all(|r| r.residual < 1e-8 && r.warning.is_none()));
    }
}

#[test]
fn kappa_modes_coincide_for_equal_coefficients() {
    let harmonic = diffusion(1);
    let mut average = harmonic.clone();
    average.stab = StabParams { kappa_mode: KappaMode::Average, ..Default::default() };
    let a = solve_level(&harmonic, 1, level_n(&harmonic, 1)).unwrap().result.rel_l2_b;
    let b = solve_level(&average, 1, level_n(&average, 1)).unwrap().result.rel_l2_b;
    // With μ₁ = μ₂ both modes give κ = 1/2 and the same system.
    assert_eq!(a, b);
}

#[test]
fn noise_is_seeded_and_perturbs_the_solution() {
    let mut spec = diffusion(1);
    let exact = solve_level(&spec, 1, level_n(&spec, 1)).unwrap().u;
    spec.noise = NoiseParams { delta_tilde: 50.0, theta: 1.0, seed: 3 };
    let a = solve_level(&spec, 1, level_n(&spec, 1)).unwrap().u;
    let b = solve_level(&spec, 1, level_n(&spec, 1)).unwrap().u;
    spec.noise.seed = 4;
    let c = solve_level(&spec, 1, level_n(&spec, 1)).unwrap().u;
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, exact);
}

#[test]
fn coarse_mesh_error_carries_the_level() {
    let spec = make_problem(CatalogId::HelmholtzL4Box, &Overrides { p: Some(2), q: Some(2), base_n: Some(30), ..Default::default() }).unwrap();
    let err = run_convergence_spec(&spec, 2).unwrap_err();
    assert!(matches!(err, Error::AtLevel { level: 0, .. }), "{err}");
    assert_eq!(err.kind(), "mesh_too_coarse");
    assert!(err.machine_line().starts_with("kind=mesh_too_coarse level=0 message="));
}

#[test]
fn helmholtz_pipeline_runs_with_cubic_elements() {
    let spec = make_problem(CatalogId::HelmholtzL4Box, &Overrides { p: Some(3), q: Some(3), base_n: Some(60), ..Default::default() }).unwrap();
    let s = solve_level(&spec, 0, level_n(&spec, 0)).unwrap();
    assert!(s.result.rel_l2_b < 0.2, "{}", s.result.rel_l2_b);
    assert_eq!(s.result.deformation_failures, 0);
    assert!(s.result.geom_probe < 1e-5);
}
