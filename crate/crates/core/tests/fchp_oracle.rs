mod common;

use flashcrowd_core::fchp::{
    brute_force_solve, check_feasibility, evaluate, export_lp, fixture_o1, parse_lp, solution_values, Mode, ModelError,
    OracleConfig, DEFAULT_LP_CAP,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn o1_matches_external_solver() {
    for mode in [Mode::Literal, Mode::Corrected] {
        let inst = fixture_o1();
        let (_, cost) = brute_force_solve(&inst, &OracleConfig::with_mode(mode)).unwrap();
        let lp = common::milp_optimum(&inst, mode).unwrap();
        assert!((cost.total - lp).abs() < 1e-6, "{mode:?}: oracle {} lp {lp}", cost.total);
    }
}

#[test]
fn o1_corrected_optimum_is_hire() {
    let (sol, cost) = brute_force_solve(&fixture_o1(), &OracleConfig::with_mode(Mode::Corrected)).unwrap();
    // Two attendances, one copy to the hired server, one slot at f/M = 6/6.
    assert!((cost.total - 4.0).abs() < 1e-12);
    assert_eq!(sol.replications.len(), 1);
}

#[test]
fn random_tiny_instances_match_external_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut solved = 0;
    for n in 0..60 {
        let inst = common::random_instance(&mut rng, common::TINY);
        for mode in [Mode::Literal, Mode::Corrected] {
            let oracle = brute_force_solve(&inst, &OracleConfig::with_mode(mode));
            let lp = common::milp_optimum(&inst, mode);
            match (oracle, lp) {
                (Ok((sol, cost)), Some(lp)) => {
                    assert!((cost.total - lp).abs() < 1e-6, "case {n} {mode:?}: oracle {} lp {lp}", cost.total);
                    assert!(check_feasibility(&inst, &sol, mode).is_empty(), "case {n} {mode:?}");
                    let e = evaluate(&inst, &sol).unwrap();
                    assert!((e.total - cost.total).abs() < 1e-9);
                    solved += 1;
                }
                (Err(ModelError::Infeasible), None) => {}
                (o, l) => panic!("case {n} {mode:?}: oracle {o:?} lp {l:?}"),
            }
        }
    }
    assert!(solved >= 40, "only {solved} feasible cases");
}

#[test]
fn lp_roundtrip_reproduces_evaluate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let inst = common::random_instance(&mut rng, common::TINY);
        for mode in [Mode::Literal, Mode::Corrected] {
            let Ok((sol, cost)) = brute_force_solve(&inst, &OracleConfig::with_mode(mode)) else { continue };
            let model = parse_lp(&export_lp(&inst, mode, DEFAULT_LP_CAP).unwrap()).unwrap();
            let values = solution_values(&sol);
            assert!((model.objective_value(&values) - cost.total).abs() < 1e-9);
            assert!(model.violated(&values, 1e-9).is_empty(), "{:?}", model.violated(&values, 1e-9));
        }
    }
}
