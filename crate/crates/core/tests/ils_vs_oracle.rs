mod common;

use flashcrowd_core::fchp::{brute_force_solve, check_feasibility, Mode, ModelError, OracleConfig};
use flashcrowd_core::ils::{solve, IlsParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ils_is_close_to_oracle_on_tiny_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut pairs, mut close, mut cases) = (0, 0, 0);
    while cases < 25 {
        let mut inst = common::random_instance(&mut rng, common::Limits { demand_within_bx: true, ..common::TINY });
        inst.provisioning_delay = 0;
        let opt = match brute_force_solve(&inst, &OracleConfig::with_mode(Mode::Corrected)) {
            Ok((_, c)) => c.total,
            Err(ModelError::Infeasible) => continue,
            Err(e) => panic!("{e}"),
        };
        cases += 1;
        for seed in 0..10 {
            pairs += 1;
            match solve(&inst, &IlsParams { seed, ..IlsParams::default() }) {
                Ok((sol, cost, _)) => {
                    assert!(check_feasibility(&inst, &sol, Mode::Corrected).is_empty());
                    assert!(cost.total >= opt - 1e-9, "heuristic below optimum");
                    if cost.total <= opt * 1.05 + 1e-9 {
                        close += 1;
                    }
                }
                Err(ModelError::Infeasible) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
    let share = close as f64 / pairs as f64;
    println!("within 5% of the optimum: {close}/{pairs}");
    assert!(share >= 0.9, "{share}");
}
