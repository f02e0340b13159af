use std::collections::BTreeMap;

use flashcrowd_core::fchp::{export_lp, parse_lp, Content, FchpInstance, Mode, Request, Server, DEFAULT_LP_CAP};

/// One request, an owned and a hirable server, one content, two periods, one
/// billing slot.
fn small() -> FchpInstance {
    FchpInstance {
        periods: 2,
        client_bandwidth: 1.0,
        billing_granularity: 2,
        servers: vec![Server::owned(2.0, 1.0), Server::hirable(2.0, 1.0, 3.0)],
        contents: vec![Content { size: 2.0, start: 1, origin: 0, copy_cost: 1.0 }],
        requests: vec![Request { content: 0, attend_cost: 1.0, demand: vec![1.0, 1.0], penalty: vec![1.0, 1.0] }],
        ..FchpInstance::empty(2)
    }
}

fn counts(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
    pairs.iter().filter(|p| p.1 > 0).map(|&(k, v)| (k.to_string(), v)).collect()
}

#[test]
fn literal_counts_match_hand_enumeration() {
    let model = parse_lp(&export_lp(&small(), Mode::Literal, DEFAULT_LP_CAP).unwrap()).unwrap();
    // x: 1*2*2, s: 2 servers * (1 + 2) demand periods, b: 2, y: 2*2,
    // w: 2*2*2 including self copies, z: 1 hirable * 1 slot.
    assert_eq!(model.binaries.len(), 4 + 6 + 4 + 8 + 1);
    assert_eq!(model.continuous.len(), 2);
    assert_eq!(model.variable_count(), 25);
    let expected = counts(&[
        ("r1", 2),
        ("r2", 4),
        ("r3", 2),
        ("r4", 1),
        ("r4x", 4),
        ("r5", 4),
        ("r6", 1),
        ("r8", 1),
        ("r10", 4),
        ("r11", 8),
        ("r12", 4),
        ("r13", 2),
    ]);
    assert_eq!(model.family_counts(), expected);
    assert_eq!(model.constraints.len(), 37);
}

#[test]
fn corrected_counts_match_hand_enumeration() {
    let model = parse_lp(&export_lp(&small(), Mode::Corrected, DEFAULT_LP_CAP).unwrap()).unwrap();
    // Self copies are not variables: w is 2 ordered pairs * 2 periods.
    assert_eq!(model.variable_count(), 4 + 6 + 2 + 4 + 4 + 1);
    let expected = counts(&[
        ("r1", 2),
        ("r2", 4),
        ("r3", 2),
        ("r4", 1),
        ("r4x", 4),
        ("r5", 4),
        ("r6", 1),
        ("r8", 1),
        ("src", 4),
        ("persist", 2),
        ("r12", 4),
        ("r13", 2),
    ]);
    assert_eq!(model.family_counts(), expected);
}

#[test]
fn constraint_names_carry_indices() {
    let text = export_lp(&small(), Mode::Literal, DEFAULT_LP_CAP).unwrap();
    for name in ["r2_j1_t2:", "r13_i0_j1_t1:", "r10_k0_j0_t1:", "r4_i0:"] {
        assert!(text.contains(name), "missing {name}");
    }
    assert!(text.contains("Binaries"));
    assert!(text.trim_end().ends_with("End"));
}

#[test]
fn later_start_adds_before_start_rows() {
    let mut inst = small();
    inst.periods = 3;
    inst.contents[0].start = 2;
    inst.requests[0].demand = vec![0.0, 1.0, 1.0];
    inst.requests[0].penalty = vec![1.0; 3];
    let model = parse_lp(&export_lp(&inst, Mode::Literal, DEFAULT_LP_CAP).unwrap()).unwrap();
    let fc = model.family_counts();
    assert_eq!(fc["r7"], 1);
    // One row per ordered (j, l) pair, self copies included.
    assert_eq!(fc["r9"], 4);
    assert_eq!(fc["r1"], 2);
}
