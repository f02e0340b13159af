use flashcrowd_core::detector::{
    detect, frechet_joint, frechet_mass, joint_pearson, DistributionPair, FlagConfig, FrechetBound, ValueEncoding,
};
use flashcrowd_core::generator::{generate, ContentProfile, GeneratorConfig, PhaseSchedule};
use flashcrowd_core::trace::ContentId;
use proptest::prelude::*;

fn pair() -> impl Strategy<Value = DistributionPair> {
    (1usize..=20).prop_flat_map(|n| {
        let counts = prop::collection::vec(0u64..100, n).prop_filter("some mass", |c| c.iter().sum::<u64>() > 0);
        (counts.clone(), counts).prop_map(move |(prev, cur)| {
            DistributionPair::from_counts((0..n as u64).map(ContentId).collect(), prev, cur)
        })
    })
}

fn cumulative(p: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            let left = if y > 0 { c[x * n + y - 1] } else { 0.0 };
            let up = if x > 0 { c[(x - 1) * n + y] } else { 0.0 };
            let diag = if x > 0 && y > 0 { c[(x - 1) * n + y - 1] } else { 0.0 };
            c[x * n + y] = p[x * n + y] + left + up - diag;
        }
    }
    c
}

proptest! {
    #[test]
    fn lower_bound_lies_under_upper(dist in pair()) {
        let n = dist.len();
        let lower = cumulative(&frechet_mass(&dist, FrechetBound::Lower), n);
        let upper = cumulative(&frechet_mass(&dist, FrechetBound::Upper), n);
        for (l, u) in lower.iter().zip(&upper) {
            prop_assert!(l <= &(u + 1e-12));
        }
        let rho_l = joint_pearson(&dist, &frechet_mass(&dist, FrechetBound::Lower), ValueEncoding::Ordinal);
        let rho_u = joint_pearson(&dist, &frechet_mass(&dist, FrechetBound::Upper), ValueEncoding::Ordinal);
        if let (Some(l), Some(u)) = (rho_l, rho_u) {
            prop_assert!(l <= 1e-12 && u >= -1e-12, "{l} {u}");
        }
    }

    #[test]
    fn joint_keeps_the_marginals(dist in pair(), rho in -1.0f64..=1.0) {
        let n = dist.len();
        let j = frechet_joint(&dist, rho, ValueEncoding::Ordinal);
        prop_assert!((0.0..=1.0).contains(&j.theta));
        for i in 0..n {
            let row: f64 = (0..n).map(|y| j.at(i, y)).sum();
            let col: f64 = (0..n).map(|x| j.at(x, i)).sum();
            prop_assert!((row - dist.f[i]).abs() <= 1e-9 && (col - dist.g[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn ordinal_values_ignore_relabeling(dist in pair(), shift in 1u64..1000, rho in -1.0f64..=1.0) {
        let relabeled = DistributionPair::from_counts(
            dist.support.iter().map(|c| ContentId(c.0 * 3 + shift)).collect(),
            dist.prev_counts.clone(),
            dist.counts.clone(),
        );
        let a = frechet_joint(&dist, rho, ValueEncoding::Ordinal);
        let b = frechet_joint(&relabeled, rho, ValueEncoding::Ordinal);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn detection_is_a_pure_function() {
    let mut contents: Vec<ContentProfile> = (1..20).map(|c| ContentProfile::steady(c, 20, 2.0, 14.0)).collect();
    contents.push(ContentProfile::flash(
        20,
        300,
        0.2,
        15.0,
        &[(PhaseSchedule::ramp_up(150, 200, 0.05), PhaseSchedule::ramp_down(350, 400, 0.05))],
    ));
    let trace = generate(&GeneratorConfig { horizon: 500, bin_width: 1, seed: 4, contents }).unwrap();
    let cfg = FlagConfig::default();
    let a = detect(&trace, 1, &cfg).unwrap();
    let b = detect(&trace.clone(), 1, &cfg).unwrap();
    assert_eq!(a.points, b.points);
    assert_eq!(a.events, b.events);
    assert!(a.events.windows(2).all(|e| e[0].1 < e[1].0));
    assert!(a.events.iter().all(|&(s, e)| 1 <= s && s <= e && e < trace.horizon()));
}
