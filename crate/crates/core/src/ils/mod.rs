//! Iterated local search with randomized variable neighborhood descent for
//! the planning model.
//!
//! Each restart builds a randomized greedy solution, descends with RVND, then
//! alternates perturbation and descent, raising the perturbation level on
//! failure and resetting it on improvement. The best restart is returned.

mod moves;
mod state;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use moves::{Applied, Move, Neighborhood};
pub use state::{SearchState, Tuple, TupleKey};

use crate::fchp::{CostBreakdown, FchpInstance, FchpSolution, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlsParams {
    pub iter_max: usize,
    pub level_max: usize,
    pub d: usize,
    pub swap_sample_fraction: f64,
    pub seed: u64,
}

impl Default for IlsParams {
    fn default() -> Self {
        Self { iter_max: 2, level_max: 1, d: 1, swap_sample_fraction: 0.05, seed: 0 }
    }
}

impl IlsParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.iter_max >= 1
            && self.level_max >= 1
            && self.d >= 1
            && self.swap_sample_fraction > 0.0
            && self.swap_sample_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidInstance(format!("invalid search parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IlsStats {
    pub restarts: usize,
    pub rvnd_calls: usize,
    pub improving_moves: usize,
    pub perturbation_moves: usize,
    pub accepted_perturbations: usize,
    pub construction_time: Duration,
    pub search_time: Duration,
    pub wall_time: Duration,
    /// Final cost of each restart.
    pub restart_costs: Vec<f64>,
}

/// Search events reported to an observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Constructed,
    Improved,
    Perturbed,
    Accepted,
}

/// Greedy construction. Requests are taken in random order and each demand
/// chunk goes, at the earliest period where anything fits, to the cheapest
/// server by (owned first, added hiring cost, added attend cost, id).
/// When a pass leaves a chunk with nowhere to go, another random order is
/// tried, up to [`CONSTRUCTION_ATTEMPTS`] passes.
pub fn constructive_phase<'a, R: Rng>(inst: &'a FchpInstance, rng: &mut R) -> Result<SearchState<'a>, ModelError> {
    let empty = SearchState::empty(inst)?;
    for _ in 0..CONSTRUCTION_ATTEMPTS {
        let mut order: Vec<usize> = (0..inst.requests.len()).collect();
        order.shuffle(rng);
        let mut s = empty.clone();
        if construct_pass(&mut s, &order) {
            return Ok(s);
        }
    }
    Err(ModelError::Infeasible)
}

pub const CONSTRUCTION_ATTEMPTS: usize = 32;

fn construct_pass(s: &mut SearchState<'_>, order: &[usize]) -> bool {
    let inst = s.inst;
    let ns = inst.servers.len();
    for &i in order {
        let k = inst.requests[i].content;
        for o in s.chunks[i].clone() {
            let mut placed = false;
            for t in o..=inst.periods {
                let mut cands: Vec<(bool, f64, f64, usize)> = (0..ns)
                    .filter(|&j| s.can_host(k, j, t))
                    .map(|j| {
                        let hirable = inst.servers[j].is_hirable();
                        let fin = if hirable && !s.slot_hired(j, inst.slot_of(t)) { s.weight(j) } else { 0.0 };
                        let fresh = !s.loc[i].values().any(|&p| p == (j, t));
                        let attend = if fresh { inst.requests[i].attend_cost } else { 0.0 };
                        (hirable, fin, attend, j)
                    })
                    .collect();
                cands.sort_by(|a, b| {
                    a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)).then(a.3.cmp(&b.3))
                });
                if cands.into_iter().any(|c| s.try_place(TupleKey::new(c.3, t, k), i, o)) {
                    placed = true;
                    break;
                }
            }
            if !placed {
                return false;
            }
        }
    }
    true
}

/// Descends until no neighborhood improves. A neighborhood that fails is
/// dropped until the next improvement. Returns the number of improving moves.
pub fn rvnd<R: Rng>(
    s: &mut SearchState<'_>,
    params: &IlsParams,
    rng: &mut R,
    observer: &mut dyn FnMut(Phase, &SearchState<'_>),
) -> usize {
    let mut active = Neighborhood::ALL.to_vec();
    let mut moves = 0;
    while !active.is_empty() {
        let n = rng.gen_range(0..active.len());
        if s.improve(active[n], params.d, params.swap_sample_fraction, rng).is_some() {
            moves += 1;
            observer(Phase::Improved, s);
            active = Neighborhood::ALL.to_vec();
        } else {
            active.remove(n);
        }
    }
    moves
}

/// Applies `level + 1` random feasible moves drawn from Shift, Swap, Split
/// and Merge. Returns the number applied, lower only when no move applies.
pub fn perturb<R: Rng>(s: &mut SearchState<'_>, level: usize, params: &IlsParams, rng: &mut R) -> usize {
    let mut applied = 0;
    for _ in 0..=level {
        let mut pool = Neighborhood::PERTURB.to_vec();
        while !pool.is_empty() {
            let n = rng.gen_range(0..pool.len());
            let mut cands = s.candidates(pool[n], params.d, params.swap_sample_fraction, rng);
            cands.shuffle(rng);
            if cands.iter().any(|mv| s.apply(mv).is_some()) {
                applied += 1;
                break;
            }
            pool.remove(n);
        }
    }
    applied
}

pub fn solve(inst: &FchpInstance, params: &IlsParams) -> Result<(FchpSolution, CostBreakdown, IlsStats), ModelError> {
    solve_with_observer(inst, params, &mut |_, _| {})
}

/// Full search. Restart `r` draws from stream `r` of the seeded generator, so
/// the result for `iter_max = n` is the best of the first `n` restarts.
pub fn solve_with_observer(
    inst: &FchpInstance,
    params: &IlsParams,
    observer: &mut dyn FnMut(Phase, &SearchState<'_>),
) -> Result<(FchpSolution, CostBreakdown, IlsStats), ModelError> {
    params.validate()?;
    let start = Instant::now();
    let mut stats = IlsStats::default();
    let mut best: Option<SearchState<'_>> = None;
    for r in 0..params.iter_max {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(r as u64);
        let t0 = Instant::now();
        let mut s = constructive_phase(inst, &mut rng)?;
        stats.construction_time += t0.elapsed();
        observer(Phase::Constructed, &s);
        let t1 = Instant::now();
        stats.improving_moves += rvnd(&mut s, params, &mut rng, observer);
        stats.rvnd_calls += 1;
        let mut level = 0;
        while level < params.level_max {
            let mut cand = s.clone();
            stats.perturbation_moves += perturb(&mut cand, level, params, &mut rng);
            observer(Phase::Perturbed, &cand);
            stats.improving_moves += rvnd(&mut cand, params, &mut rng, observer);
            stats.rvnd_calls += 1;
            if cand.total() < s.total() - 1e-9 {
                s = cand;
                stats.accepted_perturbations += 1;
                observer(Phase::Accepted, &s);
                level = 0;
            } else {
                level += 1;
            }
        }
        stats.search_time += t1.elapsed();
        stats.restarts += 1;
        stats.restart_costs.push(s.total());
        if best.as_ref().is_none_or(|b| s.total() < b.total() - 1e-9) {
            best = Some(s);
        }
    }
    stats.wall_time = start.elapsed();
    let best = best.expect("at least one restart");
    Ok((best.solution(), best.cost(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fchp::{check_feasibility, evaluate, fixture_o1, Mode};

    #[test]
    fn o1_reaches_the_hire_optimum() {
        let inst = fixture_o1();
        for seed in 0..10 {
            let (sol, cost, _) = solve(&inst, &IlsParams { seed, ..IlsParams::default() }).unwrap();
            assert!(check_feasibility(&inst, &sol, Mode::Corrected).is_empty());
            assert!((evaluate(&inst, &sol).unwrap().total - cost.total).abs() < 1e-9);
            assert!((cost.total - 4.0).abs() < 1e-9, "seed {seed}: {cost}");
        }
    }

    #[test]
    fn owned_capacity_means_no_hires() {
        let mut inst = fixture_o1();
        inst.servers[0].bandwidth = 4.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = constructive_phase(&inst, &mut rng).unwrap();
        assert!(s.solution().hires.is_empty());
    }

    #[test]
    fn perturb_level_zero_applies_one_move() {
        let inst = fixture_o1();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = constructive_phase(&inst, &mut rng).unwrap();
        let before = s.clone();
        assert_eq!(perturb(&mut s, 0, &IlsParams::default(), &mut rng), 1);
        assert_ne!(s, before);
    }

    #[test]
    fn bad_params_rejected() {
        let p = IlsParams { swap_sample_fraction: 0.0, ..IlsParams::default() };
        assert!(solve(&fixture_o1(), &p).is_err());
    }
}
