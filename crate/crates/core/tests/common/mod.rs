#![allow(dead_code)]

use std::collections::BTreeSet;

use flashcrowd_core::fchp::{export_lp, parse_lp, Content, FchpInstance, Mode, Request, Server, DEFAULT_LP_CAP};
use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;

/// Limits of a random instance.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub servers: usize,
    pub contents: usize,
    pub requests: usize,
    pub periods: usize,
    /// Keep every per-period demand within the client bandwidth, as the
    /// trace builder does.
    pub demand_within_bx: bool,
}

pub const TINY: Limits = Limits { servers: 2, contents: 2, requests: 3, periods: 4, demand_within_bx: false };

/// Random instance with integer data. Server 0 is owned; hirable servers may
/// follow. Demand is spread in whole units from the content start onwards.
pub fn random_instance<R: Rng>(rng: &mut R, lim: Limits) -> FchpInstance {
    let tf = rng.gen_range(2..=lim.periods.max(2));
    let bx = rng.gen_range(1..=3) as f64;
    let ns = rng.gen_range(1..=lim.servers);
    let nc = rng.gen_range(1..=lim.contents);
    let nr = rng.gen_range(1..=lim.requests);
    let servers: Vec<Server> = (0..ns)
        .map(|j| {
            let storage = rng.gen_range(2..=6) as f64;
            let bandwidth = rng.gen_range(1..=4) as f64;
            if j > 0 && rng.gen_bool(0.6) {
                Server::hirable(storage, bandwidth, rng.gen_range(1..=8) as f64)
            } else {
                Server::owned(storage, bandwidth)
            }
        })
        .collect();
    let contents: Vec<Content> = (0..nc)
        .map(|_| {
            let start = rng.gen_range(1..=2.min(tf));
            let max_size = if lim.demand_within_bx { 3.min(bx as usize * (tf - start + 1)) } else { 3 };
            Content {
                size: rng.gen_range(1..=max_size) as f64,
                start,
                origin: rng.gen_range(0..ns),
                copy_cost: rng.gen_range(0..=2) as f64,
            }
        })
        .collect();
    let requests = (0..nr)
        .map(|_| {
            let k = rng.gen_range(0..nc);
            let c = &contents[k];
            let mut demand = vec![0.0; tf];
            for _ in 0..c.size as usize {
                let open: Vec<usize> =
                    (c.start..=tf).filter(|&t| !lim.demand_within_bx || demand[t - 1] < bx).collect();
                demand[open[rng.gen_range(0..open.len())] - 1] += 1.0;
            }
            let p = rng.gen_range(1..=3) as f64;
            Request { content: k, attend_cost: rng.gen_range(0..=3) as f64, demand, penalty: vec![p; tf] }
        })
        .collect();
    FchpInstance {
        periods: tf,
        client_bandwidth: bx,
        replication_delay: rng.gen_range(0..=1),
        provisioning_delay: rng.gen_range(0..=1),
        billing_granularity: rng.gen_range(1..=2),
        servers,
        contents,
        requests,
    }
}

pub const MID: Limits = Limits { servers: 10, contents: 20, requests: 50, periods: 24, demand_within_bx: true };

/// Random instance up to `lim` with room for the demand: one or two owned
/// servers large enough for the contents they originate, hirable ones after
/// that, per-period demand within the client
/// bandwidth and every content starting in the first half of the horizon.
pub fn random_mid_instance<R: Rng>(rng: &mut R, lim: Limits) -> FchpInstance {
    let tf = rng.gen_range(10..=lim.periods.max(10));
    let bx = rng.gen_range(1..=3) as f64;
    let ns = rng.gen_range(2..=lim.servers.max(2));
    let nc = rng.gen_range(1..=lim.contents);
    let nr = rng.gen_range(1..=lim.requests);
    let owned = rng.gen_range(1..=2.min(ns - 1));
    let contents: Vec<Content> = (0..nc)
        .map(|_| Content {
            size: rng.gen_range(1..=5) as f64,
            start: rng.gen_range(1..=tf / 2),
            origin: rng.gen_range(0..owned),
            copy_cost: rng.gen_range(0..=3) as f64,
        })
        .collect();
    let servers: Vec<Server> = (0..ns)
        .map(|j| {
            let storage = rng.gen_range(10..=40) as f64;
            let bandwidth = rng.gen_range(4..=12) as f64;
            if j < owned {
                let held: f64 = contents.iter().filter(|c| c.origin == j).map(|c| c.size).sum();
                Server::owned(storage.max(held + 5.0), bandwidth)
            } else {
                Server::hirable(storage, bandwidth, rng.gen_range(1..=20) as f64)
            }
        })
        .collect();
    let requests = (0..nr)
        .map(|_| {
            let k = rng.gen_range(0..nc);
            let c = &contents[k];
            let arrival = rng.gen_range(c.start..=(tf / 2).max(c.start));
            let mut demand = vec![0.0; tf];
            let mut left = c.size;
            let mut t = arrival;
            while left > 0.0 {
                let a = left.min(bx);
                demand[t - 1] += a;
                left -= a;
                t += 1;
            }
            let p = rng.gen_range(1..=4) as f64;
            Request { content: k, attend_cost: rng.gen_range(0..=3) as f64, demand, penalty: vec![p; tf] }
        })
        .collect();
    FchpInstance {
        periods: tf,
        client_bandwidth: bx,
        replication_delay: rng.gen_range(0..=2),
        provisioning_delay: rng.gen_range(0..=2),
        billing_granularity: rng.gen_range(1..=3),
        servers,
        contents,
        requests,
    }
}

/// Optimum of the exported LP text solved by microlp; `None` if infeasible.
pub fn milp_optimum(inst: &FchpInstance, mode: Mode) -> Option<f64> {
    let model = parse_lp(&export_lp(inst, mode, DEFAULT_LP_CAP).unwrap()).unwrap();
    let mut names: BTreeSet<&str> = BTreeSet::new();
    names.extend(model.objective.iter().map(|t| t.0.as_str()));
    for c in &model.constraints {
        names.extend(c.terms.iter().map(|t| t.0.as_str()));
    }
    names.extend(model.binaries.iter().map(String::as_str));
    names.extend(model.continuous.keys().map(String::as_str));
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let vars: std::collections::BTreeMap<&str, microlp::Variable> = names
        .iter()
        .map(|&n| {
            let obj: f64 = model.objective.iter().filter(|t| t.0 == n).map(|t| t.1).sum();
            let v = if model.binaries.contains(n) {
                p.add_binary_var(obj)
            } else {
                let (lo, hi) = model.continuous.get(n).copied().unwrap_or((0.0, f64::INFINITY));
                p.add_var(obj, (lo, hi))
            };
            (n, v)
        })
        .collect();
    for c in &model.constraints {
        let terms: Vec<(microlp::Variable, f64)> = c.terms.iter().map(|(n, a)| (vars[n.as_str()], *a)).collect();
        let op = match c.op {
            flashcrowd_core::fchp::LpOp::Le => ComparisonOp::Le,
            flashcrowd_core::fchp::LpOp::Ge => ComparisonOp::Ge,
            flashcrowd_core::fchp::LpOp::Eq => ComparisonOp::Eq,
        };
        p.add_constraint(&terms[..], op, c.rhs);
    }
    match p.solve() {
        Ok(out) => {
            assert!(out.is_optimal(), "solver stopped early");
            Some(out.into_solution().ok()?.objective())
        }
        Err(microlp::Error::Infeasible) => None,
        Err(e) => panic!("solver error: {e:?}"),
    }
}
