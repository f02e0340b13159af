use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{FchpInstance, FchpSolution, Mode, EPS};

/// Constraint family of a violation. The names match the LP row prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    /// Backlog balance.
    R1,
    /// Server bandwidth.
    R2,
    /// Client bandwidth.
    R3,
    /// Full attendance.
    R4,
    /// Attendance implies the attendance indicator.
    R4x,
    /// Attendance needs a replica.
    R5,
    /// Origin holds the content at its start.
    R6,
    /// No replica before the start.
    R7,
    /// Only the origin at the start.
    R8,
    /// No copy before the start.
    R9,
    /// Literal: a replica requires an outgoing copy `tr` periods earlier.
    R10,
    /// Literal: a copy's destination holds the content.
    R11,
    /// Server storage.
    R12,
    /// Hirable servers serve only in hired slots.
    R13,
    /// Corrected: a copy's source holds the content.
    Source,
    /// Corrected: a replica persists or is created by a copy.
    Persistence,
    /// Corrected: copies to the same server are not allowed.
    SelfCopy,
    /// Structural problem: ids out of range, content mismatch, chunk served
    /// before it arises, duplicated chunk, negative backlog, bad hire.
    Domain,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::R1 => "r1",
            Family::R2 => "r2",
            Family::R3 => "r3",
            Family::R4 => "r4",
            Family::R4x => "r4x",
            Family::R5 => "r5",
            Family::R6 => "r6",
            Family::R7 => "r7",
            Family::R8 => "r8",
            Family::R9 => "r9",
            Family::R10 => "r10",
            Family::R11 => "r11",
            Family::R12 => "r12",
            Family::R13 => "r13",
            Family::Source => "src",
            Family::Persistence => "persist",
            Family::SelfCopy => "self",
            Family::Domain => "domain",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub family: Family,
    /// Index tuple in LP naming style, e.g. `j3_t7`.
    pub index: String,
    /// Amount by which the constraint is exceeded (always positive).
    pub slack: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{} exceeded by {}", self.family, self.index, self.slack)
    }
}

fn tol(scale: f64) -> f64 {
    EPS * scale.abs().max(1.0)
}

/// Lists every violated constraint of `sol` under `mode`; empty iff feasible.
pub fn check_feasibility(inst: &FchpInstance, sol: &FchpSolution, mode: Mode) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |family, index: String, slack: f64| out.push(Violation { family, index, slack });
    let ns = inst.servers.len();
    let nr = inst.requests.len();
    let nc = inst.contents.len();
    let tf = inst.periods;

    // Structure, and the chunk-level serve indicators.
    let mut seen_keys = BTreeSet::new();
    let mut chunks: BTreeSet<(usize, usize, usize, usize)> = BTreeSet::new();
    for a in &sol.assignments {
        if a.server >= ns || a.content >= nc || a.period == 0 || a.period > tf {
            push(Family::Domain, format!("k{}_j{}_t{}", a.content, a.server, a.period), 1.0);
            continue;
        }
        if !seen_keys.insert(a.key()) {
            push(Family::Domain, format!("k{}_j{}_t{}", a.content, a.server, a.period), 1.0);
        }
        for (&i, os) in &a.served {
            if i >= nr || inst.requests[i].content != a.content {
                push(Family::Domain, format!("i{}_j{}_t{}", i, a.server, a.period), 1.0);
                continue;
            }
            for &o in os {
                if o == 0 || o > a.period || !chunks.insert((i, o, a.server, a.period)) {
                    push(Family::Domain, format!("i{}_o{}_j{}_t{}", i, o, a.server, a.period), 1.0);
                }
            }
        }
    }
    for &(i, t) in sol.backlog.keys() {
        let b = sol.backlog[&(i, t)];
        if i >= nr || t == 0 || t > tf || b < -EPS {
            push(Family::Domain, format!("b_i{i}_t{t}"), b.abs().max(1.0));
        }
    }
    for &(j, a) in &sol.hires {
        if j >= ns || !inst.servers[j].is_hirable() || a == 0 || a > inst.billing_slots() {
            push(Family::Domain, format!("z_j{j}_a{a}"), 1.0);
        }
    }
    for &(k, j, t) in &sol.replicas {
        if k >= nc || j >= ns || t == 0 || t > tf {
            push(Family::Domain, format!("y_k{k}_j{j}_t{t}"), 1.0);
        }
    }
    for r in &sol.replications {
        if r.content >= nc || r.from >= ns || r.to >= ns || r.period == 0 || r.period > tf {
            push(Family::Domain, format!("w_k{}_j{}_l{}_t{}", r.content, r.from, r.to, r.period), 1.0);
        }
    }

    let mut served: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for &(i, o, j, t) in &chunks {
        *served.entry((i, j, t)).or_insert(0.0) += inst.demand(i, o);
    }
    let attendance: BTreeSet<(usize, usize, usize)> = sol
        .assignments
        .iter()
        .filter(|a| a.server < ns && a.period >= 1 && a.period <= tf)
        .flat_map(|a| a.served.keys().filter(|&&i| i < nr).map(move |&i| (i, a.server, a.period)))
        .collect();
    let mut per_it = vec![vec![0.0; tf + 1]; nr];
    let mut per_jt = vec![vec![0.0; tf + 1]; ns];
    for (&(i, j, t), &v) in &served {
        per_it[i][t] += v;
        per_jt[j][t] += v;
    }
    let b = |i: usize, t: usize| -> f64 {
        if t == 0 {
            0.0
        } else {
            sol.backlog.get(&(i, t)).copied().unwrap_or(0.0)
        }
    };

    for i in 0..nr {
        let size = inst.request_size(i);
        for t in inst.balance_start(i, mode)..=tf {
            let lhs = per_it[i][t];
            let rhs = inst.demand(i, t) + b(i, t - 1) - b(i, t);
            if (lhs - rhs).abs() > tol(size) {
                push(Family::R1, format!("i{i}_t{t}"), (lhs - rhs).abs());
            }
        }
        for t in 1..=tf {
            if per_it[i][t] > inst.client_bandwidth + tol(inst.client_bandwidth) {
                push(Family::R3, format!("i{i}_t{t}"), per_it[i][t] - inst.client_bandwidth);
            }
        }
        let total: f64 = per_it[i].iter().sum();
        if (total - size).abs() > tol(size) {
            push(Family::R4, format!("i{i}"), (total - size).abs());
        }
    }
    for (&(i, j, t), &v) in &served {
        if v > inst.request_size(i) + tol(v) || (v > 0.0 && !attendance.contains(&(i, j, t))) {
            push(Family::R4x, format!("i{i}_j{j}_t{t}"), v);
        }
    }
    for j in 0..ns {
        let mb = inst.servers[j].bandwidth;
        for t in 1..=tf {
            if per_jt[j][t] > mb + tol(mb) {
                push(Family::R2, format!("j{j}_t{t}"), per_jt[j][t] - mb);
            }
        }
    }
    for &(i, j, t) in &attendance {
        let k = inst.requests[i].content;
        if !sol.replicas.contains(&(k, j, t)) {
            push(Family::R5, format!("i{i}_j{j}_t{t}"), 1.0);
        }
        if inst.servers[j].is_hirable() && !sol.hires.contains(&(j, inst.slot_of(t))) {
            push(Family::R13, format!("i{i}_j{j}_t{t}"), 1.0);
        }
    }

    let y = |k: usize, j: usize, t: usize| sol.replicas.contains(&(k, j, t));
    let mut w_out: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    let mut w_in: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    for r in &sol.replications {
        if mode == Mode::Corrected && r.from == r.to {
            continue;
        }
        *w_out.entry((r.content, r.from, r.period)).or_insert(0) += 1;
        *w_in.entry((r.content, r.to, r.period)).or_insert(0) += 1;
    }
    for (k, c) in inst.contents.iter().enumerate() {
        let bk = c.start;
        if !y(k, c.origin, bk) {
            push(Family::R6, format!("k{k}"), 1.0);
        }
        let early = sol.replicas.iter().filter(|&&(kk, _, t)| kk == k && t < bk).count();
        if early > 0 {
            push(Family::R7, format!("k{k}"), early as f64);
        }
        let others = (0..ns).filter(|&j| j != c.origin && y(k, j, bk)).count();
        if others > 0 {
            push(Family::R8, format!("k{k}"), others as f64);
        }
    }
    for r in &sol.replications {
        if r.content >= nc || r.from >= ns || r.to >= ns {
            continue;
        }
        let k = r.content;
        let bk = inst.contents[k].start;
        let idx = format!("k{}_j{}_l{}_t{}", k, r.from, r.to, r.period);
        if r.period < bk {
            push(Family::R9, idx.clone(), 1.0);
        }
        match mode {
            Mode::Literal => {
                if r.period >= bk && !y(k, r.to, r.period) {
                    push(Family::R11, format!("k{}_j{}_l{}_t{}", k, r.to, r.from, r.period), 1.0);
                }
            }
            Mode::Corrected => {
                if r.from == r.to {
                    push(Family::SelfCopy, idx, 1.0);
                } else if !inst.source_period(r.period).is_some_and(|p| y(k, r.from, p)) {
                    push(Family::Source, idx, 1.0);
                }
            }
        }
    }
    let tr = inst.replication_delay;
    for (k, c) in inst.contents.iter().enumerate() {
        let bk = c.start;
        for j in 0..ns {
            match mode {
                Mode::Literal => {
                    for t in bk..=tf.saturating_sub(tr) {
                        if y(k, j, t + tr) && w_out.get(&(k, j, t)).copied().unwrap_or(0) == 0 {
                            push(Family::R10, format!("k{k}_j{j}_t{t}"), 1.0);
                        }
                    }
                }
                Mode::Corrected => {
                    for u in bk + 1..=tf {
                        let created = u > tr && w_in.get(&(k, j, u - tr)).copied().unwrap_or(0) > 0;
                        if y(k, j, u) && !y(k, j, u - 1) && !created {
                            push(Family::Persistence, format!("k{k}_l{j}_t{u}"), 1.0);
                        }
                    }
                }
            }
        }
    }
    for j in 0..ns {
        let cap = inst.servers[j].storage;
        for t in 1..=tf {
            let used: f64 = (0..nc).filter(|&k| y(k, j, t)).map(|k| inst.contents[k].size).sum();
            if used > cap + tol(cap) {
                push(Family::R12, format!("j{j}_t{t}"), used - cap);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fchp::{fixture_o1, Assignment, Replication};

    fn served(pairs: &[(usize, &[usize])]) -> BTreeMap<usize, BTreeSet<usize>> {
        pairs.iter().map(|(i, os)| (*i, os.iter().copied().collect())).collect()
    }

    /// O1 served on both servers in period 2, the hirable one fed by a copy.
    fn o1_hire_solution() -> FchpSolution {
        FchpSolution {
            assignments: vec![
                Assignment { content: 0, server: 0, period: 2, served: served(&[(0, &[2])]) },
                Assignment { content: 0, server: 1, period: 2, served: served(&[(1, &[2])]) },
            ],
            replications: BTreeSet::from([Replication { content: 0, from: 0, to: 1, period: 2 }]),
            hires: BTreeSet::from([(1, 2)]),
            backlog: BTreeMap::new(),
            replicas: BTreeSet::from([(0, 0, 1), (0, 0, 2), (0, 1, 2)]),
        }
    }

    #[test]
    fn corrected_accepts_hand_solution() {
        let v = check_feasibility(&fixture_o1(), &o1_hire_solution(), Mode::Corrected);
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn literal_needs_outgoing_copies_for_every_replica() {
        let v = check_feasibility(&fixture_o1(), &o1_hire_solution(), Mode::Literal);
        let fams: BTreeSet<Family> = v.iter().map(|v| v.family).collect();
        assert!(fams.contains(&Family::R10));
        assert!(fams.iter().all(|f| matches!(f, Family::R10 | Family::R11)));
    }

    #[test]
    fn missing_replica_is_r5() {
        let mut s = o1_hire_solution();
        s.replicas.remove(&(0, 1, 2));
        let v = check_feasibility(&fixture_o1(), &s, Mode::Corrected);
        assert!(v.iter().any(|v| v.family == Family::R5 && v.index == "i1_j1_t2"));
    }

    #[test]
    fn client_overload_is_r3() {
        let mut inst = fixture_o1();
        inst.client_bandwidth = 1.0;
        let v = check_feasibility(&inst, &o1_hire_solution(), Mode::Corrected);
        assert!(v.iter().any(|v| v.family == Family::R3 && v.index == "i0_t2" && (v.slack - 1.0).abs() < 1e-12));
    }

    #[test]
    fn unhired_server_is_r13_and_bandwidth_is_r2() {
        let mut s = o1_hire_solution();
        s.hires.clear();
        s.assignments[0].served = served(&[(0, &[2]), (1, &[2])]);
        s.assignments.pop();
        let v = check_feasibility(&fixture_o1(), &s, Mode::Corrected);
        assert!(v.iter().any(|v| v.family == Family::R2 && v.index == "j0_t2"));
        s.assignments[0].server = 1;
        s.assignments[0].served = served(&[(0, &[2])]);
        let v = check_feasibility(&fixture_o1(), &s, Mode::Corrected);
        assert!(v.iter().any(|v| v.family == Family::R13));
    }

    #[test]
    fn backlog_must_balance() {
        let mut s = o1_hire_solution();
        s.assignments[1].period = 3;
        s.assignments[1].server = 0;
        s.replicas.insert((0, 0, 3));
        let v = check_feasibility(&fixture_o1(), &s, Mode::Corrected);
        assert!(v.iter().any(|v| v.family == Family::R1 && v.index == "i1_t2"));
        s.backlog.insert((1, 2), 2.0);
        let v = check_feasibility(&fixture_o1(), &s, Mode::Corrected);
        assert!(v.iter().all(|v| v.family != Family::R1), "{v:?}");
    }
}
