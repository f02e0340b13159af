//! Exhaustive solver for tiny instances.
//!
//! Only amounts matter to the constraints, so each request is enumerated as a
//! plan: the amount attended on every `(server, period)`, each amount being a
//! subset sum of the request's demand chunks released so far. Given the plans,
//! the remaining variables have closed forms or small enumerations:
//! attendance indicators and hires are the minimal ones implied by the plans,
//! the backlog is the smallest one balancing the attended amounts, replicas
//! are enumerated as supersets of the required ones, and copies are the
//! minimal set those replicas need under the chosen mode. All cost
//! coefficients are nonnegative, so restricting to these minimal choices loses
//! no optimum.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{Assignment, CostBreakdown, FchpInstance, FchpSolution, Mode, ModelError, Replication};

const AMOUNT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub mode: Mode,
    /// Cap on the product of per-request plan counts.
    pub max_search: f64,
    /// Cap on the plans of a single request.
    pub max_plans: usize,
    /// Cap on the free replica bits of a single content.
    pub max_free_replica_bits: u32,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { mode: Mode::Literal, max_search: 1e10, max_plans: 200_000, max_free_replica_bits: 16 }
    }
}

impl OracleConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
struct Plan {
    /// `(server, period, amount, chunk mask)` for nonzero amounts.
    served: Vec<(usize, usize, f64, u32)>,
    backlog: Vec<(usize, f64)>,
    cost: f64,
}

/// Achievable amounts at each period: subset sums of the chunks released so
/// far, with the first chunk mask reaching each amount.
fn achievable(chunks: &[(usize, f64)], tf: usize) -> Vec<Vec<(f64, u32)>> {
    let mut out = vec![Vec::new(); tf + 1];
    for (t, slot) in out.iter_mut().enumerate().skip(1) {
        let avail: Vec<usize> = (0..chunks.len()).filter(|&c| chunks[c].0 <= t).collect();
        let mut sums: Vec<(f64, u32)> = Vec::new();
        for sub in 0u32..(1u32 << avail.len()) {
            let mut mask = 0u32;
            let mut v = 0.0;
            for (bit, &c) in avail.iter().enumerate() {
                if sub >> bit & 1 == 1 {
                    mask |= 1 << c;
                    v += chunks[c].1;
                }
            }
            if !sums.iter().any(|(a, _)| (a - v).abs() <= AMOUNT_TOL) {
                sums.push((v, mask));
            }
        }
        sums.sort_by(|a, b| a.0.total_cmp(&b.0));
        *slot = sums;
    }
    out
}

fn request_plans(inst: &FchpInstance, i: usize, cfg: &OracleConfig) -> Result<Vec<Plan>, ModelError> {
    let (ns, tf) = (inst.servers.len(), inst.periods);
    let start = inst.request_start(i);
    let size = inst.request_size(i);
    let chunks: Vec<(usize, f64)> = (1..=tf).map(|o| (o, inst.demand(i, o))).filter(|c| c.1 > 0.0).collect();
    if chunks.len() > 20 {
        return Err(ModelError::TooLarge { size: chunks.len() as f64, cap: 20.0 });
    }
    let sums = achievable(&chunks, tf);
    let bx = inst.client_bandwidth;
    let tol = AMOUNT_TOL * size.max(1.0);

    // Per-period server vectors, then periods in sequence.
    let mut per_period: Vec<Vec<Vec<(f64, u32)>>> = vec![Vec::new(); tf + 1];
    for t in start..=tf {
        let mut vecs: Vec<Vec<(f64, u32)>> = vec![Vec::new()];
        for j in 0..ns {
            let mut next = Vec::new();
            for v in &vecs {
                let used: f64 = v.iter().map(|a| a.0).sum();
                for &(a, m) in &sums[t] {
                    if a > inst.servers[j].bandwidth + tol || used + a > bx + tol || used + a > size + tol {
                        continue;
                    }
                    let mut nv = v.clone();
                    nv.push((a, m));
                    next.push(nv);
                }
            }
            vecs = next;
        }
        per_period[t] = vecs;
    }

    let mut plans = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    fn rec(
        t: usize,
        total: f64,
        ctx: &(usize, usize, f64, f64),
        per_period: &[Vec<Vec<(f64, u32)>>],
        stack: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        cap: usize,
    ) -> Result<(), ModelError> {
        let (start, tf, size, tol) = *ctx;
        if t > tf {
            if (total - size).abs() <= tol {
                if out.len() >= cap {
                    return Err(ModelError::TooLarge { size: (cap + 1) as f64, cap: cap as f64 });
                }
                out.push(stack.clone());
            }
            return Ok(());
        }
        let _ = start;
        for (n, v) in per_period[t].iter().enumerate() {
            let add: f64 = v.iter().map(|a| a.0).sum();
            if total + add > size + tol {
                continue;
            }
            stack.push(n);
            rec(t + 1, total + add, ctx, per_period, stack, out, cap)?;
            stack.pop();
        }
        Ok(())
    }
    let mut choices = Vec::new();
    if start <= tf {
        rec(start, 0.0, &(start, tf, size, tol), &per_period, &mut stack, &mut choices, cfg.max_plans)?;
    }

    let c_i = inst.requests[i].attend_cost;
    for choice in choices {
        let mut served = Vec::new();
        let mut attended = vec![0.0; tf + 1];
        for (n, &idx) in choice.iter().enumerate() {
            let t = start + n;
            for (j, &(a, m)) in per_period[t][idx].iter().enumerate() {
                if a > 0.0 {
                    served.push((j, t, a, m));
                    attended[t] += a;
                }
            }
        }
        // b_t = b_{start-1} + K_t with K the running demand minus attendance.
        let mut k = 0.0;
        let mut ks = Vec::with_capacity(tf + 1 - start);
        for (t, att) in attended.iter().enumerate().skip(start) {
            k += inst.demand(i, t) - att;
            ks.push(k);
        }
        let need = ks.iter().fold(0.0f64, |m, &v| m.max(-v));
        let b0 = if inst.balance_start(i, cfg.mode) == 1 {
            if need > tol {
                continue;
            }
            0.0
        } else if need > tol {
            need
        } else {
            0.0
        };
        let mut backlog = Vec::new();
        if start > 1 && b0 > 0.0 {
            backlog.push((start - 1, b0));
        }
        for (n, kv) in ks.iter().enumerate() {
            let v = b0 + kv;
            if v > tol {
                backlog.push((start + n, v));
            }
        }
        let cost = c_i * served.len() as f64 + backlog.iter().map(|&(t, v)| inst.penalty(i, t) * v).sum::<f64>();
        plans.push(Plan { served, backlog, cost });
    }
    plans.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    Ok(plans)
}

/// Replica bit index of `(server, period)`.
fn bit(tf: usize, j: usize, t: usize) -> u32 {
    (j * tf + t - 1) as u32
}

#[derive(Debug, Clone)]
struct ReplicaChoice {
    cost: f64,
    mask: u64,
    copies: Vec<Replication>,
}

struct ReplicaSolver<'a> {
    inst: &'a FchpInstance,
    mode: Mode,
    max_free: u32,
    per_content: HashMap<(usize, u64), Vec<ReplicaChoice>>,
    combined: HashMap<Vec<u64>, Option<(f64, Vec<ReplicaChoice>)>>,
}

impl<'a> ReplicaSolver<'a> {
    fn copies_for(&self, k: usize, mask: u64) -> Option<Vec<Replication>> {
        let inst = self.inst;
        let (ns, tf) = (inst.servers.len(), inst.periods);
        let bk = inst.contents[k].start;
        let tr = inst.replication_delay;
        let y = |j: usize, t: usize| mask >> bit(tf, j, t) & 1 == 1;
        let mut out = Vec::new();
        match self.mode {
            Mode::Literal => {
                for j in 0..ns {
                    for t in bk..=tf.saturating_sub(tr) {
                        if !y(j, t + tr) {
                            continue;
                        }
                        let to = if y(j, t) { Some(j) } else { (0..ns).find(|&l| y(l, t)) };
                        out.push(Replication { content: k, from: j, to: to?, period: t });
                    }
                }
            }
            Mode::Corrected => {
                for l in 0..ns {
                    for u in bk + 1..=tf {
                        if !y(l, u) || y(l, u - 1) {
                            continue;
                        }
                        if u <= tr || u - tr < bk {
                            return None;
                        }
                        let s = u - tr;
                        let p = inst.source_period(s)?;
                        let from = (0..ns).find(|&j| j != l && y(j, p))?;
                        out.push(Replication { content: k, from, to: l, period: s });
                    }
                }
            }
        }
        Some(out)
    }

    fn candidates(&mut self, k: usize, required: u64) -> Result<Vec<ReplicaChoice>, ModelError> {
        if let Some(c) = self.per_content.get(&(k, required)) {
            return Ok(c.clone());
        }
        let inst = self.inst;
        let (ns, tf) = (inst.servers.len(), inst.periods);
        let c = &inst.contents[k];
        let mut allowed = 1u64 << bit(tf, c.origin, c.start);
        for j in 0..ns {
            for t in c.start + 1..=tf {
                if c.size <= inst.servers[j].storage {
                    allowed |= 1 << bit(tf, j, t);
                }
            }
        }
        let forced = required | 1 << bit(tf, c.origin, c.start);
        let mut out = Vec::new();
        if forced & !allowed == 0 && c.size <= inst.servers[c.origin].storage {
            let free = allowed & !forced;
            if free.count_ones() > self.max_free {
                return Err(ModelError::TooLarge { size: free.count_ones() as f64, cap: self.max_free as f64 });
            }
            // Ascending submasks of `free`.
            let mut sub = 0u64;
            loop {
                let mask = forced | sub;
                if let Some(copies) = self.copies_for(k, mask) {
                    out.push(ReplicaChoice { cost: c.copy_cost * copies.len() as f64, mask, copies });
                }
                if sub == free {
                    break;
                }
                sub = (sub.wrapping_sub(free)) & free;
            }
        }
        out.sort_by(|a, b| a.cost.total_cmp(&b.cost));
        self.per_content.insert((k, required), out.clone());
        Ok(out)
    }

    fn solve(&mut self, required: &[u64]) -> Result<Option<(f64, Vec<ReplicaChoice>)>, ModelError> {
        if let Some(r) = self.combined.get(required) {
            return Ok(r.clone());
        }
        let lists: Vec<Vec<ReplicaChoice>> =
            required.iter().enumerate().map(|(k, &r)| self.candidates(k, r)).collect::<Result<_, _>>()?;
        let inst = self.inst;
        let (ns, tf) = (inst.servers.len(), inst.periods);
        let mins: Vec<f64> = lists.iter().map(|l| l.first().map_or(f64::INFINITY, |c| c.cost)).collect();
        let mut suffix = vec![0.0; lists.len() + 1];
        for k in (0..lists.len()).rev() {
            suffix[k] = suffix[k + 1] + mins[k];
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut usage = vec![0.0; ns * tf];
        let mut pick = Vec::new();
        #[allow(clippy::too_many_arguments)]
        fn dfs(
            k: usize,
            cost: f64,
            lists: &[Vec<ReplicaChoice>],
            suffix: &[f64],
            inst: &FchpInstance,
            usage: &mut [f64],
            pick: &mut Vec<usize>,
            best: &mut Option<(f64, Vec<usize>)>,
        ) {
            if k == lists.len() {
                if best.as_ref().is_none_or(|b| cost < b.0 - 1e-12) {
                    *best = Some((cost, pick.clone()));
                }
                return;
            }
            let tf = inst.periods;
            let size = inst.contents[k].size;
            for (n, ch) in lists[k].iter().enumerate() {
                if let Some(b) = best {
                    if cost + ch.cost + suffix[k + 1] >= b.0 - 1e-12 {
                        break;
                    }
                }
                let bits: Vec<usize> = (0..usage.len()).filter(|&b| ch.mask >> b & 1 == 1).collect();
                let fits = bits.iter().all(|&b| usage[b] + size <= inst.servers[b / tf].storage * (1.0 + 1e-12) + 1e-9);
                if !fits {
                    continue;
                }
                for &b in &bits {
                    usage[b] += size;
                }
                pick.push(n);
                dfs(k + 1, cost + ch.cost, lists, suffix, inst, usage, pick, best);
                pick.pop();
                for &b in &bits {
                    usage[b] -= size;
                }
            }
        }
        dfs(0, 0.0, &lists, &suffix, inst, &mut usage, &mut pick, &mut best);
        let out = best.map(|(c, p)| (c, p.iter().enumerate().map(|(k, &n)| lists[k][n].clone()).collect()));
        self.combined.insert(required.to_vec(), out.clone());
        Ok(out)
    }
}

struct Search<'a> {
    inst: &'a FchpInstance,
    plans: Vec<Vec<Plan>>,
    suffix_min: Vec<f64>,
    load: Vec<f64>,
    pick: Vec<usize>,
    best: Option<(f64, Vec<usize>, f64, Vec<ReplicaChoice>)>,
    replicas: ReplicaSolver<'a>,
    weights: Vec<f64>,
}

impl<'a> Search<'a> {
    fn leaf(&mut self, cost: f64) -> Result<(), ModelError> {
        let inst = self.inst;
        let tf = inst.periods;
        let mut required = vec![0u64; inst.contents.len()];
        let mut hires = BTreeSet::new();
        for (i, &p) in self.pick.iter().enumerate() {
            let k = inst.requests[i].content;
            for &(j, t, _, _) in &self.plans[i][p].served {
                required[k] |= 1 << bit(tf, j, t);
                if inst.servers[j].is_hirable() {
                    hires.insert((j, inst.slot_of(t)));
                }
            }
        }
        let fin: f64 = hires.iter().map(|&(j, _)| self.weights[j]).sum();
        if let Some(b) = &self.best {
            if cost + fin >= b.0 - 1e-12 {
                return Ok(());
            }
        }
        if let Some((rc, choice)) = self.replicas.solve(&required)? {
            let total = cost + fin + rc;
            if self.best.as_ref().is_none_or(|b| total < b.0 - 1e-12) {
                self.best = Some((total, self.pick.clone(), fin, choice));
            }
        }
        Ok(())
    }

    fn dfs(&mut self, i: usize, cost: f64) -> Result<(), ModelError> {
        if i == self.plans.len() {
            return self.leaf(cost);
        }
        let tf = self.inst.periods;
        for n in 0..self.plans[i].len() {
            let pc = self.plans[i][n].cost;
            if let Some(b) = &self.best {
                if cost + pc + self.suffix_min[i + 1] >= b.0 - 1e-12 {
                    break;
                }
            }
            let fits = self.plans[i][n].served.iter().all(|&(j, t, a, _)| {
                let mb = self.inst.servers[j].bandwidth;
                self.load[j * tf + t - 1] + a <= mb + AMOUNT_TOL * mb.max(1.0)
            });
            if !fits {
                continue;
            }
            for &(j, t, a, _) in &self.plans[i][n].served {
                self.load[j * tf + t - 1] += a;
            }
            self.pick.push(n);
            self.dfs(i + 1, cost + pc)?;
            self.pick.pop();
            for &(j, t, a, _) in &self.plans[i][n].served {
                self.load[j * tf + t - 1] -= a;
            }
        }
        Ok(())
    }
}

/// Globally optimal solution of a tiny instance under `cfg.mode`. Among
/// equal-cost optima the first one met in enumeration order is returned.
pub fn brute_force_solve(inst: &FchpInstance, cfg: &OracleConfig) -> Result<(FchpSolution, CostBreakdown), ModelError> {
    inst.validate()?;
    let (ns, tf) = (inst.servers.len(), inst.periods);
    if ns * tf > 64 {
        return Err(ModelError::TooLarge { size: (ns * tf) as f64, cap: 64.0 });
    }
    let plans: Vec<Vec<Plan>> =
        (0..inst.requests.len()).map(|i| request_plans(inst, i, cfg)).collect::<Result<_, _>>()?;
    let space: f64 = plans.iter().map(|p| p.len() as f64).product();
    if space > cfg.max_search {
        return Err(ModelError::TooLarge { size: space, cap: cfg.max_search });
    }
    if plans.iter().any(|p| p.is_empty()) {
        return Err(ModelError::Infeasible);
    }
    let mut suffix_min = vec![0.0; plans.len() + 1];
    for i in (0..plans.len()).rev() {
        suffix_min[i] = suffix_min[i + 1] + plans[i][0].cost;
    }
    let weights = (0..ns).map(|j| inst.financial_weight(j)).collect();
    let mut search = Search {
        inst,
        plans,
        suffix_min,
        load: vec![0.0; ns * tf],
        pick: Vec::new(),
        best: None,
        replicas: ReplicaSolver {
            inst,
            mode: cfg.mode,
            max_free: cfg.max_free_replica_bits,
            per_content: HashMap::new(),
            combined: HashMap::new(),
        },
        weights,
    };
    search.dfs(0, 0.0)?;
    let Some((_, pick, fin, choice)) = search.best else {
        return Err(ModelError::Infeasible);
    };

    let mut sol = FchpSolution::default();
    let mut groups: BTreeMap<(usize, usize, usize), BTreeMap<usize, BTreeSet<usize>>> = BTreeMap::new();
    let mut attend = 0.0;
    let mut backlog_cost = 0.0;
    for (i, &p) in pick.iter().enumerate() {
        let plan = &search.plans[i][p];
        let k = inst.requests[i].content;
        let chunk_periods: Vec<usize> = (1..=tf).filter(|&o| inst.demand(i, o) > 0.0).collect();
        for &(j, t, _, mask) in &plan.served {
            let os = (0..chunk_periods.len()).filter(|&c| mask >> c & 1 == 1).map(|c| chunk_periods[c]).collect();
            groups.entry((k, j, t)).or_default().insert(i, os);
            if inst.servers[j].is_hirable() {
                sol.hires.insert((j, inst.slot_of(t)));
            }
        }
        attend += inst.requests[i].attend_cost * plan.served.len() as f64;
        for &(t, v) in &plan.backlog {
            sol.backlog.insert((i, t), v);
            backlog_cost += inst.penalty(i, t) * v;
        }
    }
    sol.assignments = groups
        .into_iter()
        .map(|((content, server, period), served)| Assignment { content, server, period, served })
        .collect();
    let mut replication = 0.0;
    for (k, ch) in choice.iter().enumerate() {
        for j in 0..ns {
            for t in 1..=tf {
                if ch.mask >> bit(tf, j, t) & 1 == 1 {
                    sol.replicas.insert((k, j, t));
                }
            }
        }
        sol.replications.extend(ch.copies.iter().copied());
        replication += ch.cost;
    }
    Ok((sol, CostBreakdown::new(attend, backlog_cost, replication, fin)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fchp::{check_feasibility, evaluate, fixture_o1, Content, Request, Server};

    #[test]
    fn achievable_sums_dedupe() {
        let a = achievable(&[(1, 2.0), (2, 2.0), (3, 1.0)], 3);
        let vals = |t: usize| a[t].iter().map(|x| x.0).collect::<Vec<_>>();
        assert_eq!(vals(1), vec![0.0, 2.0]);
        assert_eq!(vals(2), vec![0.0, 2.0, 4.0]);
        assert_eq!(vals(3), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn o1_hires_in_both_modes() {
        for mode in [Mode::Literal, Mode::Corrected] {
            let inst = fixture_o1();
            let (sol, cost) = brute_force_solve(&inst, &OracleConfig::with_mode(mode)).unwrap();
            assert!(check_feasibility(&inst, &sol, mode).is_empty());
            assert_eq!(evaluate(&inst, &sol).unwrap(), cost);
            assert_eq!(sol.hires, BTreeSet::from([(1, 2)]));
        }
    }

    #[test]
    fn ample_owned_server_hires_nothing() {
        let mut inst = fixture_o1();
        inst.servers[0].bandwidth = 4.0;
        let (sol, cost) = brute_force_solve(&inst, &OracleConfig::default()).unwrap();
        assert!(sol.hires.is_empty());
        assert_eq!(cost.financial_normalized, 0.0);
    }

    #[test]
    fn storage_shortfall_is_infeasible() {
        let inst = FchpInstance {
            client_bandwidth: 5.0,
            servers: vec![Server::owned(2.0, 5.0)],
            contents: vec![Content { size: 3.0, start: 1, origin: 0, copy_cost: 0.0 }],
            requests: vec![Request { content: 0, attend_cost: 1.0, demand: vec![3.0], penalty: vec![1.0] }],
            ..FchpInstance::empty(1)
        };
        assert_eq!(brute_force_solve(&inst, &OracleConfig::default()).unwrap_err(), ModelError::Infeasible);
    }
}
