//! Heuristic solution state with incremental evaluation.
//!
//! Operational model: an origin holds its content from the start period until
//! the last period the content is served there or copied from there. Any other
//! server holds a content over intervals, each
//! opened by one copy from the origin `tr` periods before its first use.
//! Intervals span from first to last use unless storage runs short, in which
//! case the least recently used content that the origin can still supply again
//! is dropped over the idle gap covering the overfull period. Demand chunks are atomic. A hirable server serves only
//! after the provisioning delay and is charged for every billing slot it
//! serves in.

use std::collections::{BTreeMap, BTreeSet};

use crate::fchp::{Assignment, CostBreakdown, FchpInstance, FchpSolution, ModelError, Replication};

const TOL: f64 = 1e-9;

/// Requests attended by one `(server, period, content)` tuple and the demand
/// periods served for each.
pub type Tuple = BTreeMap<usize, BTreeSet<usize>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TupleKey {
    pub server: usize,
    pub period: usize,
    pub content: usize,
}

impl TupleKey {
    pub fn new(server: usize, period: usize, content: usize) -> Self {
        Self { server, period, content }
    }

    pub fn on(self, server: usize) -> Self {
        Self { server, ..self }
    }

    pub fn at(self, period: usize) -> Self {
        Self { period, ..self }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ServerEval {
    pub feasible: bool,
    pub replication: f64,
    pub financial: f64,
    /// `(content, first, last)` replica intervals of non-origin contents.
    pub intervals: Vec<(usize, usize, usize)>,
    pub slots: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct RequestEval {
    pub feasible: bool,
    pub attend: f64,
    pub backlog: f64,
}

/// One chunk move between tuples.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Transfer {
    pub from: TupleKey,
    pub to: TupleKey,
    pub request: usize,
    pub chunks: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct SearchState<'a> {
    pub(crate) inst: &'a FchpInstance,
    pub(crate) tuples: BTreeMap<TupleKey, Tuple>,
    /// Placement `(server, period)` of each chunk, per request.
    pub(crate) loc: Vec<BTreeMap<usize, (usize, usize)>>,
    pub(crate) req: Vec<RequestEval>,
    pub(crate) srv: Vec<ServerEval>,
    /// Demand periods with positive demand, per request.
    pub(crate) chunks: Vec<Vec<usize>>,
    /// Penalty prefix sums, index `t` holds periods `1..=t`.
    prefix: Vec<Vec<f64>>,
    /// `(server, period)` of the tuples of each content.
    by_content: Vec<BTreeSet<(usize, usize)>>,
    /// Contents originating at each server.
    origin_of: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl PartialEq for SearchState<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.tuples == other.tuples
    }
}

impl<'a> SearchState<'a> {
    /// State with nothing placed. Fails when the origins cannot hold their
    /// own contents.
    pub fn empty(inst: &'a FchpInstance) -> Result<Self, ModelError> {
        inst.validate()?;
        let (ns, nr, tf) = (inst.servers.len(), inst.requests.len(), inst.periods);
        let mut origin_of = vec![Vec::new(); ns];
        for (k, c) in inst.contents.iter().enumerate() {
            origin_of[c.origin].push(k);
        }
        let chunks = (0..nr).map(|i| (1..=tf).filter(|&o| inst.demand(i, o) > 0.0).collect()).collect();
        let prefix = (0..nr)
            .map(|i| {
                let mut p = vec![0.0; tf + 1];
                for t in 1..=tf {
                    p[t] = p[t - 1] + inst.penalty(i, t);
                }
                p
            })
            .collect();
        let weights = (0..ns).map(|j| inst.financial_weight(j)).collect();
        let mut s = Self {
            inst,
            tuples: BTreeMap::new(),
            loc: vec![BTreeMap::new(); nr],
            req: vec![RequestEval::default(); nr],
            srv: vec![ServerEval::default(); ns],
            chunks,
            prefix,
            by_content: vec![BTreeSet::new(); inst.contents.len()],
            origin_of,
            weights,
        };
        s.refresh_all();
        if !s.feasible() {
            return Err(ModelError::Infeasible);
        }
        Ok(s)
    }

    /// Loads the assignments of `sol`. Fails unless every chunk is placed and
    /// the placement is feasible in the operational model.
    pub fn from_solution(inst: &'a FchpInstance, sol: &FchpSolution) -> Result<Self, ModelError> {
        let mut s = Self::empty(inst)?;
        for a in &sol.assignments {
            let key = TupleKey::new(a.server, a.period, a.content);
            for (&i, os) in &a.served {
                if i >= inst.requests.len() || a.server >= inst.servers.len() || inst.requests[i].content != a.content {
                    return Err(ModelError::InvalidInstance("assignment does not match the instance".into()));
                }
                for &o in os {
                    s.put(key, i, o);
                }
            }
        }
        s.refresh_all();
        if !s.complete() || !s.feasible() {
            return Err(ModelError::InvalidInstance("solution is outside the operational model".into()));
        }
        Ok(s)
    }

    pub fn instance(&self) -> &'a FchpInstance {
        self.inst
    }

    pub fn tuples(&self) -> &BTreeMap<TupleKey, Tuple> {
        &self.tuples
    }

    pub fn feasible(&self) -> bool {
        self.srv.iter().all(|s| s.feasible) && self.req.iter().all(|r| r.feasible)
    }

    /// Every chunk of every request is placed.
    pub fn complete(&self) -> bool {
        self.loc.iter().zip(&self.chunks).all(|(l, c)| l.len() == c.len())
    }

    pub fn cost(&self) -> CostBreakdown {
        let attend = self.req.iter().map(|r| r.attend).sum();
        let backlog = self.req.iter().map(|r| r.backlog).sum();
        let replication = self.srv.iter().map(|s| s.replication).sum();
        let financial = self.srv.iter().map(|s| s.financial).sum();
        CostBreakdown::new(attend, backlog, replication, financial)
    }

    pub fn total(&self) -> f64 {
        self.cost().total
    }

    /// Whether `server` may serve `content` in `period` at all.
    pub fn can_host(&self, content: usize, server: usize, period: usize) -> bool {
        let inst = self.inst;
        let c = &inst.contents[content];
        let s = &inst.servers[server];
        if period == 0 || period > inst.periods {
            return false;
        }
        if s.is_hirable() && period <= inst.provisioning_delay {
            return false;
        }
        if server == c.origin {
            period >= c.start
        } else {
            period >= c.start + inst.replication_delay.max(1) && c.size <= s.storage * (1.0 + TOL) + TOL
        }
    }

    pub(crate) fn put(&mut self, key: TupleKey, i: usize, o: usize) {
        self.by_content[key.content].insert((key.server, key.period));
        self.tuples.entry(key).or_default().entry(i).or_default().insert(o);
        self.loc[i].insert(o, (key.server, key.period));
    }

    pub(crate) fn take(&mut self, key: TupleKey, i: usize, o: usize) {
        if let Some(t) = self.tuples.get_mut(&key) {
            if let Some(set) = t.get_mut(&i) {
                set.remove(&o);
                if set.is_empty() {
                    t.remove(&i);
                }
            }
            if t.is_empty() {
                self.tuples.remove(&key);
                self.by_content[key.content].remove(&(key.server, key.period));
            }
        }
        self.loc[i].remove(&o);
    }

    fn refresh_all(&mut self) {
        for j in 0..self.srv.len() {
            self.srv[j] = self.eval_server(j);
        }
        for i in 0..self.req.len() {
            self.req[i] = self.eval_request(i);
        }
    }

    /// Re-evaluates the given servers and requests; returns the cost change
    /// and whether they are all feasible.
    pub(crate) fn refresh(&mut self, servers: &BTreeSet<usize>, requests: &BTreeSet<usize>) -> (f64, bool) {
        let mut delta = 0.0;
        let mut ok = true;
        for &j in servers {
            let e = self.eval_server(j);
            delta += e.replication + e.financial - self.srv[j].replication - self.srv[j].financial;
            ok &= e.feasible;
            self.srv[j] = e;
        }
        for &i in requests {
            let e = self.eval_request(i);
            delta += e.attend + e.backlog - self.req[i].attend - self.req[i].backlog;
            ok &= e.feasible;
            self.req[i] = e;
        }
        (delta, ok)
    }

    /// Executes the transfers, re-evaluates what they touch and undoes them if
    /// the result is infeasible. Returns the cost change when kept.
    pub(crate) fn execute(&mut self, transfers: &[Transfer]) -> Option<f64> {
        let mut servers = BTreeSet::new();
        let mut requests = BTreeSet::new();
        for tr in transfers {
            for &o in &tr.chunks {
                self.take(tr.from, tr.request, o);
                self.put(tr.to, tr.request, o);
            }
            servers.insert(tr.from.server);
            servers.insert(tr.to.server);
            requests.insert(tr.request);
        }
        for tr in transfers {
            servers.extend(self.holders(tr.from.content));
            servers.extend(self.holders(tr.to.content));
        }
        let (delta, ok) = self.refresh(&servers, &requests);
        if ok {
            return Some(delta);
        }
        for tr in transfers.iter().rev() {
            for &o in &tr.chunks {
                self.take(tr.to, tr.request, o);
                self.put(tr.from, tr.request, o);
            }
        }
        self.refresh(&servers, &requests);
        None
    }

    /// Places chunk `o` of request `i` at `key` if feasible.
    pub(crate) fn try_place(&mut self, key: TupleKey, i: usize, o: usize) -> bool {
        let requests = BTreeSet::from([i]);
        self.put(key, i, o);
        let servers = self.holders(key.content);
        let (_, ok) = self.refresh(&servers, &requests);
        if !ok {
            self.take(key, i, o);
            self.refresh(&servers, &requests);
        }
        ok
    }

    /// The origin of `k` and every server serving it. Their evaluations
    /// depend on how long the origin holds `k`.
    fn holders(&self, k: usize) -> BTreeSet<usize> {
        let mut out: BTreeSet<usize> = self.by_content[k].iter().map(|&(j, _)| j).collect();
        out.insert(self.inst.contents[k].origin);
        out
    }

    /// Last period the origin of `k` holds it: the start, a use on the origin,
    /// or the source period of the copy opening the first use on another
    /// server, whichever is latest.
    pub(crate) fn origin_end(&self, k: usize) -> usize {
        let c = &self.inst.contents[k];
        let tr = self.inst.replication_delay;
        let mut first: BTreeMap<usize, usize> = BTreeMap::new();
        for &(j, t) in &self.by_content[k] {
            first.entry(j).or_insert(t);
        }
        self.by_content[k]
            .iter()
            .filter(|&&(j, _)| j == c.origin)
            .map(|&(_, t)| t)
            .chain(first.iter().filter(|&(&j, _)| j != c.origin).filter_map(|(_, &t)| self.source_of(t - tr)))
            .fold(c.start, usize::max)
    }

    /// Period in which the origin must hold a content copied at `t`.
    fn source_of(&self, t: usize) -> Option<usize> {
        self.inst.source_period(t)
    }

    pub(crate) fn server_tuples(&self, j: usize) -> impl Iterator<Item = (&TupleKey, &Tuple)> {
        self.tuples.range(TupleKey::new(j, 0, 0)..TupleKey::new(j + 1, 0, 0))
    }

    pub(crate) fn tuple_bytes(&self, tuple: &Tuple) -> f64 {
        tuple.iter().map(|(&i, os)| os.iter().map(|&o| self.inst.demand(i, o)).sum::<f64>()).sum()
    }

    pub(crate) fn slot_hired(&self, j: usize, slot: usize) -> bool {
        self.srv[j].slots.contains(&slot)
    }

    pub(crate) fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    fn eval_server(&self, j: usize) -> ServerEval {
        let inst = self.inst;
        let tf = inst.periods;
        let tr = inst.replication_delay;
        let server = &inst.servers[j];
        let mut out = ServerEval { feasible: true, ..ServerEval::default() };
        let mut load = vec![0.0; tf + 1];
        let mut uses: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (key, tuple) in self.server_tuples(j) {
            load[key.period] += self.tuple_bytes(tuple);
            if !self.can_host(key.content, j, key.period) {
                out.feasible = false;
            }
            if key.content < inst.contents.len() && inst.contents[key.content].origin != j {
                uses.entry(key.content).or_default().push(key.period);
            }
            if server.is_hirable() {
                out.slots.insert(inst.slot_of(key.period));
            }
        }
        let cap = server.bandwidth * (1.0 + TOL) + TOL;
        if load.iter().any(|&l| l > cap) {
            out.feasible = false;
        }
        let mut intervals: Vec<(usize, usize, usize)> =
            uses.iter().map(|(&k, ts)| (k, ts[0], *ts.last().expect("nonempty"))).collect();
        let storage = server.storage * (1.0 + TOL) + TOL;
        let mut base = vec![0.0; tf + 1];
        for &k in &self.origin_of[j] {
            for b in base.iter_mut().take(self.origin_end(k) + 1).skip(inst.contents[k].start) {
                *b += inst.contents[k].size;
            }
        }
        for t in 1..=tf {
            loop {
                let occ: f64 = base[t]
                    + intervals
                        .iter()
                        .filter(|iv| iv.1 <= t && t <= iv.2)
                        .map(|iv| inst.contents[iv.0].size)
                        .sum::<f64>();
                if occ <= storage {
                    break;
                }
                // Least recently used among contents held idle at t.
                let victim = intervals
                    .iter()
                    .enumerate()
                    .filter(|(_, iv)| iv.1 <= t && t <= iv.2 && !uses[&iv.0].contains(&t))
                    .filter(|(_, iv)| {
                        let next = uses[&iv.0].iter().copied().find(|&u| u > t).expect("interval ends at a use");
                        self.source_of(next - tr).is_some_and(|p| p <= self.origin_end(iv.0))
                    })
                    .map(|(n, iv)| {
                        let last = uses[&iv.0].iter().copied().filter(|&u| u < t).max().unwrap_or(0);
                        (last, iv.0, n)
                    })
                    .min();
                let Some((last, k, n)) = victim else {
                    out.feasible = false;
                    break;
                };
                let next = uses[&k].iter().copied().find(|&u| u > t).expect("interval ends at a use");
                let end = intervals[n].2;
                intervals[n].2 = last;
                intervals.push((k, next, end));
            }
            if !out.feasible {
                break;
            }
        }
        intervals.sort_unstable();
        out.replication = intervals.iter().map(|iv| inst.contents[iv.0].copy_cost).sum();
        out.financial = out.slots.len() as f64 * self.weights[j];
        out.intervals = intervals;
        out
    }

    fn eval_request(&self, i: usize) -> RequestEval {
        let inst = self.inst;
        let mut out = RequestEval { feasible: true, ..RequestEval::default() };
        let mut pairs = BTreeSet::new();
        let mut client = BTreeMap::new();
        for (&o, &(j, t)) in &self.loc[i] {
            let d = inst.demand(i, o);
            if t < o {
                out.feasible = false;
            }
            pairs.insert((j, t));
            *client.entry(t).or_insert(0.0) += d;
            out.backlog += d * (self.prefix[i][t.saturating_sub(1)] - self.prefix[i][o - 1]).max(0.0);
        }
        let cap = inst.client_bandwidth * (1.0 + TOL) + TOL;
        if client.values().any(|&v| v > cap) {
            out.feasible = false;
        }
        out.attend = inst.requests[i].attend_cost * pairs.len() as f64;
        out
    }

    /// The state as a model solution: origins hold their contents from the
    /// start on, other replicas follow the intervals, each interval opened by
    /// a copy from the origin.
    pub fn solution(&self) -> FchpSolution {
        let inst = self.inst;
        let tf = inst.periods;
        let mut by_key: BTreeMap<(usize, usize, usize), Tuple> = BTreeMap::new();
        for (key, tuple) in &self.tuples {
            by_key.insert((key.content, key.server, key.period), tuple.clone());
        }
        let mut sol = FchpSolution {
            assignments: by_key
                .into_iter()
                .map(|((content, server, period), served)| Assignment { content, server, period, served })
                .collect(),
            ..FchpSolution::default()
        };
        for (k, c) in inst.contents.iter().enumerate() {
            for t in c.start..=self.origin_end(k) {
                sol.replicas.insert((k, c.origin, t));
            }
        }
        for (j, e) in self.srv.iter().enumerate() {
            for &(k, a, b) in &e.intervals {
                for t in a..=b {
                    sol.replicas.insert((k, j, t));
                }
                let from = inst.contents[k].origin;
                sol.replications.insert(Replication { content: k, from, to: j, period: a - inst.replication_delay });
            }
            for &slot in &e.slots {
                sol.hires.insert((j, slot));
            }
        }
        for (i, l) in self.loc.iter().enumerate() {
            let start = inst.request_start(i);
            let mut due = 0.0;
            let mut done = 0.0;
            for t in start..=tf {
                due += inst.demand(i, t);
                done += l.iter().filter(|(_, &(_, u))| u == t).map(|(&o, _)| inst.demand(i, o)).sum::<f64>();
                let b = due - done;
                if b > 1e-12 {
                    sol.backlog.insert((i, t), b);
                }
            }
        }
        sol
    }
}
