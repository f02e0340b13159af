//! Resource-planning model for flash-crowd handling.
//!
//! An instance has servers (owned, or hirable at a price per billing slot),
//! contents with a size, a start period and an origin server, and requests
//! whose per-period demand must be attended, possibly late at a backlog
//! penalty. Periods are numbered `1..=periods`; billing slots `1..=slots`.
//!
//! A solution assigns demand chunks `(request, demand period)` to a server and
//! a serving period, lists the replicas held and the copies made, the hired
//! `(server, slot)` pairs and the backlog of every request.

mod builder;
mod evaluate;
mod feasibility;
mod io;
mod lp;
mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builder::{build_instance_from_trace, BuildConfig, BuiltInstance};
pub use evaluate::evaluate;
pub use feasibility::{check_feasibility, Family, Violation};
pub use io::{instance_from_toml, instance_to_toml, load_instance, save_instance, solution_csv, solution_summary};
pub use lp::{export_lp, parse_lp, solution_values, LpConstraint, LpError, LpModel, LpOp, DEFAULT_LP_CAP};
pub use oracle::{brute_force_solve, OracleConfig};

/// Absolute tolerance used when comparing byte amounts.
pub const EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: usize },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("search space {size} exceeds the cap {cap}")]
    TooLarge { size: f64, cap: f64 },
    #[error("instance has no feasible solution")]
    Infeasible,
    #[error("instance file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerKind {
    Owned,
    Hirable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Server {
    pub kind: ServerKind,
    pub storage: f64,
    pub bandwidth: f64,
    /// Price per billing slot; zero for owned servers.
    #[serde(default)]
    pub cost: f64,
}

impl Server {
    pub fn owned(storage: f64, bandwidth: f64) -> Self {
        Self { kind: ServerKind::Owned, storage, bandwidth, cost: 0.0 }
    }

    pub fn hirable(storage: f64, bandwidth: f64, cost: f64) -> Self {
        Self { kind: ServerKind::Hirable, storage, bandwidth, cost }
    }

    pub fn is_hirable(&self) -> bool {
        self.kind == ServerKind::Hirable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Content {
    pub size: f64,
    /// First period in which the content exists (on its origin only).
    pub start: usize,
    pub origin: usize,
    pub copy_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub content: usize,
    pub attend_cost: f64,
    /// Demand per period, index `t - 1`.
    pub demand: Vec<f64>,
    /// Backlog penalty per unit and period, index `t - 1`.
    pub penalty: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Replica and copy constraints exactly as formulated.
    #[default]
    Literal,
    /// Copies come from a holder, replicas persist or are created by a copy,
    /// and no backlog exists before the content start.
    Corrected,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Mode::Literal),
            "corrected" => Ok(Mode::Corrected),
            other => Err(format!("unknown mode {other:?}, expected literal or corrected")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FchpInstance {
    pub periods: usize,
    pub client_bandwidth: f64,
    pub replication_delay: usize,
    pub provisioning_delay: usize,
    pub billing_granularity: usize,
    pub servers: Vec<Server>,
    pub contents: Vec<Content>,
    pub requests: Vec<Request>,
}

impl FchpInstance {
    pub fn empty(periods: usize) -> Self {
        Self {
            periods,
            client_bandwidth: 1.0,
            replication_delay: 0,
            provisioning_delay: 0,
            billing_granularity: 1,
            servers: Vec::new(),
            contents: Vec::new(),
            requests: Vec::new(),
        }
    }

    pub fn demand(&self, i: usize, t: usize) -> f64 {
        self.requests[i].demand.get(t.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    pub fn penalty(&self, i: usize, t: usize) -> f64 {
        self.requests[i].penalty.get(t.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    pub fn request_size(&self, i: usize) -> f64 {
        self.contents[self.requests[i].content].size
    }

    pub fn request_start(&self, i: usize) -> usize {
        self.contents[self.requests[i].content].start
    }

    /// First period of the backlog balance of request `i`. Literal balances
    /// from the content start, leaving the backlog just before it free;
    /// Corrected balances over the whole horizon.
    pub fn balance_start(&self, i: usize, mode: Mode) -> usize {
        match mode {
            Mode::Literal => self.request_start(i),
            Mode::Corrected => 1,
        }
    }

    /// Period in which the source of a copy started at `t` must hold the
    /// content under Corrected: `t`, or `t - 1` when copies arrive in the
    /// same period, so that two servers cannot create a replica from each
    /// other. `None` when that period precedes the horizon.
    pub fn source_period(&self, t: usize) -> Option<usize> {
        if self.replication_delay == 0 {
            t.checked_sub(1).filter(|&p| p >= 1)
        } else {
            Some(t)
        }
    }

    pub fn billing_slots(&self) -> usize {
        self.periods.div_ceil(self.billing_granularity.max(1))
    }

    /// Billing slot that must be hired to serve from a hirable server at `t`:
    /// `ceil((t - tp) / g)` clamped to `[1, slots]`.
    pub fn slot_of(&self, t: usize) -> usize {
        let g = self.billing_granularity.max(1) as i64;
        let raw = t as i64 - self.provisioning_delay as i64;
        let slot = if raw <= 0 { 0 } else { (raw + g - 1) / g };
        slot.clamp(1, self.billing_slots().max(1) as i64) as usize
    }

    /// Normalizer of the financial term, with backlog bounded by the largest
    /// requested content size.
    pub fn big_m(&self) -> f64 {
        let max_size =
            self.requests.iter().map(|r| self.contents.get(r.content).map_or(0.0, |c| c.size)).fold(0.0, f64::max);
        let mut m = 0.0f64;
        for r in &self.requests {
            m = m.max(r.attend_cost);
            for &p in &r.penalty {
                m = m.max(p * max_size);
            }
        }
        for c in &self.contents {
            m = m.max(c.copy_cost);
        }
        for s in &self.servers {
            if s.is_hirable() {
                m = m.max(s.cost);
            }
        }
        m
    }

    /// Financial term weight of server `j` for one slot.
    pub fn financial_weight(&self, j: usize) -> f64 {
        let m = self.big_m();
        if m > 0.0 {
            self.servers[j].cost / m
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidInstance(m));
        if self.billing_granularity == 0 {
            return bad("billing_granularity must be positive".into());
        }
        if !(self.client_bandwidth > 0.0) {
            return bad("client_bandwidth must be positive".into());
        }
        for (j, s) in self.servers.iter().enumerate() {
            if !(s.storage > 0.0 && s.bandwidth > 0.0) {
                return bad(format!("server {j}: storage and bandwidth must be positive"));
            }
            let ok = match s.kind {
                ServerKind::Owned => s.cost == 0.0,
                ServerKind::Hirable => s.cost > 0.0,
            };
            if !ok {
                return bad(format!("server {j}: cost must be zero when owned and positive when hirable"));
            }
        }
        for (k, c) in self.contents.iter().enumerate() {
            if !(c.size > 0.0) || c.copy_cost < 0.0 {
                return bad(format!("content {k}: size must be positive and copy_cost nonnegative"));
            }
            if c.origin >= self.servers.len() {
                return Err(ModelError::UnknownId { kind: "server", id: c.origin });
            }
            if c.start == 0 || c.start > self.periods {
                return bad(format!("content {k}: start {} outside 1..={}", c.start, self.periods));
            }
        }
        for (i, r) in self.requests.iter().enumerate() {
            let Some(c) = self.contents.get(r.content) else {
                return Err(ModelError::UnknownId { kind: "content", id: r.content });
            };
            if r.demand.len() != self.periods || r.penalty.len() != self.periods {
                return bad(format!("request {i}: demand and penalty need {} entries", self.periods));
            }
            if r.attend_cost < 0.0 || r.demand.iter().chain(&r.penalty).any(|v| !(*v >= 0.0)) {
                return bad(format!("request {i}: costs and demand must be nonnegative"));
            }
            if r.demand[..c.start - 1].iter().any(|&d| d > 0.0) {
                return bad(format!("request {i}: demand before the content start"));
            }
            let total: f64 = r.demand.iter().sum();
            if (total - c.size).abs() > EPS * c.size.max(1.0) {
                return bad(format!("request {i}: total demand {total} differs from content size {}", c.size));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AssignmentKey {
    pub content: usize,
    pub server: usize,
    pub period: usize,
}

/// Content `content` on `server` attends, in `period`, the listed demand
/// periods of each request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub content: usize,
    pub server: usize,
    pub period: usize,
    pub served: BTreeMap<usize, BTreeSet<usize>>,
}

impl Assignment {
    pub fn key(&self) -> AssignmentKey {
        AssignmentKey { content: self.content, server: self.server, period: self.period }
    }
}

/// Copy of `content` from server `from` to server `to` started in `period`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Replication {
    pub content: usize,
    pub from: usize,
    pub to: usize,
    pub period: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FchpSolution {
    pub assignments: Vec<Assignment>,
    pub replications: BTreeSet<Replication>,
    /// Hired `(server, billing slot)` pairs.
    pub hires: BTreeSet<(usize, usize)>,
    /// Backlog per `(request, period)`; absent entries are zero.
    pub backlog: BTreeMap<(usize, usize), f64>,
    /// Replicas held as `(content, server, period)`.
    pub replicas: BTreeSet<(usize, usize, usize)>,
}

impl FchpSolution {
    /// Bytes attended per `(request, server, period)`.
    pub fn attended(&self, inst: &FchpInstance) -> BTreeMap<(usize, usize, usize), f64> {
        let mut out = BTreeMap::new();
        for a in &self.assignments {
            for (&i, chunks) in &a.served {
                if i >= inst.requests.len() {
                    continue;
                }
                let bytes: f64 = chunks.iter().map(|&o| inst.demand(i, o)).sum();
                *out.entry((i, a.server, a.period)).or_insert(0.0) += bytes;
            }
        }
        out
    }

    /// `(request, server, period)` triples with an attendance.
    pub fn attendance(&self) -> BTreeSet<(usize, usize, usize)> {
        self.assignments.iter().flat_map(|a| a.served.keys().map(move |&i| (i, a.server, a.period))).collect()
    }

    pub fn sort(&mut self) {
        self.assignments.sort_by_key(|a| a.key());
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostBreakdown {
    pub attend: f64,
    pub backlog: f64,
    pub replication: f64,
    pub financial_normalized: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(attend: f64, backlog: f64, replication: f64, financial_normalized: f64) -> Self {
        Self {
            attend,
            backlog,
            replication,
            financial_normalized,
            total: attend + backlog + replication + financial_normalized,
        }
    }
}

impl std::fmt::Display for CostBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "total {:.6} (attend {:.6}, backlog {:.6}, replication {:.6}, financial {:.6})",
            self.total, self.attend, self.backlog, self.replication, self.financial_normalized
        )
    }
}

/// Instance O1: one owned server whose bandwidth cannot carry both requests
/// in the peak period, one hirable server, two requests over three periods.
pub fn fixture_o1() -> FchpInstance {
    FchpInstance {
        periods: 3,
        client_bandwidth: 2.0,
        replication_delay: 0,
        provisioning_delay: 0,
        billing_granularity: 1,
        servers: vec![Server::owned(4.0, 2.0), Server::hirable(4.0, 2.0, 6.0)],
        contents: vec![Content { size: 2.0, start: 1, origin: 0, copy_cost: 1.0 }],
        requests: vec![
            Request { content: 0, attend_cost: 1.0, demand: vec![0.0, 2.0, 0.0], penalty: vec![1.5, 1.5, 1.5] },
            Request { content: 0, attend_cost: 1.0, demand: vec![0.0, 2.0, 0.0], penalty: vec![1.5, 1.5, 1.5] },
        ],
    }
}
