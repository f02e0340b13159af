//! Discrete-time replay of a trace under two policies.
//!
//! Every trace bin is one period. Each access starts a client download of
//! the whole content at the client bandwidth, so a bin with `n` accesses of a
//! content adds `n` downloads. A download's nominal schedule is
//! `min(BX, remaining)` per period from its arrival; bytes behind that
//! schedule are backlog.
//!
//! The pipeline runs the detector on each bin as it arrives. While an event
//! is open it plans the bin's new downloads of the top contents with the
//! heuristic, launches the hired machines and books the planned transfers.
//! Owned servers hold every content and are planned as one pool. Machines
//! already running enter the plan as free capacity net of their bookings.
//! Any other download is booked greedily by the frontend. Booked transfers
//! stay on their server; a machine is released once nothing is booked on it
//! and its billing slot is over.
//!
//! The baseline spreads all offered bytes over a homogeneous autoscaled fleet
//! behind a load balancer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{AsPolicyConfig, FleetState, VmType};
use crate::detector::{
    detection_point, merge_events, DetectError, EventFlagger, FlagConfig, FlagTransition, ValueEncoding,
};
use crate::fchp::{Content, FchpInstance, ModelError, Request, Server, EPS};
use crate::generator::{GeneratorConfig, GeneratorError};
use crate::ils::{self, IlsParams};
use crate::trace::{read_csv_trace, BinnedTrace, ContentId, TraceError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error("reports come from different runs: {0}")]
    ProvenanceMismatch(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Where the trace comes from: a binned CSV file or a generator config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSource {
    pub file: Option<PathBuf>,
    #[serde(default = "one")]
    pub bin_width: u64,
    pub generator: Option<GeneratorConfig>,
}

fn one() -> u64 {
    1
}

/// A machine type, with how many are owned and how many may be hired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerType {
    pub name: String,
    pub storage: f64,
    pub bandwidth: f64,
    /// Price per billing slot; owned machines are billed too.
    pub price: f64,
    #[serde(default)]
    pub owned: usize,
    #[serde(default)]
    pub max_hired: usize,
}

impl ServerType {
    fn vm(&self) -> VmType {
        VmType { name: self.name.clone(), storage: self.storage, bandwidth: self.bandwidth, price: self.price }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentSize {
    pub content: u64,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSettings {
    /// When off, the planner runs every replan interval for the whole trace.
    pub enabled: bool,
    pub window: usize,
    pub flag: FlagConfig,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self { enabled: true, window: 1, flag: FlagConfig::default() }
    }
}

/// Time costs handed to the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanningCosts {
    pub attend_cost: f64,
    pub backlog_penalty: f64,
    pub copy_cost: f64,
}

impl Default for PlanningCosts {
    fn default() -> Self {
        Self { attend_cost: 1.0, backlog_penalty: 100.0, copy_cost: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoscalingSettings {
    /// Machine type of the fleet; defaults to the type of the owned machines.
    pub vm_type: Option<String>,
    pub scale_out_threshold: f64,
    pub cooldown: usize,
    /// Defaults to the number of owned machines.
    pub min_instances: Option<usize>,
    pub max_instances: usize,
    pub lb_cost: Option<f64>,
}

impl Default for AutoscalingSettings {
    fn default() -> Self {
        let p = AsPolicyConfig::default();
        Self {
            vm_type: None,
            scale_out_threshold: p.scale_out_threshold,
            cooldown: p.cooldown,
            min_instances: None,
            max_instances: p.max_instances,
            lb_cost: p.lb_cost,
        }
    }
}

impl AutoscalingSettings {
    /// The policy for a fleet starting with `initial` machines.
    pub fn policy(&self, initial: usize) -> AsPolicyConfig {
        let min_instances = self.min_instances.unwrap_or(initial).max(1);
        AsPolicyConfig {
            scale_out_threshold: self.scale_out_threshold,
            cooldown: self.cooldown,
            min_instances,
            max_instances: self.max_instances.max(min_instances),
            lb_cost: self.lb_cost,
        }
    }
}

/// Horizon of a plan when neither the config nor the trace gives one.
pub const DEFAULT_REPLAN_HORIZON: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub trace: TraceSource,
    pub servers: Vec<ServerType>,
    #[serde(default)]
    pub sizes: Vec<ContentSize>,
    #[serde(default = "unit")]
    pub default_size: f64,
    #[serde(default = "unit")]
    pub client_bandwidth: f64,
    #[serde(default)]
    pub replication_delay: usize,
    #[serde(default)]
    pub provisioning_delay: usize,
    #[serde(default = "one_usize")]
    pub billing_granularity: usize,
    #[serde(default = "one_usize")]
    pub replan_interval: usize,
    /// Periods each plan looks ahead; by default twice the median ramp
    /// length of a generated trace, else [`DEFAULT_REPLAN_HORIZON`].
    #[serde(default)]
    pub replan_horizon: Option<usize>,
    #[serde(default = "ten")]
    pub top_n: usize,
    #[serde(default)]
    pub detector: DetectorSettings,
    #[serde(default)]
    pub ils: IlsParams,
    #[serde(default)]
    pub planning: PlanningCosts,
    #[serde(default)]
    pub autoscaling: AutoscalingSettings,
}

fn unit() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn ten() -> usize {
    10
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::ScenarioInvalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a scenario file; a relative trace path is taken from the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let (Some(f), Some(dir)) = (&cfg.trace.file, path.parent()) {
            if f.is_relative() {
                cfg.trace.file = Some(dir.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ScenarioInvalid(m));
        if self.trace.file.is_some() == self.trace.generator.is_some() {
            return bad("exactly one of trace.file and trace.generator is required".into());
        }
        if self.trace.bin_width == 0 {
            return bad("trace.bin_width must be positive".into());
        }
        if self.replan_interval == 0 || self.replan_horizon == Some(0) || self.top_n == 0 {
            return bad("replan_interval, replan_horizon and top_n must be positive".into());
        }
        if self.billing_granularity == 0 {
            return bad("billing_granularity must be positive".into());
        }
        if !(self.client_bandwidth > 0.0 && self.default_size > 0.0) || self.sizes.iter().any(|s| !(s.size > 0.0)) {
            return bad("client bandwidth and content sizes must be positive".into());
        }
        let mut names = BTreeSet::new();
        for s in &self.servers {
            if !names.insert(s.name.as_str()) {
                return bad(format!("server type {} listed twice", s.name));
            }
            if !(s.storage > 0.0 && s.bandwidth > 0.0) {
                return bad(format!("server type {}: storage and bandwidth must be positive", s.name));
            }
            if !(s.price > 0.0) && s.max_hired > 0 {
                return bad(format!("server type {}: hirable types need a positive price", s.name));
            }
            if !(s.price >= 0.0) {
                return bad(format!("server type {}: price must be nonnegative", s.name));
            }
        }
        if self.servers.iter().all(|s| s.owned == 0) {
            return bad("at least one owned server is required".into());
        }
        self.ils.validate().map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        self.detector.flag.validate().map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        if self.detector.window == 0 {
            return bad("detector.window must be positive".into());
        }
        let initial = self.servers.iter().map(|s| s.owned).sum();
        self.autoscaling.policy(initial).validate().map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        self.baseline_type()?;
        Ok(())
    }

    fn baseline_type(&self) -> Result<&ServerType, SimError> {
        let name = match &self.autoscaling.vm_type {
            Some(n) => n.clone(),
            None => {
                let owned: BTreeSet<&str> =
                    self.servers.iter().filter(|s| s.owned > 0).map(|s| s.name.as_str()).collect();
                if owned.len() != 1 {
                    return Err(SimError::ScenarioInvalid(
                        "owned machines of several types; set autoscaling.vm_type".into(),
                    ));
                }
                owned.into_iter().next().expect("one type").to_string()
            }
        };
        self.servers
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| SimError::ScenarioInvalid(format!("unknown autoscaling.vm_type {name}")))
    }

    pub fn load_trace(&self) -> Result<BinnedTrace, SimError> {
        match (&self.trace.file, &self.trace.generator) {
            (Some(f), None) => Ok(read_csv_trace(f, self.trace.bin_width)?),
            (None, Some(g)) => Ok(crate::generator::generate(g)?),
            _ => Err(SimError::ScenarioInvalid("exactly one trace source is required".into())),
        }
    }

    pub fn size_of(&self, c: ContentId) -> f64 {
        self.sizes.iter().find(|s| s.content == c.0).map_or(self.default_size, |s| s.size)
    }

    /// Plan horizon: the configured one, else twice the median ramp length
    /// of the generator profiles, else [`DEFAULT_REPLAN_HORIZON`].
    pub fn plan_horizon(&self) -> usize {
        if let Some(h) = self.replan_horizon {
            return h;
        }
        let mut ramps: Vec<usize> = self
            .trace
            .generator
            .iter()
            .flat_map(|g| g.contents.iter().flat_map(|c| c.phases.iter().map(|p| p.t1 - p.t0)))
            .collect();
        if ramps.is_empty() {
            return DEFAULT_REPLAN_HORIZON;
        }
        ramps.sort_unstable();
        2 * ramps[ramps.len() / 2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Pipeline,
    Baseline,
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Policy::Pipeline => "pipeline",
            Policy::Baseline => "baseline",
        })
    }
}

/// What a report was computed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub trace: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    pub period: usize,
    /// Bytes due under the nominal schedules.
    pub demand: f64,
    pub attended: f64,
    /// Outstanding bytes behind schedule at the end of the period.
    pub backlog: f64,
    /// Machines alive per type.
    pub fleet: BTreeMap<String, usize>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineRecord {
    pub kind: String,
    pub launched: usize,
    pub released: Option<usize>,
    /// First period the machine transferred bytes.
    pub first_served: Option<usize>,
    pub contents: BTreeSet<ContentId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub policy: Policy,
    pub provenance: Provenance,
    pub periods: Vec<PeriodRecord>,
    /// Detected events as `(start bin, end bin)`.
    pub events: Vec<(usize, usize)>,
    /// Machines started beyond the initial fleet.
    pub machines: Vec<MachineRecord>,
    pub plans: usize,
    pub plan_failures: usize,
    /// Detector compute time per bin; not part of the CSV output.
    pub detector_times: Vec<Duration>,
}

impl RunReport {
    pub fn financial_cost(&self) -> f64 {
        self.periods.iter().map(|p| p.cost).sum()
    }

    pub fn peak_backlog(&self) -> f64 {
        self.periods.iter().map(|p| p.backlog).fold(0.0, f64::max)
    }

    /// Byte-periods spent behind schedule.
    pub fn total_backlog(&self) -> f64 {
        self.periods.iter().map(|p| p.backlog).sum()
    }

    pub fn attended(&self) -> f64 {
        self.periods.iter().map(|p| p.attended).sum()
    }

    pub fn peak_fleet(&self) -> usize {
        self.periods.iter().map(|p| p.fleet.values().sum::<usize>()).max().unwrap_or(0)
    }

    pub fn hired_by_type(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for m in &self.machines {
            *out.entry(m.kind.clone()).or_default() += 1;
        }
        out
    }

    pub fn max_detector_time(&self) -> Duration {
        self.detector_times.iter().copied().max().unwrap_or_default()
    }

    pub fn periods_csv(&self) -> String {
        let mut s = String::from("period,demand,attended,backlog,fleet,cost\n");
        for p in &self.periods {
            let fleet: usize = p.fleet.values().sum();
            let _ = writeln!(s, "{},{},{},{},{},{}", p.period, p.demand, p.attended, p.backlog, fleet, p.cost);
        }
        s
    }

    pub fn fleet_csv(&self) -> String {
        let mut s = String::from("period,type,count\n");
        for p in &self.periods {
            for (kind, n) in &p.fleet {
                let _ = writeln!(s, "{},{kind},{n}", p.period);
            }
        }
        s
    }

    pub fn events_csv(&self) -> String {
        let mut s = String::from("start,end\n");
        for (a, b) in &self.events {
            let _ = writeln!(s, "{a},{b}");
        }
        s
    }

    pub fn machines_csv(&self) -> String {
        let mut s = String::from("type,launched,first_served,released,contents\n");
        for m in &self.machines {
            let released = m.released.map(|r| r.to_string()).unwrap_or_default();
            let served = m.first_served.map(|r| r.to_string()).unwrap_or_default();
            let contents: Vec<String> = m.contents.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "{},{},{served},{released},{}", m.kind, m.launched, contents.join(";"));
        }
        s
    }

    /// Writes the CSV files into `dir` with the policy name as prefix.
    pub fn write_csvs(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, SimError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for (name, body) in [
            ("periods", self.periods_csv()),
            ("fleet", self.fleet_csv()),
            ("events", self.events_csv()),
            ("machines", self.machines_csv()),
        ] {
            let path = dir.join(format!("{}_{name}.csv", self.policy));
            std::fs::write(&path, body)?;
            out.push(path);
        }
        Ok(out)
    }

    pub fn summary(&self) -> String {
        let hired: Vec<String> = self.hired_by_type().iter().map(|(k, n)| format!("{n} {k}")).collect();
        let mut s = String::new();
        let _ = writeln!(s, "policy: {}", self.policy);
        let _ = writeln!(s, "periods: {}", self.periods.len());
        let _ = writeln!(s, "financial cost: {:.4}", self.financial_cost());
        let _ = writeln!(s, "peak fleet: {}", self.peak_fleet());
        let _ = writeln!(s, "hired: {}", if hired.is_empty() { "none".into() } else { hired.join(", ") });
        let _ = writeln!(s, "attended bytes: {:.4}", self.attended());
        let _ = writeln!(s, "peak backlog: {:.4}", self.peak_backlog());
        let _ = writeln!(s, "events: {:?}", self.events);
        if self.policy == Policy::Pipeline {
            let _ = writeln!(s, "plans: {} ({} failed)", self.plans, self.plan_failures);
        }
        s
    }
}

/// One metric of a comparison; event timings are absent for runs without events.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub metric: &'static str,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

impl ComparisonRow {
    pub fn delta(&self) -> Option<f64> {
        Some(self.b? - self.a?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: Policy,
    pub b: Policy,
    pub rows: Vec<ComparisonRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl Comparison {
    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("metric,a,b,delta\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.metric, cell(r.a), cell(r.b), cell(r.delta()));
        }
        s
    }

    pub fn text(&self) -> String {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut s = format!("{:<18} {:>14} {:>14} {:>14}\n", "metric", self.a, self.b, "delta");
        for r in &self.rows {
            let _ = writeln!(s, "{:<18} {:>14} {:>14} {:>14}", r.metric, show(r.a), show(r.b), show(r.delta()));
        }
        s
    }
}

/// Side-by-side metrics of two runs on the same trace and seed.
pub fn compare(a: &RunReport, b: &RunReport) -> Result<Comparison, SimError> {
    if a.provenance != b.provenance {
        return Err(SimError::ProvenanceMismatch(format!(
            "trace {} seed {} vs trace {} seed {}",
            a.provenance.trace, a.provenance.seed, b.provenance.trace, b.provenance.seed
        )));
    }
    let row = |metric, f: &dyn Fn(&RunReport) -> Option<f64>| ComparisonRow { metric, a: f(a), b: f(b) };
    let rows = vec![
        row("financial_cost", &|r| Some(r.financial_cost())),
        row("peak_fleet", &|r| Some(r.peak_fleet() as f64)),
        row("hired", &|r| Some(r.machines.len() as f64)),
        row("attended", &|r| Some(r.attended())),
        row("peak_backlog", &|r| Some(r.peak_backlog())),
        row("total_backlog", &|r| Some(r.total_backlog())),
        row("events", &|r| Some(r.events.len() as f64)),
        row("first_event_start", &|r| r.events.first().map(|e| e.0 as f64)),
        row("last_event_end", &|r| r.events.last().map(|e| e.1 as f64)),
    ];
    Ok(Comparison { a: a.policy, b: b.policy, rows })
}

/// Downloads of one content that arrived in the same period.
#[derive(Debug, Clone)]
struct Group {
    content: usize,
    clients: usize,
    /// Bytes not yet transferred.
    remaining: f64,
    /// Bytes of the nominal schedule not yet due.
    unscheduled: f64,
    /// Booked transfers per period.
    booked: BTreeMap<usize, Vec<(Slot, f64)>>,
}

impl Group {
    fn rate(&self, bx: f64) -> f64 {
        self.clients as f64 * bx
    }

    fn booked_bytes(&self) -> f64 {
        self.booked.values().flatten().map(|b| b.1).sum()
    }

    fn due(&mut self, bx: f64) -> f64 {
        let d = self.unscheduled.min(self.rate(bx));
        self.unscheduled -= d;
        d
    }

    fn backlog(&self) -> f64 {
        (self.remaining - self.unscheduled).max(0.0)
    }
}

/// A serving place: the pool of owned servers or one hired machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Pool,
    Vm(usize),
}

#[derive(Debug, Clone)]
struct Vm {
    kind: usize,
    launched: usize,
    ready: usize,
    released: Option<usize>,
    /// First period each held content is available.
    holds: BTreeMap<usize, usize>,
    last_billed: usize,
    first_served: Option<usize>,
}

impl Vm {
    fn alive_at(&self, t: usize) -> bool {
        self.launched <= t && self.released.is_none_or(|r| t <= r)
    }

    fn serves(&self, content: usize, t: usize) -> bool {
        self.alive_at(t) && self.ready <= t && self.holds.get(&content).is_some_and(|&a| a <= t)
    }
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    trace: &'a BinnedTrace,
    contents: Vec<ContentId>,
    sizes: Vec<f64>,
    groups: Vec<Group>,
    vms: Vec<Vm>,
    pool_bandwidth: f64,
    booked: BTreeMap<(Slot, usize), f64>,
}

impl World<'_> {
    fn capacity(&self, slot: Slot) -> f64 {
        match slot {
            Slot::Pool => self.pool_bandwidth,
            Slot::Vm(v) => self.cfg.servers[self.vms[v].kind].bandwidth,
        }
    }

    fn spare(&self, slot: Slot, t: usize) -> f64 {
        (self.capacity(slot) - self.booked.get(&(slot, t)).copied().unwrap_or(0.0)).max(0.0)
    }

    fn max_booked(&self, slot: Slot, from: usize, to: usize) -> f64 {
        self.booked.range((slot, from)..=(slot, to)).map(|(_, &b)| b).fold(0.0, f64::max)
    }

    fn book(&mut self, g: usize, slot: Slot, t: usize, bytes: f64) {
        if bytes <= 0.0 {
            return;
        }
        *self.booked.entry((slot, t)).or_insert(0.0) += bytes;
        self.groups[g].booked.entry(t).or_default().push((slot, bytes));
    }

    /// Books `bytes` of group `g` from period `from` on, pool first, then any
    /// machine holding the content, within the group's client bandwidth.
    fn book_greedy(&mut self, g: usize, from: usize, mut bytes: f64) {
        let bx = self.cfg.client_bandwidth;
        let k = self.groups[g].content;
        let mut t = from;
        while bytes > EPS {
            let used: f64 = self.groups[g].booked.get(&t).map_or(0.0, |v| v.iter().map(|b| b.1).sum());
            let mut room = (self.groups[g].rate(bx) - used).max(0.0);
            let mut slots = vec![Slot::Pool];
            slots.extend((0..self.vms.len()).filter(|&v| self.vms[v].serves(k, t)).map(Slot::Vm));
            for slot in slots {
                let take = room.min(bytes).min(self.spare(slot, t));
                if take > EPS {
                    self.book(g, slot, t, take);
                    room -= take;
                    bytes -= take;
                }
            }
            t += 1;
        }
    }

    /// Mean downloads of content `k` per period over the `span` periods up to `now`.
    fn recent_rate(&self, k: usize, now: usize, span: usize) -> f64 {
        let first = (now + 1).saturating_sub(span).max(1);
        let id = self.contents[k];
        let n: u64 = (first..=now).map(|t| self.trace.count(t - 1, id)).sum();
        n as f64 / (now + 1 - first) as f64
    }

    fn alive_vms(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.vms.len()).filter(move |&v| self.vms[v].alive_at(t))
    }

    fn fleet_at(&self, t: usize) -> BTreeMap<String, usize> {
        let mut fleet: BTreeMap<String, usize> = BTreeMap::new();
        for s in self.cfg.servers.iter().filter(|s| s.owned > 0) {
            *fleet.entry(s.name.clone()).or_default() += s.owned;
        }
        for v in self.alive_vms(t) {
            *fleet.entry(self.cfg.servers[self.vms[v].kind].name.clone()).or_default() += 1;
        }
        fleet
    }
}

/// A plan request: one download of `group`.
struct Planned {
    group: usize,
}

/// Standard deviations of headroom kept on the pool for the arrivals of
/// unplanned contents, taking their count as Poisson.
const COLD_HEADROOM_SD: f64 = 3.0;

/// Plans the downloads of `fresh` groups arriving at `now` and books them.
/// `hot` are the contents planned in this and later periods.
/// Returns `false` when the planner found no solution.
fn plan(
    world: &mut World<'_>,
    now: usize,
    fresh: &[usize],
    hot: &BTreeSet<usize>,
    seed: u64,
) -> Result<bool, SimError> {
    let cfg = world.cfg;
    let bx = cfg.client_bandwidth;
    // Plan period 1 precedes `now`, so copies can land by `now`.
    let to_sim = |t: usize| now + t - 2;
    let longest = fresh.iter().map(|&g| (world.sizes[world.groups[g].content] / bx).ceil() as usize).max().unwrap_or(1);
    let periods = 1 + cfg.plan_horizon().max(longest) + 1;
    let last = to_sim(periods);

    let mut contents: Vec<usize> =
        fresh.iter().map(|&g| world.groups[g].content).collect::<BTreeSet<_>>().into_iter().collect();
    contents.sort_unstable();
    let index: BTreeMap<usize, usize> = contents.iter().enumerate().map(|(n, &k)| (k, n)).collect();

    let mut servers = Vec::new();
    let mut slots = Vec::new();
    let pool_storage: f64 = contents.iter().map(|&k| world.sizes[k]).sum::<f64>() + 1.0;
    // Pool load over the plan: current bookings plus the downloads of
    // contents left to the frontend, with headroom for bursts.
    let cold: Vec<(f64, usize)> = (0..world.sizes.len())
        .filter(|k| !hot.contains(k))
        .map(|k| (world.recent_rate(k, now, cfg.plan_horizon()), (world.sizes[k] / bx).ceil() as usize))
        .collect();
    let peak = (now..=last)
        .map(|q| {
            let booked = world.booked.get(&(Slot::Pool, q)).copied().unwrap_or(0.0);
            let expected: f64 = cold.iter().map(|&(r, len)| r * (q - now).min(len) as f64).sum();
            booked + bx * (expected + COLD_HEADROOM_SD * expected.sqrt())
        })
        .fold(0.0, f64::max);
    let pool_free = (world.pool_bandwidth - peak).max(EPS);
    servers.push(Server::owned(pool_storage, pool_free));
    slots.push(None);
    let alive: Vec<usize> = world.alive_vms(now).collect();
    for &v in &alive {
        let vm = &world.vms[v];
        let ty = &cfg.servers[vm.kind];
        let held: f64 = vm.holds.keys().filter(|k| !index.contains_key(k)).map(|&k| world.sizes[k]).sum();
        let free = (ty.bandwidth - world.max_booked(Slot::Vm(v), now, last)).max(EPS);
        servers.push(Server::owned((ty.storage - held).max(EPS), free));
        slots.push(Some(Slot::Vm(v)));
    }
    let load = fresh.iter().map(|&g| world.groups[g].rate(bx)).sum::<f64>();
    let mut candidates = Vec::new();
    for (kind, ty) in cfg.servers.iter().enumerate().filter(|(_, t)| t.max_hired > 0) {
        let running = alive.iter().filter(|&&v| world.vms[v].kind == kind).count();
        let want = (load / ty.bandwidth).ceil() as usize + 1;
        for _ in 0..want.min(ty.max_hired.saturating_sub(running)) {
            servers.push(Server::hirable(ty.storage, ty.bandwidth, ty.price));
            slots.push(None);
            candidates.push((servers.len() - 1, kind));
        }
    }

    let mut requests = Vec::new();
    let mut planned = Vec::new();
    for &g in fresh {
        let grp = &world.groups[g];
        let size = world.sizes[grp.content];
        for _ in 0..grp.clients {
            let mut demand = vec![0.0; periods];
            let mut left = size;
            let mut t = 2;
            while left > EPS {
                let d = left.min(bx);
                demand[t - 1] = d;
                left -= d;
                t += 1;
            }
            requests.push(Request {
                content: index[&grp.content],
                attend_cost: cfg.planning.attend_cost,
                demand,
                penalty: vec![cfg.planning.backlog_penalty; periods],
            });
            planned.push(Planned { group: g });
        }
    }
    let inst = FchpInstance {
        periods,
        client_bandwidth: bx,
        replication_delay: cfg.replication_delay,
        provisioning_delay: cfg.provisioning_delay + 1,
        billing_granularity: cfg.billing_granularity,
        servers,
        contents: contents
            .iter()
            .map(|&k| Content { size: world.sizes[k], start: 1, origin: 0, copy_cost: cfg.planning.copy_cost })
            .collect(),
        requests,
    };
    let params = IlsParams { seed, ..cfg.ils };
    let sol = match ils::solve(&inst, &params) {
        Ok((sol, _, _)) => sol,
        Err(ModelError::Infeasible) => return Ok(false),
        Err(e) => return Err(e.into()),
    };

    for &(j, kind) in &candidates {
        let used: Vec<usize> = sol.assignments.iter().filter(|a| a.server == j).map(|a| a.period).collect();
        if used.is_empty() {
            continue;
        }
        world.vms.push(Vm {
            kind,
            launched: now,
            ready: now + cfg.provisioning_delay,
            released: None,
            holds: BTreeMap::new(),
            last_billed: 0,
            first_served: None,
        });
        slots[j] = Some(Slot::Vm(world.vms.len() - 1));
    }
    for &(k, j, t) in &sol.replicas {
        if let Some(Slot::Vm(v)) = slots[j] {
            let at = to_sim(t.max(2));
            let entry = world.vms[v].holds.entry(contents[k]).or_insert(at);
            *entry = (*entry).min(at);
        }
    }
    for a in &sol.assignments {
        let slot = if a.server == 0 { Slot::Pool } else { slots[a.server].expect("used server has a slot") };
        for (&i, os) in &a.served {
            let bytes: f64 = os.iter().map(|&o| inst.demand(i, o)).sum();
            world.book(planned[i].group, slot, to_sim(a.period), bytes);
        }
    }
    Ok(true)
}

fn catalog(cfg: &ScenarioConfig, trace: &BinnedTrace) -> Result<(Vec<ContentId>, Vec<f64>), SimError> {
    let contents: Vec<ContentId> = trace.content_catalog.iter().copied().collect();
    let sizes: Vec<f64> = contents.iter().map(|&c| cfg.size_of(c)).collect();
    let owned_storage = cfg.servers.iter().filter(|s| s.owned > 0).map(|s| s.storage).fold(f64::INFINITY, f64::min);
    let total: f64 = sizes.iter().sum();
    if total > owned_storage + EPS {
        return Err(SimError::Infeasible(format!(
            "the owned servers hold every content, {total} bytes, but the smallest stores {owned_storage}"
        )));
    }
    Ok((contents, sizes))
}

fn arrivals(trace: &BinnedTrace, contents: &[ContentId], bin: usize) -> Vec<(usize, usize)> {
    let Some(b) = trace.bins.get(bin) else { return Vec::new() };
    b.iter()
        .filter(|(_, &n)| n > 0)
        .map(|(c, &n)| (contents.binary_search(c).expect("catalog covers the trace"), n as usize))
        .collect()
}

/// Periods simulated after the last bin at most, so every download can end.
fn drain_limit(sizes: &[f64], bx: f64, horizon: usize) -> usize {
    let longest = sizes.iter().map(|s| (s / bx).ceil() as usize).max().unwrap_or(0);
    horizon + 4 * longest + 64
}

fn bill_owned(cfg: &ScenarioConfig) -> f64 {
    cfg.servers.iter().map(|s| s.owned as f64 * s.price).sum()
}

/// Detection, planning and booking over the trace of `cfg`.
pub fn run_pipeline(cfg: &ScenarioConfig) -> Result<RunReport, SimError> {
    cfg.validate()?;
    let trace = cfg.load_trace()?;
    let (contents, sizes) = catalog(cfg, &trace)?;
    let bx = cfg.client_bandwidth;
    let horizon = trace.horizon();
    let limit = drain_limit(&sizes, bx, horizon);
    let pool_bandwidth = cfg.servers.iter().map(|s| s.owned as f64 * s.bandwidth).sum();
    let mut world = World {
        cfg,
        trace: &trace,
        contents: contents.clone(),
        sizes,
        groups: Vec::new(),
        vms: Vec::new(),
        pool_bandwidth,
        booked: BTreeMap::new(),
    };
    let mut flagger = EventFlagger::new(cfg.detector.flag.clone());
    let mut events = Vec::new();
    let mut detector_times = Vec::new();
    let mut periods = Vec::new();
    let mut last_plan: Option<usize> = None;
    let (mut plans, mut plan_failures) = (0, 0);
    let g = cfg.billing_granularity;
    let w = cfg.detector.window;

    let mut t = 1;
    loop {
        let bin = t - 1;
        if bin >= horizon && world.groups.iter().all(|gr| gr.remaining <= EPS) {
            break;
        }
        if t > limit {
            return Err(SimError::Infeasible(format!("downloads still open after period {limit}")));
        }
        if cfg.detector.enabled && bin < horizon && bin >= w {
            let start = Instant::now();
            let point = detection_point(&trace, bin, w, ValueEncoding::Ordinal);
            detector_times.push(start.elapsed());
            if let Ok(p) = point {
                if let Some(FlagTransition::End { start, end }) = flagger.push(bin, p.c_xy) {
                    events.push((start, end));
                }
            }
        }

        let fresh: Vec<usize> = arrivals(&trace, &world.contents, bin)
            .into_iter()
            .map(|(content, clients)| {
                let total = clients as f64 * world.sizes[content];
                world.groups.push(Group {
                    content,
                    clients,
                    remaining: total,
                    unscheduled: total,
                    booked: BTreeMap::new(),
                });
                world.groups.len() - 1
            })
            .collect();
        let planning = !cfg.detector.enabled || flagger.in_event();
        let replan = planning && !fresh.is_empty() && last_plan.is_none_or(|p| t - p >= cfg.replan_interval);
        let (mut top, mut cold) = (Vec::new(), fresh);
        let mut hot = BTreeSet::new();
        if replan {
            let span = cfg.plan_horizon();
            let mut ranked: Vec<(f64, usize)> =
                (0..world.sizes.len()).map(|k| (world.recent_rate(k, t, span), k)).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            hot = ranked.iter().take(cfg.top_n).map(|r| r.1).collect();
            (top, cold) = cold.into_iter().partition(|&gi| hot.contains(&world.groups[gi].content));
        }
        // The frontend books the rest first, so the plan sees their load.
        for gi in cold {
            let bytes = world.groups[gi].remaining;
            world.book_greedy(gi, t, bytes);
        }
        if !top.is_empty() {
            let seed = cfg.seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            plans += 1;
            last_plan = Some(t);
            if !plan(&mut world, t, &top, &hot, seed)? {
                plan_failures += 1;
                for gi in top {
                    let bytes = world.groups[gi].remaining;
                    world.book_greedy(gi, t, bytes);
                }
            }
        }

        // Serve what is booked for this period.
        let mut demand = 0.0;
        let mut attended = 0.0;
        for gi in 0..world.groups.len() {
            if world.groups[gi].remaining <= EPS {
                continue;
            }
            demand += world.groups[gi].due(bx);
            let k = world.groups[gi].content;
            let due_now = world.groups[gi].booked.remove(&t).unwrap_or_default();
            let mut failed = 0.0;
            for (slot, bytes) in due_now {
                let ok = match slot {
                    Slot::Pool => true,
                    Slot::Vm(v) => world.vms[v].serves(k, t),
                };
                if let (true, Slot::Vm(v)) = (ok, slot) {
                    world.vms[v].first_served.get_or_insert(t);
                }
                if ok {
                    world.groups[gi].remaining -= bytes;
                    attended += bytes;
                } else {
                    failed += bytes;
                }
            }
            let unbooked = world.groups[gi].remaining - world.groups[gi].booked_bytes() - failed;
            let rebook = failed + unbooked.max(0.0);
            if rebook > EPS {
                world.book_greedy(gi, t + 1, rebook);
            }
        }
        for gi in 0..world.groups.len() {
            if world.groups[gi].remaining <= EPS && world.groups[gi].unscheduled > EPS {
                demand += world.groups[gi].due(bx);
            }
        }

        let slot = t.div_ceil(g);
        let mut cost = if (t - 1) % g == 0 { bill_owned(cfg) } else { 0.0 };
        for v in 0..world.vms.len() {
            let vm = &mut world.vms[v];
            if vm.alive_at(t) && vm.last_billed < slot {
                vm.last_billed = slot;
                cost += cfg.servers[vm.kind].price;
            }
        }
        let fleet = world.fleet_at(t);
        for v in 0..world.vms.len() {
            let busy = world.booked.range((Slot::Vm(v), t + 1)..=(Slot::Vm(v), usize::MAX)).any(|(_, &b)| b > EPS);
            let vm = &mut world.vms[v];
            if vm.alive_at(t) && vm.released.is_none() && !busy && t % g == 0 {
                vm.released = Some(t);
            }
        }
        let backlog = world.groups.iter().map(Group::backlog).sum();
        periods.push(PeriodRecord { period: t, demand, attended, backlog, fleet, cost });
        t += 1;
    }
    if let Some(e) = flagger.finish(horizon.saturating_sub(1)) {
        events.push(e);
    }
    let events = merge_events(&events, cfg.detector.flag.gap_merge);
    let machines = world
        .vms
        .iter()
        .map(|vm| MachineRecord {
            kind: cfg.servers[vm.kind].name.clone(),
            launched: vm.launched,
            released: vm.released,
            first_served: vm.first_served,
            contents: vm.holds.keys().map(|&k| world.contents[k]).collect(),
        })
        .collect();
    Ok(RunReport {
        policy: Policy::Pipeline,
        provenance: Provenance { trace: trace.fingerprint(), seed: cfg.seed },
        periods,
        events,
        machines,
        plans,
        plan_failures,
        detector_times,
    })
}

/// The autoscaled fleet over the trace of `cfg`.
pub fn run_baseline(cfg: &ScenarioConfig) -> Result<RunReport, SimError> {
    cfg.validate()?;
    let trace = cfg.load_trace()?;
    let (contents, sizes) = catalog(cfg, &trace)?;
    let bx = cfg.client_bandwidth;
    let horizon = trace.horizon();
    let limit = drain_limit(&sizes, bx, horizon);
    let ty = cfg.baseline_type()?;
    let initial: usize = cfg.servers.iter().map(|s| s.owned).sum();
    let policy = cfg.autoscaling.policy(initial);
    if sizes.iter().sum::<f64>() > ty.storage + EPS {
        return Err(SimError::Infeasible(format!("machine type {} cannot hold every content", ty.name)));
    }
    let mut fleet = FleetState::new(ty.vm(), policy, initial, cfg.provisioning_delay, cfg.billing_granularity)
        .map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
    let mut groups: Vec<Group> = Vec::new();
    let mut periods = Vec::new();
    let mut machines: Vec<MachineRecord> = Vec::new();
    let mut t = 1;
    loop {
        let bin = t - 1;
        if bin >= horizon && groups.iter().all(|gr| gr.remaining <= EPS) {
            break;
        }
        if t > limit {
            return Err(SimError::Infeasible(format!("downloads still open after period {limit}")));
        }
        for (content, clients) in arrivals(&trace, &contents, bin) {
            let total = clients as f64 * sizes[content];
            groups.push(Group { content, clients, remaining: total, unscheduled: total, booked: BTreeMap::new() });
        }
        let mut demand = 0.0;
        let mut offered = 0.0;
        for gr in groups.iter_mut().filter(|gr| gr.remaining > EPS || gr.unscheduled > EPS) {
            demand += gr.due(bx);
            offered += gr.remaining.min(gr.rate(bx));
        }
        let before = fleet.instances.len();
        let fleet_now = BTreeMap::from([(ty.name.clone(), before)]);
        let out = fleet.step(offered);
        // Oldest downloads first.
        let mut left = out.attended;
        for gr in groups.iter_mut().filter(|gr| gr.remaining > EPS) {
            let take = left.min(gr.remaining.min(gr.rate(bx)));
            gr.remaining -= take;
            left -= take;
        }
        if fleet.instances.len() > before {
            machines.push(MachineRecord {
                kind: ty.name.clone(),
                launched: t + 1,
                released: None,
                first_served: Some(t + 1 + cfg.provisioning_delay),
                contents: contents.iter().copied().collect(),
            });
        } else if fleet.instances.len() < before {
            if let Some(m) = machines.iter_mut().rev().find(|m| m.released.is_none()) {
                m.released = Some(t);
            }
        }
        let backlog = groups.iter().map(Group::backlog).sum();
        periods.push(PeriodRecord {
            period: t,
            demand,
            attended: out.attended,
            backlog,
            fleet: fleet_now,
            cost: out.cost,
        });
        t += 1;
    }
    Ok(RunReport {
        policy: Policy::Baseline,
        provenance: Provenance { trace: trace.fingerprint(), seed: cfg.seed },
        periods,
        events: Vec::new(),
        machines,
        plans: 0,
        plan_failures: 0,
        detector_times: Vec::new(),
    })
}
