//! Instance files and solution reports.
//!
//! Instance file layout (TOML):
//!
//! ```toml
//! format = "fchp-instance"
//! version = 1
//!
//! [params]
//! periods = 3
//! client_bandwidth = 2.0
//! replication_delay = 0
//! provisioning_delay = 0
//! billing_granularity = 1
//!
//! [[servers]]
//! kind = "owned"        # or "hirable"
//! storage = 4.0
//! bandwidth = 2.0
//! cost = 0.0            # price per billing slot, hirable only
//!
//! [[contents]]
//! size = 2.0
//! start = 1
//! origin = 0
//! copy_cost = 1.0
//!
//! [[requests]]
//! content = 0
//! attend_cost = 1.0
//! demand = [0.0, 2.0, 0.0]
//! penalty = [1.5, 1.5, 1.5]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Content, CostBreakdown, FchpInstance, FchpSolution, ModelError, Request, Server};

const FORMAT: &str = "fchp-instance";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Params {
    periods: usize,
    client_bandwidth: f64,
    #[serde(default)]
    replication_delay: usize,
    #[serde(default)]
    provisioning_delay: usize,
    #[serde(default = "one")]
    billing_granularity: usize,
}

fn one() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    params: Params,
    #[serde(default)]
    servers: Vec<Server>,
    #[serde(default)]
    contents: Vec<Content>,
    #[serde(default)]
    requests: Vec<Request>,
}

/// Parses and validates an instance document.
pub fn instance_from_toml(text: &str) -> Result<FchpInstance, ModelError> {
    let doc: Document = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    if doc.format != FORMAT {
        return Err(ModelError::Parse(format!("format {:?}, expected {FORMAT:?}", doc.format)));
    }
    if doc.version != VERSION {
        return Err(ModelError::Parse(format!("unsupported version {}", doc.version)));
    }
    let inst = FchpInstance {
        periods: doc.params.periods,
        client_bandwidth: doc.params.client_bandwidth,
        replication_delay: doc.params.replication_delay,
        provisioning_delay: doc.params.provisioning_delay,
        billing_granularity: doc.params.billing_granularity,
        servers: doc.servers,
        contents: doc.contents,
        requests: doc.requests,
    };
    inst.validate()?;
    Ok(inst)
}

pub fn instance_to_toml(inst: &FchpInstance) -> String {
    let doc = Document {
        format: FORMAT.into(),
        version: VERSION,
        params: Params {
            periods: inst.periods,
            client_bandwidth: inst.client_bandwidth,
            replication_delay: inst.replication_delay,
            provisioning_delay: inst.provisioning_delay,
            billing_granularity: inst.billing_granularity,
        },
        servers: inst.servers.clone(),
        contents: inst.contents.clone(),
        requests: inst.requests.clone(),
    };
    toml::to_string(&doc).expect("instance documents always serialize")
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<FchpInstance, ModelError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| ModelError::Parse(format!("{}: {e}", path.as_ref().display())))?;
    instance_from_toml(&text)
}

pub fn save_instance(inst: &FchpInstance, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path.as_ref(), instance_to_toml(inst))
        .map_err(|e| ModelError::Parse(format!("{}: {e}", path.as_ref().display())))
}

/// One row per solution element:
/// `record,content,server,target,period,request,value`. `assign` rows carry the
/// attended bytes and list the demand periods in `target` separated by `;`.
pub fn solution_csv(inst: &FchpInstance, sol: &FchpSolution) -> String {
    let mut s = String::from("record,content,server,target,period,request,value\n");
    let mut assigns = sol.assignments.clone();
    assigns.sort_by_key(|a| a.key());
    for a in &assigns {
        for (&i, os) in &a.served {
            let bytes: f64 = os.iter().map(|&o| inst.demand(i, o)).sum();
            let chunks: Vec<String> = os.iter().map(|o| o.to_string()).collect();
            let _ = writeln!(s, "assign,{},{},{},{},{},{}", a.content, a.server, chunks.join(";"), a.period, i, bytes);
        }
    }
    for r in &sol.replications {
        let _ = writeln!(s, "copy,{},{},{},{},,1", r.content, r.from, r.to, r.period);
    }
    for &(j, slot) in &sol.hires {
        let _ = writeln!(s, "hire,,{j},,{slot},,{}", inst.servers[j].cost);
    }
    for (&(i, t), &v) in &sol.backlog {
        let _ = writeln!(s, "backlog,{},,,{t},{i},{v}", inst.requests[i].content);
    }
    for &(k, j, t) in &sol.replicas {
        let _ = writeln!(s, "replica,{k},{j},,{t},,1");
    }
    s
}

pub fn solution_summary(inst: &FchpInstance, sol: &FchpSolution, cost: &CostBreakdown) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "instance: {} servers, {} contents, {} requests, {} periods",
        inst.servers.len(),
        inst.contents.len(),
        inst.requests.len(),
        inst.periods
    );
    let _ = writeln!(s, "cost: {cost}");
    let spend: f64 = sol.hires.iter().map(|&(j, _)| inst.servers[j].cost).sum();
    let _ = writeln!(s, "hires: {} server-slots, spend {spend}", sol.hires.len());
    let _ = writeln!(s, "copies: {}", sol.replications.len());
    let _ = writeln!(s, "backlog: {}", sol.backlog.values().sum::<f64>() + 0.0);
    s
}
