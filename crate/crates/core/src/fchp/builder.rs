//! Instance construction from a binned trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Content, FchpInstance, ModelError, Request, Server};
use crate::trace::{BinnedTrace, ContentId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// Trace bins aggregated into one period.
    pub bins_per_period: usize,
    /// Contents kept per period, by access count.
    pub top_n: usize,
    pub client_bandwidth: f64,
    pub content_size: f64,
    /// Per-content size overrides.
    pub sizes: BTreeMap<u64, f64>,
    /// Attend cost per access; a request's cost is this times its count.
    pub attend_cost: f64,
    /// Backlog penalty per access and period.
    pub backlog_penalty: f64,
    pub copy_cost: f64,
    pub replication_delay: usize,
    pub provisioning_delay: usize,
    pub billing_granularity: usize,
    pub servers: Vec<Server>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            bins_per_period: 1,
            top_n: 10,
            client_bandwidth: 1.0,
            content_size: 1.0,
            sizes: BTreeMap::new(),
            attend_cost: 1.0,
            backlog_penalty: 1.0,
            copy_cost: 1.0,
            replication_delay: 0,
            provisioning_delay: 0,
            billing_granularity: 1,
            servers: vec![Server::owned(100.0, 100.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltInstance {
    pub instance: FchpInstance,
    /// Trace id of each content index.
    pub contents: Vec<ContentId>,
    /// `(content id, arrival period, access count)` of each request.
    pub requests: Vec<(ContentId, usize, u64)>,
}

/// Builds one request per kept `(content, period)` aggregate. A request
/// arriving at period `t` demands `min(BX, remaining)` in successive periods
/// until the content size is exhausted; the horizon grows to fit the last
/// request. Origins are the owned servers in round robin.
pub fn build_instance_from_trace(trace: &BinnedTrace, cfg: &BuildConfig) -> Result<BuiltInstance, ModelError> {
    let bad = |m: &str| Err(ModelError::InvalidInstance(m.into()));
    if cfg.bins_per_period == 0 || cfg.top_n == 0 {
        return bad("bins_per_period and top_n must be positive");
    }
    if !(cfg.client_bandwidth > 0.0) {
        return bad("client_bandwidth must be positive");
    }
    let owned: Vec<usize> = (0..cfg.servers.len()).filter(|&j| !cfg.servers[j].is_hirable()).collect();
    if owned.is_empty() {
        return bad("at least one owned server is required");
    }
    let periods = trace.horizon().div_ceil(cfg.bins_per_period);
    let mut per_period: Vec<BTreeMap<ContentId, u64>> = vec![BTreeMap::new(); periods];
    for (b, bin) in trace.bins.iter().enumerate() {
        for (&c, &n) in bin {
            if n > 0 {
                *per_period[b / cfg.bins_per_period].entry(c).or_default() += n;
            }
        }
    }
    let mut kept: Vec<(ContentId, usize, u64)> = Vec::new();
    for (p, counts) in per_period.iter().enumerate() {
        let mut ranked: Vec<(ContentId, u64)> = counts.iter().map(|(&c, &n)| (c, n)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(cfg.top_n);
        ranked.sort();
        kept.extend(ranked.into_iter().map(|(c, n)| (c, p + 1, n)));
    }
    let ids: Vec<ContentId> = kept.iter().map(|r| r.0).collect::<BTreeSet<_>>().into_iter().collect();
    let index: BTreeMap<ContentId, usize> = ids.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let size_of = |c: ContentId| cfg.sizes.get(&c.0).copied().unwrap_or(cfg.content_size);
    if ids.iter().any(|&c| !(size_of(c) > 0.0)) {
        return bad("content sizes must be positive");
    }

    let bx = cfg.client_bandwidth;
    let mut tf = periods.max(1);
    let mut spreads = Vec::with_capacity(kept.len());
    for &(c, t, _) in &kept {
        let mut left = size_of(c);
        let mut d = Vec::new();
        while left > 1e-12 {
            let a = left.min(bx);
            d.push(a);
            left -= a;
        }
        tf = tf.max(t + d.len() - 1);
        spreads.push(d);
    }

    let contents = ids
        .iter()
        .enumerate()
        .map(|(k, &c)| Content { size: size_of(c), start: 1, origin: owned[k % owned.len()], copy_cost: cfg.copy_cost })
        .collect();
    let requests = kept
        .iter()
        .zip(spreads)
        .map(|(&(c, t, n), d)| {
            let mut demand = vec![0.0; tf];
            for (o, a) in d.into_iter().enumerate() {
                demand[t - 1 + o] = a;
            }
            Request {
                content: index[&c],
                attend_cost: cfg.attend_cost * n as f64,
                demand,
                penalty: vec![cfg.backlog_penalty * n as f64; tf],
            }
        })
        .collect();
    let instance = FchpInstance {
        periods: tf,
        client_bandwidth: bx,
        replication_delay: cfg.replication_delay,
        provisioning_delay: cfg.provisioning_delay,
        billing_granularity: cfg.billing_granularity,
        servers: cfg.servers.clone(),
        contents,
        requests,
    };
    instance.validate()?;
    Ok(BuiltInstance { instance, contents: ids, requests: kept })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_content_single_bin() {
        let mut tr = BinnedTrace::new(60, 1);
        tr.add(0, ContentId(7), 3);
        let cfg = BuildConfig { client_bandwidth: 0.4, ..BuildConfig::default() };
        let b = build_instance_from_trace(&tr, &cfg).unwrap();
        assert_eq!(b.instance.requests.len(), 1);
        assert_eq!(b.instance.periods, 3);
        let d = &b.instance.requests[0].demand;
        assert!((d[0] - 0.4).abs() < 1e-12 && (d[1] - 0.4).abs() < 1e-12 && (d[2] - 0.2).abs() < 1e-12);
        assert_eq!(b.instance.requests[0].attend_cost, 3.0);
        assert_eq!(b.contents, vec![ContentId(7)]);
    }

    #[test]
    fn top_n_larger_than_catalog_keeps_all() {
        let mut tr = BinnedTrace::new(1, 2);
        for c in 0..4 {
            tr.add(0, ContentId(c), c + 1);
            tr.add(1, ContentId(c), 1);
        }
        let b = build_instance_from_trace(&tr, &BuildConfig { top_n: 50, ..BuildConfig::default() }).unwrap();
        assert_eq!(b.instance.contents.len(), 4);
        assert_eq!(b.instance.requests.len(), 8);
    }

    #[test]
    fn top_n_filter_and_aggregation() {
        let mut tr = BinnedTrace::new(1, 4);
        tr.add(0, ContentId(1), 5);
        tr.add(1, ContentId(1), 5);
        tr.add(0, ContentId(2), 2);
        tr.add(1, ContentId(3), 4);
        tr.add(2, ContentId(2), 9);
        let cfg = BuildConfig { bins_per_period: 2, top_n: 1, ..BuildConfig::default() };
        let b = build_instance_from_trace(&tr, &cfg).unwrap();
        assert_eq!(b.requests, vec![(ContentId(1), 1, 10), (ContentId(2), 2, 9)]);
        assert_eq!(b.instance.contents.len(), 2);
    }

    #[test]
    fn origins_round_robin_over_owned() {
        let mut tr = BinnedTrace::new(1, 1);
        for c in 0..3 {
            tr.add(0, ContentId(c), 1);
        }
        let servers = vec![Server::owned(10.0, 10.0), Server::hirable(5.0, 5.0, 1.0), Server::owned(10.0, 10.0)];
        let b = build_instance_from_trace(&tr, &BuildConfig { servers, ..BuildConfig::default() }).unwrap();
        let origins: Vec<usize> = b.instance.contents.iter().map(|c| c.origin).collect();
        assert_eq!(origins, vec![0, 2, 0]);
    }
}
