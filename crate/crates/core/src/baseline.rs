//! Threshold autoscaling behind a load balancer.
//!
//! A homogeneous fleet of one machine type, each machine holding every
//! content. Offered bytes are spread evenly over the machines that are up.
//! After each period the fleet grows by one machine when utilization is
//! strictly above the threshold, and shrinks by one when it is below half of
//! it, at most once per cooldown. Every machine is billed for each billing
//! slot it is alive in, the balancer once per slot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid autoscaling config: {0}")]
    Invalid(String),
}

/// A machine type with its price per billing slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmType {
    pub name: String,
    pub storage: f64,
    pub bandwidth: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsPolicyConfig {
    pub scale_out_threshold: f64,
    /// Periods between two scaling actions.
    pub cooldown: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Balancer price per billing slot; `None` means one machine price.
    pub lb_cost: Option<f64>,
}

impl Default for AsPolicyConfig {
    fn default() -> Self {
        Self { scale_out_threshold: 0.7, cooldown: 1, min_instances: 1, max_instances: 20, lb_cost: None }
    }
}

impl AsPolicyConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let t = self.scale_out_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(BaselineError::Invalid(format!("threshold {t} must lie in (0, 1)")));
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return Err(BaselineError::Invalid("need 1 <= min_instances <= max_instances".into()));
        }
        if self.lb_cost.is_some_and(|c| !(c >= 0.0)) {
            return Err(BaselineError::Invalid("lb_cost must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instance {
    pub launched: usize,
    /// First period the machine serves.
    pub ready: usize,
    last_billed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub vm: VmType,
    pub cfg: AsPolicyConfig,
    pub provisioning_delay: usize,
    pub billing_granularity: usize,
    pub instances: Vec<Instance>,
    /// Periods stepped so far.
    pub period: usize,
    last_action: Option<usize>,
    lb_billed: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub attended: f64,
    pub backlogged: f64,
    pub cost: f64,
    pub utilization: f64,
}

impl FleetState {
    /// A fleet of `initial` machines, all up from the first period.
    pub fn new(
        vm: VmType,
        cfg: AsPolicyConfig,
        initial: usize,
        provisioning_delay: usize,
        billing_granularity: usize,
    ) -> Result<Self, BaselineError> {
        cfg.validate()?;
        if !(vm.bandwidth > 0.0 && vm.price >= 0.0) {
            return Err(BaselineError::Invalid("machine bandwidth must be positive, price nonnegative".into()));
        }
        if billing_granularity == 0 {
            return Err(BaselineError::Invalid("billing granularity must be positive".into()));
        }
        let initial = initial.clamp(cfg.min_instances, cfg.max_instances);
        let instances = vec![Instance { launched: 1, ready: 1, last_billed: 0 }; initial];
        Ok(Self {
            vm,
            cfg,
            provisioning_delay,
            billing_granularity,
            instances,
            period: 0,
            last_action: None,
            lb_billed: 0,
            cost: 0.0,
        })
    }

    pub fn lb_cost(&self) -> f64 {
        self.cfg.lb_cost.unwrap_or(self.vm.price)
    }

    /// Machines serving in period `t`.
    pub fn ready_at(&self, t: usize) -> usize {
        self.instances.iter().filter(|i| i.ready <= t).count()
    }

    /// Serves `offered` bytes in the next period, bills it, then scales.
    pub fn step(&mut self, offered: f64) -> StepOutcome {
        self.period += 1;
        let t = self.period;
        let slot = t.div_ceil(self.billing_granularity);
        let mut cost = 0.0;
        for inst in &mut self.instances {
            if inst.last_billed < slot {
                inst.last_billed = slot;
                cost += self.vm.price;
            }
        }
        if self.lb_billed < slot {
            self.lb_billed = slot;
            cost += self.lb_cost();
        }
        self.cost += cost;

        let capacity = self.ready_at(t) as f64 * self.vm.bandwidth;
        let attended = offered.min(capacity).max(0.0);
        let utilization = if capacity > 0.0 {
            offered / capacity
        } else if offered > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };

        let cooled = self.last_action.is_none_or(|a| t - a >= self.cfg.cooldown);
        let thr = self.cfg.scale_out_threshold;
        if cooled && utilization > thr && self.instances.len() < self.cfg.max_instances {
            let ready = t + 1 + self.provisioning_delay;
            self.instances.push(Instance { launched: t + 1, ready, last_billed: 0 });
            self.last_action = Some(t);
        } else if cooled && utilization < thr / 2.0 && self.instances.len() > self.cfg.min_instances {
            // The newest machine goes first.
            self.instances.pop();
            self.last_action = Some(t);
        }
        StepOutcome { attended, backlogged: offered - attended, cost, utilization }
    }
}
