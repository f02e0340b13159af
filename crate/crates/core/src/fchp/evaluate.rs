use super::{CostBreakdown, FchpInstance, FchpSolution, ModelError};

/// Objective value of `sol`, term by term. Feasibility is not checked.
pub fn evaluate(inst: &FchpInstance, sol: &FchpSolution) -> Result<CostBreakdown, ModelError> {
    let unknown = |kind, id| ModelError::UnknownId { kind, id };
    for a in &sol.assignments {
        if a.server >= inst.servers.len() {
            return Err(unknown("server", a.server));
        }
        if a.content >= inst.contents.len() {
            return Err(unknown("content", a.content));
        }
        if let Some(&i) = a.served.keys().find(|&&i| i >= inst.requests.len()) {
            return Err(unknown("request", i));
        }
    }
    let mut attend = 0.0;
    for (i, _, _) in sol.attendance() {
        attend += inst.requests[i].attend_cost;
    }
    let mut backlog = 0.0;
    for (&(i, t), &b) in &sol.backlog {
        if i >= inst.requests.len() {
            return Err(unknown("request", i));
        }
        backlog += inst.penalty(i, t) * b;
    }
    let mut replication = 0.0;
    for r in &sol.replications {
        let Some(c) = inst.contents.get(r.content) else {
            return Err(unknown("content", r.content));
        };
        if r.from >= inst.servers.len() || r.to >= inst.servers.len() {
            return Err(unknown("server", r.from.max(r.to)));
        }
        replication += c.copy_cost;
    }
    let mut financial = 0.0;
    for &(j, _) in &sol.hires {
        if j >= inst.servers.len() {
            return Err(unknown("server", j));
        }
        financial += inst.financial_weight(j);
    }
    Ok(CostBreakdown::new(attend, backlog, replication, financial))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fchp::{Assignment, Content, Request, Server};
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn empty_solution_costs_nothing() {
        let c = evaluate(&FchpInstance::empty(3), &FchpSolution::default()).unwrap();
        assert_eq!(c, CostBreakdown::default());
    }

    #[test]
    fn single_attendance_costs_its_attend_cost() {
        let inst = FchpInstance {
            servers: vec![Server::owned(5.0, 5.0)],
            contents: vec![Content { size: 1.0, start: 1, origin: 0, copy_cost: 2.0 }],
            requests: vec![Request { content: 0, attend_cost: 3.5, demand: vec![1.0], penalty: vec![1.0] }],
            ..FchpInstance::empty(1)
        };
        let sol = FchpSolution {
            assignments: vec![Assignment {
                content: 0,
                server: 0,
                period: 1,
                served: BTreeMap::from([(0, BTreeSet::from([1]))]),
            }],
            replicas: BTreeSet::from([(0, 0, 1)]),
            ..Default::default()
        };
        let c = evaluate(&inst, &sol).unwrap();
        assert_eq!(c.total, 3.5);
        assert_eq!(c.attend, 3.5);
    }

    #[test]
    fn unknown_ids_are_reported() {
        let sol = FchpSolution { hires: BTreeSet::from([(4, 1)]), ..Default::default() };
        assert_eq!(evaluate(&FchpInstance::empty(1), &sol), Err(ModelError::UnknownId { kind: "server", id: 4 }));
    }
}
