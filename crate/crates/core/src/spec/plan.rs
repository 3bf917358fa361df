use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{validate, Channel, StageSpec, SystemSpec, Violation};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("cannot plan an invalid spec ({} violations)", .0.len())]
    InvalidSpec(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub system: String,
    pub storage_manager: Option<String>,
    /// Topological order of all stages, ties broken by declaration order.
    pub order: Vec<String>,
    /// One group per endpoint that hosts at least one stage, in declaration order.
    pub groups: Vec<EndpointGroup>,
    pub bindings: Vec<ChannelBinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointGroup {
    pub endpoint: String,
    pub address: String,
    pub cores: u32,
    pub storage_capacity: u64,
    pub stages: Vec<PlannedStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedStage {
    pub spec: StageSpec,
    /// `workers_max` with `auto` resolved against the endpoint core count.
    pub workers_max: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelBinding {
    pub from_stage: String,
    pub to_stage: String,
    pub from_endpoint: String,
    pub to_endpoint: String,
    pub channel: Channel,
}

impl DeploymentPlan {
    pub fn stage(&self, name: &str) -> Option<(&EndpointGroup, &PlannedStage)> {
        self.groups
            .iter()
            .find_map(|g| g.stages.iter().find(|s| s.spec.name == name).map(|s| (g, s)))
    }

    pub fn group(&self, endpoint: &str) -> Option<&EndpointGroup> {
        self.groups.iter().find(|g| g.endpoint == endpoint)
    }

    pub fn downstream(&self, stage: &str) -> impl Iterator<Item = &ChannelBinding> {
        let stage = stage.to_string();
        self.bindings.iter().filter(move |b| b.from_stage == stage)
    }

    pub fn sources(&self) -> Vec<&str> {
        self.order
            .iter()
            .filter(|s| !self.bindings.iter().any(|b| &b.to_stage == *s))
            .map(String::as_str)
            .collect()
    }

    pub fn sinks(&self) -> Vec<&str> {
        self.order
            .iter()
            .filter(|s| !self.bindings.iter().any(|b| &b.from_stage == *s))
            .map(String::as_str)
            .collect()
    }
}

/// Computes a deterministic deployment plan for a valid spec.
pub fn plan(spec: &SystemSpec) -> Result<DeploymentPlan, PlanError> {
    let violations = validate(spec);
    if !violations.is_empty() {
        return Err(PlanError::InvalidSpec(violations));
    }

    let n = spec.stages.len();
    let index = |name: &str| spec.stages.iter().position(|s| s.name == name).expect("validated");
    let mut indegree = vec![0usize; n];
    let mut edges = vec![Vec::new(); n];
    for link in &spec.links {
        let (a, b) = (index(&link.from_stage), index(&link.to_stage));
        edges[a].push(b);
        indegree[b] += 1;
    }
    // Kahn's algorithm, always taking the earliest-declared ready stage.
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &j in &edges[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.insert(j);
            }
        }
    }

    let groups = spec
        .endpoints
        .iter()
        .filter_map(|ep| {
            let stages: Vec<PlannedStage> = order
                .iter()
                .map(|&i| &spec.stages[i])
                .filter(|s| s.endpoint == ep.name)
                .map(|s| PlannedStage { spec: s.clone(), workers_max: s.workers_max.resolve(ep.cores) })
                .collect();
            (!stages.is_empty()).then(|| EndpointGroup {
                endpoint: ep.name.clone(),
                address: ep.address.clone(),
                cores: ep.cores,
                storage_capacity: ep.storage_capacity,
                stages,
            })
        })
        .collect();

    let bindings = spec
        .links
        .iter()
        .map(|l| ChannelBinding {
            from_stage: l.from_stage.clone(),
            to_stage: l.to_stage.clone(),
            from_endpoint: spec.stages[index(&l.from_stage)].endpoint.clone(),
            to_endpoint: spec.stages[index(&l.to_stage)].endpoint.clone(),
            channel: l.channel,
        })
        .collect();

    Ok(DeploymentPlan {
        system: spec.name.clone(),
        storage_manager: spec.storage_manager.clone(),
        order: order.into_iter().map(|i| spec.stages[i].name.clone()).collect(),
        groups,
        bindings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_spec;

    fn one_endpoint(stages: &[&str], links: &[(&str, &str)]) -> SystemSpec {
        let mut doc = String::from(
            "[system]\nname = \"p\"\n[[endpoints]]\nname = \"e\"\naddress = \"127.0.0.1:7000\"\ncores = 4\n",
        );
        for s in stages {
            doc += &format!("[[stages]]\nname = \"{s}\"\nkind = \"function\"\nentry = \"util.copy\"\nendpoint = \"e\"\n");
        }
        for (a, b) in links {
            doc += &format!("[[links]]\nfrom_stage = \"{a}\"\nto_stage = \"{b}\"\n");
        }
        parse_spec(&doc).unwrap()
    }

    #[test]
    fn chain_on_one_endpoint() {
        let p = plan(&one_endpoint(&["A", "B", "C"], &[("A", "B"), ("B", "C")])).unwrap();
        assert_eq!(p.order, ["A", "B", "C"]);
        assert_eq!(p.groups.len(), 1);
        assert_eq!(p.groups[0].stages[0].workers_max, 4);
    }

    #[test]
    fn diamond_uses_declaration_order() {
        // D declared first to make sure the order comes from the graph, not the list.
        let spec = one_endpoint(&["D", "A", "B", "C"], &[("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]);
        assert_eq!(plan(&spec).unwrap().order, ["A", "B", "C", "D"]);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = one_endpoint(&["A", "B"], &[("A", "B"), ("B", "A")]);
        assert!(matches!(plan(&spec), Err(PlanError::InvalidSpec(_))));
    }
}
