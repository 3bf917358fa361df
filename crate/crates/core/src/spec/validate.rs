use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Channel, Role, SystemSpec};

/// One broken invariant, with enough location data to point at the offending entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DuplicateStage { name: String },
    DuplicateEndpoint { name: String },
    UnknownEndpoint { stage: String, endpoint: String },
    UnknownStage { link: usize, stage: String },
    DuplicateLink { link: usize, from: String, to: String },
    CyclicGraph { stages: Vec<String> },
    ChannelEndpointMismatch { link: usize, from: String, to: String, channel: Channel },
    InvalidWorkers { stage: String, detail: String },
    InvalidCores { endpoint: String },
    InvalidAddress { endpoint: String, address: String },
    MissingRole { endpoint: String, role: Role },
    EmptyName { location: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateStage { name } => write!(f, "stage `{name}` declared more than once"),
            Violation::DuplicateEndpoint { name } => write!(f, "endpoint `{name}` declared more than once"),
            Violation::UnknownEndpoint { stage, endpoint } => {
                write!(f, "stage `{stage}` references undeclared endpoint `{endpoint}`")
            }
            Violation::UnknownStage { link, stage } => {
                write!(f, "links[{link}] references undeclared stage `{stage}`")
            }
            Violation::DuplicateLink { link, from, to } => {
                write!(f, "links[{link}] repeats the link {from} -> {to}")
            }
            Violation::CyclicGraph { stages } => write!(f, "links form a cycle through {}", stages.join(", ")),
            Violation::ChannelEndpointMismatch { link, from, to, channel } => write!(
                f,
                "links[{link}] uses a {channel} channel between `{from}` and `{to}` on different endpoints"
            ),
            Violation::InvalidWorkers { stage, detail } => write!(f, "stage `{stage}`: {detail}"),
            Violation::InvalidCores { endpoint } => write!(f, "endpoint `{endpoint}` must have at least one core"),
            Violation::InvalidAddress { endpoint, address } => {
                write!(f, "endpoint `{endpoint}` has malformed address `{address}`")
            }
            Violation::MissingRole { endpoint, role } => {
                write!(f, "endpoint `{endpoint}` lacks the {role:?} role it needs")
            }
            Violation::EmptyName { location } => write!(f, "{location} has an empty name"),
        }
    }
}

pub(crate) fn address_is_well_formed(address: &str) -> bool {
    let Some((host, port)) = address.rsplit_once(':') else {
        return false;
    };
    let host = host.trim_start_matches('[').trim_end_matches(']');
    !host.is_empty()
        && host.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | ':' | '_'))
        && port.parse::<u16>().is_ok_and(|p| p != 0)
}

/// Checks every structural invariant of a system. An empty result means the spec is valid.
pub fn validate(spec: &SystemSpec) -> Vec<Violation> {
    let mut out = Vec::new();

    if spec.name.is_empty() {
        out.push(Violation::EmptyName { location: "system".into() });
    }

    let mut endpoints = BTreeMap::new();
    for (i, e) in spec.endpoints.iter().enumerate() {
        if e.name.is_empty() {
            out.push(Violation::EmptyName { location: format!("endpoints[{i}]") });
        }
        if endpoints.insert(e.name.as_str(), e).is_some() {
            out.push(Violation::DuplicateEndpoint { name: e.name.clone() });
        }
        if e.cores == 0 {
            out.push(Violation::InvalidCores { endpoint: e.name.clone() });
        }
        if !address_is_well_formed(&e.address) {
            out.push(Violation::InvalidAddress { endpoint: e.name.clone(), address: e.address.clone() });
        }
    }

    let mut stages = BTreeMap::new();
    for (i, s) in spec.stages.iter().enumerate() {
        if s.name.is_empty() {
            out.push(Violation::EmptyName { location: format!("stages[{i}]") });
        }
        if stages.insert(s.name.as_str(), s).is_some() {
            out.push(Violation::DuplicateStage { name: s.name.clone() });
        }
        match endpoints.get(s.endpoint.as_str()) {
            None => out.push(Violation::UnknownEndpoint { stage: s.name.clone(), endpoint: s.endpoint.clone() }),
            Some(ep) => {
                if !ep.roles.contains(&Role::Compute) {
                    out.push(Violation::MissingRole { endpoint: ep.name.clone(), role: Role::Compute });
                }
                let max = s.workers_max.resolve(ep.cores);
                if s.workers_initial == 0 {
                    out.push(Violation::InvalidWorkers {
                        stage: s.name.clone(),
                        detail: "workers_initial must be at least 1".into(),
                    });
                } else if s.workers_initial > max {
                    out.push(Violation::InvalidWorkers {
                        stage: s.name.clone(),
                        detail: format!("workers_initial {} exceeds workers_max {max}", s.workers_initial),
                    });
                }
                if max == 0 {
                    out.push(Violation::InvalidWorkers {
                        stage: s.name.clone(),
                        detail: "workers_max must be at least 1".into(),
                    });
                }
            }
        }
    }

    let mut seen_links = BTreeSet::new();
    let mut store_endpoints = BTreeSet::new();
    for (i, link) in spec.links.iter().enumerate() {
        let from = stages.get(link.from_stage.as_str());
        let to = stages.get(link.to_stage.as_str());
        if from.is_none() {
            out.push(Violation::UnknownStage { link: i, stage: link.from_stage.clone() });
        }
        if to.is_none() {
            out.push(Violation::UnknownStage { link: i, stage: link.to_stage.clone() });
        }
        if !seen_links.insert((link.from_stage.as_str(), link.to_stage.as_str())) {
            out.push(Violation::DuplicateLink { link: i, from: link.from_stage.clone(), to: link.to_stage.clone() });
        }
        if let (Some(a), Some(b)) = (from, to) {
            if link.channel != Channel::Network && a.endpoint != b.endpoint {
                out.push(Violation::ChannelEndpointMismatch {
                    link: i,
                    from: link.from_stage.clone(),
                    to: link.to_stage.clone(),
                    channel: link.channel,
                });
            }
            if link.channel == Channel::Network {
                store_endpoints.insert(a.endpoint.as_str());
                store_endpoints.insert(b.endpoint.as_str());
            }
        }
    }
    for name in store_endpoints {
        if let Some(ep) = endpoints.get(name) {
            if !ep.roles.contains(&Role::LocalStore) {
                out.push(Violation::MissingRole { endpoint: name.to_string(), role: Role::LocalStore });
            }
        }
    }

    let cyclic = stages_on_cycles(spec);
    if !cyclic.is_empty() {
        out.push(Violation::CyclicGraph { stages: cyclic });
    }
    out
}

/// Stages left over after Kahn's algorithm, in declaration order.
fn stages_on_cycles(spec: &SystemSpec) -> Vec<String> {
    let names: Vec<&str> = spec.stages.iter().map(|s| s.name.as_str()).collect();
    let index = |n: &str| names.iter().position(|m| *m == n);
    let mut indegree = vec![0usize; names.len()];
    let mut edges = vec![Vec::new(); names.len()];
    for link in &spec.links {
        if let (Some(a), Some(b)) = (index(&link.from_stage), index(&link.to_stage)) {
            edges[a].push(b);
            indegree[b] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..names.len()).filter(|&i| indegree[i] == 0).collect();
    let mut removed = vec![false; names.len()];
    while let Some(i) = ready.pop() {
        removed[i] = true;
        for &j in &edges[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(j);
            }
        }
    }
    names
        .iter()
        .zip(removed)
        .filter(|(_, r)| !r)
        .map(|(n, _)| n.to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_spec;

    fn two_endpoint_spec(links: &str) -> SystemSpec {
        parse_spec(&format!(
            r#"
[system]
name = "t"

[[endpoints]]
name = "alpha"
address = "127.0.0.1:7101"
cores = 2

[[endpoints]]
name = "gamma"
address = "127.0.0.1:7102"
cores = 2

[[stages]]
name = "A"
kind = "function"
entry = "util.copy"
endpoint = "alpha"

[[stages]]
name = "B"
kind = "function"
entry = "util.copy"
endpoint = "gamma"
{links}"#
        ))
        .unwrap()
    }

    #[test]
    fn two_cycle_is_cyclic() {
        let spec = two_endpoint_spec(
            "[[links]]\nfrom_stage = \"A\"\nto_stage = \"B\"\n[[links]]\nfrom_stage = \"B\"\nto_stage = \"A\"\n",
        );
        assert_eq!(validate(&spec), vec![Violation::CyclicGraph { stages: vec!["A".into(), "B".into()] }]);
    }

    #[test]
    fn undeclared_endpoint() {
        let mut spec = two_endpoint_spec("");
        spec.endpoints.retain(|e| e.name != "gamma");
        assert_eq!(
            validate(&spec),
            vec![Violation::UnknownEndpoint { stage: "B".into(), endpoint: "gamma".into() }]
        );
    }

    #[test]
    fn memory_channel_across_endpoints() {
        let spec = two_endpoint_spec("[[links]]\nfrom_stage = \"A\"\nto_stage = \"B\"\nchannel = \"memory\"\n");
        assert_eq!(
            validate(&spec),
            vec![Violation::ChannelEndpointMismatch {
                link: 0,
                from: "A".into(),
                to: "B".into(),
                channel: Channel::Memory
            }]
        );
    }

    #[test]
    fn worker_bounds_and_addresses() {
        let mut spec = two_endpoint_spec("");
        spec.stages[0].workers_initial = 3;
        spec.stages[1].workers_initial = 0;
        spec.endpoints[1].address = "nowhere".into();
        let v = validate(&spec);
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(matches!(v[0], Violation::InvalidAddress { .. }));
        assert!(matches!(v[1], Violation::InvalidWorkers { .. }));
        assert!(matches!(v[2], Violation::InvalidWorkers { .. }));
    }

    #[test]
    fn network_link_needs_store_role() {
        let mut spec = two_endpoint_spec("[[links]]\nfrom_stage = \"A\"\nto_stage = \"B\"\n");
        assert!(validate(&spec).is_empty());
        spec.endpoints[1].roles.remove(&Role::LocalStore);
        assert_eq!(
            validate(&spec),
            vec![Violation::MissingRole { endpoint: "gamma".into(), role: Role::LocalStore }]
        );
    }

    #[test]
    fn addresses() {
        assert!(address_is_well_formed("127.0.0.1:80"));
        assert!(address_is_well_formed("gamma.local:7101"));
        assert!(address_is_well_formed("[::1]:7101"));
        assert!(!address_is_well_formed("gamma"));
        assert!(!address_is_well_formed(":80"));
        assert!(!address_is_well_formed("host:0"));
        assert!(!address_is_well_formed("host:99999"));
    }
}
