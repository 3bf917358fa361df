//! Declarative system specifications.
//!
//! A system is described by a TOML document with four top-level sections:
//! `system`, `endpoints`, `stages` and `links`. [`parse_spec`] turns the
//! document into a [`SystemSpec`] with defaults applied, [`validate`] reports
//! every broken invariant, and [`plan`] computes the deployment plan.

mod plan;
mod validate;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plan::{plan, ChannelBinding, DeploymentPlan, EndpointGroup, PlanError, PlannedStage};
pub use validate::{validate, Violation};

/// Local stores get this much room when the document does not say otherwise (1 TiB).
pub const DEFAULT_STORE_CAPACITY: u64 = 1 << 40;

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("missing field `{field}` in {location}")]
    MissingField { location: String, field: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    /// Address of the storage manager used by distributed deployments.
    pub storage_manager: Option<String>,
    pub endpoints: Vec<EndpointSpec>,
    pub stages: Vec<StageSpec>,
    pub links: Vec<Interconnection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub name: String,
    pub address: String,
    pub cores: u32,
    pub roles: BTreeSet<Role>,
    pub storage_capacity: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub kind: StageKind,
    pub entry: String,
    pub endpoint: String,
    pub workers_initial: u32,
    pub workers_max: WorkersMax,
    /// Stage-specific settings handed to the stage code untouched.
    pub params: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interconnection {
    pub from_stage: String,
    pub to_stage: String,
    pub channel: Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Compute,
    LocalStore,
    GlobalStore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Function,
    Subprocess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    File,
    Memory,
    Network,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::File => "file",
            Channel::Memory => "memory",
            Channel::Network => "network",
        })
    }
}

/// Upper bound on a stage's worker pool. `Auto` resolves to the endpoint core count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkersMax {
    Auto,
    Fixed(u32),
}

impl WorkersMax {
    pub fn resolve(self, cores: u32) -> u32 {
        match self {
            WorkersMax::Auto => cores,
            WorkersMax::Fixed(n) => n,
        }
    }
}

impl SystemSpec {
    pub fn stage(&self, name: &str) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn stage_mut(&mut self, name: &str) -> Option<&mut StageSpec> {
        self.stages.iter_mut().find(|s| s.name == name)
    }

    pub fn endpoint(&self, name: &str) -> Option<&EndpointSpec> {
        self.endpoints.iter().find(|e| e.name == name)
    }

    /// Stages that no link feeds. Ingested data enters here.
    pub fn source_stages(&self) -> Vec<&StageSpec> {
        self.stages
            .iter()
            .filter(|s| !self.links.iter().any(|l| l.to_stage == s.name))
            .collect()
    }

    /// Stages with no outgoing link. Their outputs are the system results.
    pub fn sink_stages(&self) -> Vec<&StageSpec> {
        self.stages
            .iter()
            .filter(|s| !self.links.iter().any(|l| l.from_stage == s.name))
            .collect()
    }

    /// Serializes back into the document format. Every default is written out
    /// explicitly so that `parse_spec(&spec.to_document())` reproduces `spec`.
    pub fn to_document(&self) -> String {
        let doc = Document {
            system: Some(RawSystem {
                name: Some(self.name.clone()),
                storage_manager: self.storage_manager.clone(),
            }),
            endpoints: self
                .endpoints
                .iter()
                .map(|e| RawEndpoint {
                    name: Some(e.name.clone()),
                    address: Some(e.address.clone()),
                    cores: Some(i64::from(e.cores)),
                    roles: Some(e.roles.iter().copied().collect()),
                    storage_capacity: Some(e.storage_capacity as i64),
                })
                .collect(),
            stages: self
                .stages
                .iter()
                .map(|s| RawStage {
                    name: Some(s.name.clone()),
                    kind: Some(s.kind),
                    entry: Some(s.entry.clone()),
                    endpoint: Some(s.endpoint.clone()),
                    workers_initial: Some(i64::from(s.workers_initial)),
                    workers_max: Some(match s.workers_max {
                        WorkersMax::Auto => RawWorkersMax::Text("auto".into()),
                        WorkersMax::Fixed(n) => RawWorkersMax::Count(i64::from(n)),
                    }),
                    params: if s.params.is_empty() { None } else { Some(s.params.clone()) },
                })
                .collect(),
            links: self
                .links
                .iter()
                .map(|l| RawLink {
                    from_stage: Some(l.from_stage.clone()),
                    to_stage: Some(l.to_stage.clone()),
                    channel: Some(l.channel),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("spec documents always serialize")
    }
}

// Raw document shape. Every field is optional so that absent keys surface
// as `MissingField` with a location instead of a generic decode error.

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    system: Option<RawSystem>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    endpoints: Vec<RawEndpoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    stages: Vec<RawStage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    links: Vec<RawLink>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    storage_manager: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEndpoint {
    name: Option<String>,
    address: Option<String>,
    cores: Option<i64>,
    roles: Option<Vec<Role>>,
    storage_capacity: Option<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    name: Option<String>,
    kind: Option<StageKind>,
    entry: Option<String>,
    endpoint: Option<String>,
    workers_initial: Option<i64>,
    workers_max: Option<RawWorkersMax>,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<toml::Table>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawWorkersMax {
    Count(i64),
    Text(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    from_stage: Option<String>,
    to_stage: Option<String>,
    channel: Option<Channel>,
}

fn required<T>(value: Option<T>, location: &str, field: &'static str) -> Result<T, SpecError> {
    value.ok_or_else(|| SpecError::MissingField { location: location.to_string(), field })
}

fn count(value: i64, location: &str, field: &str) -> Result<u32, SpecError> {
    u32::try_from(value)
        .map_err(|_| SpecError::Syntax(format!("{location}: `{field}` must be a non-negative count")))
}

/// Parses a system document, applying defaults.
///
/// Defaults: `workers_initial = 1`, `workers_max = "auto"`, endpoint roles
/// `compute` + `local-store`, and a link channel of `file` when both stages
/// share an endpoint, `network` otherwise.
pub fn parse_spec(document: &str) -> Result<SystemSpec, SpecError> {
    let doc: Document = toml::from_str(document).map_err(|e| SpecError::Syntax(e.to_string()))?;
    let system = required(doc.system, "document", "system")?;
    let name = required(system.name, "system", "name")?;

    let mut endpoints = Vec::with_capacity(doc.endpoints.len());
    for (i, raw) in doc.endpoints.into_iter().enumerate() {
        let loc = format!("endpoints[{i}]");
        let name = required(raw.name, &loc, "name")?;
        let address = required(raw.address, &loc, "address")?;
        let cores = count(required(raw.cores, &loc, "cores")?, &loc, "cores")?;
        let roles = raw
            .roles
            .map(|r| r.into_iter().collect())
            .unwrap_or_else(|| [Role::Compute, Role::LocalStore].into_iter().collect());
        let storage_capacity = match raw.storage_capacity {
            Some(c) if c < 0 => {
                return Err(SpecError::Syntax(format!("{loc}: `storage_capacity` must be non-negative")))
            }
            Some(c) => c as u64,
            None => DEFAULT_STORE_CAPACITY,
        };
        endpoints.push(EndpointSpec { name, address, cores, roles, storage_capacity });
    }

    let mut stages = Vec::with_capacity(doc.stages.len());
    for (i, raw) in doc.stages.into_iter().enumerate() {
        let loc = format!("stages[{i}]");
        let name = required(raw.name, &loc, "name")?;
        let kind = required(raw.kind, &loc, "kind")?;
        let entry = required(raw.entry, &loc, "entry")?;
        let endpoint = required(raw.endpoint, &loc, "endpoint")?;
        let workers_initial = count(raw.workers_initial.unwrap_or(1), &loc, "workers_initial")?;
        let workers_max = match raw.workers_max {
            None => WorkersMax::Auto,
            Some(RawWorkersMax::Count(n)) => WorkersMax::Fixed(count(n, &loc, "workers_max")?),
            Some(RawWorkersMax::Text(t)) if t == "auto" => WorkersMax::Auto,
            Some(RawWorkersMax::Text(t)) => {
                return Err(SpecError::Syntax(format!(
                    "{loc}: `workers_max` must be a count or \"auto\", got {t:?}"
                )))
            }
        };
        stages.push(StageSpec {
            name,
            kind,
            entry,
            endpoint,
            workers_initial,
            workers_max,
            params: raw.params.unwrap_or_default(),
        });
    }

    let mut links = Vec::with_capacity(doc.links.len());
    for (i, raw) in doc.links.into_iter().enumerate() {
        let loc = format!("links[{i}]");
        let from_stage = required(raw.from_stage, &loc, "from_stage")?;
        let to_stage = required(raw.to_stage, &loc, "to_stage")?;
        let channel = raw.channel.unwrap_or_else(|| {
            let endpoint_of = |n: &str| stages.iter().find(|s| s.name == n).map(|s| s.endpoint.as_str());
            match (endpoint_of(&from_stage), endpoint_of(&to_stage)) {
                (Some(a), Some(b)) if a == b => Channel::File,
                _ => Channel::Network,
            }
        });
        links.push(Interconnection { from_stage, to_stage, channel });
    }

    Ok(SystemSpec { name, storage_manager: system.storage_manager, endpoints, stages, links })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
name = "tiny"

[[endpoints]]
name = "alpha"
address = "127.0.0.1:7101"
cores = 4

[[stages]]
name = "only"
kind = "function"
entry = "util.copy"
endpoint = "alpha"
"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let spec = parse_spec(MINIMAL).unwrap();
        assert_eq!(spec.stages.len(), 1);
        assert_eq!(spec.stages[0].workers_initial, 1);
        assert_eq!(spec.stages[0].workers_max, WorkersMax::Auto);
        assert!(spec.links.is_empty());
        assert_eq!(
            spec.endpoints[0].roles,
            [Role::Compute, Role::LocalStore].into_iter().collect()
        );
    }

    #[test]
    fn missing_endpoint_key_is_reported() {
        let doc = MINIMAL.replace("endpoint = \"alpha\"\n", "");
        let err = parse_spec(&doc).unwrap_err();
        assert_eq!(err, SpecError::MissingField { location: "stages[0]".into(), field: "endpoint" });
    }

    #[test]
    fn malformed_document_is_a_syntax_error() {
        assert!(matches!(parse_spec("[system\nname=1"), Err(SpecError::Syntax(_))));
        assert!(matches!(parse_spec("[system]\nname='x'\nbogus=1"), Err(SpecError::Syntax(_))));
        let bad_max = MINIMAL.replace("endpoint = \"alpha\"", "endpoint = \"alpha\"\nworkers_max = \"many\"");
        assert!(matches!(parse_spec(&bad_max), Err(SpecError::Syntax(_))));
    }

    #[test]
    fn default_channel_follows_endpoints() {
        let doc = format!(
            "{MINIMAL}
[[endpoints]]
name = \"beta\"
address = \"127.0.0.1:7102\"
cores = 2

[[stages]]
name = \"near\"
kind = \"function\"
entry = \"util.copy\"
endpoint = \"alpha\"

[[stages]]
name = \"far\"
kind = \"function\"
entry = \"util.copy\"
endpoint = \"beta\"

[[links]]
from_stage = \"only\"
to_stage = \"near\"

[[links]]
from_stage = \"near\"
to_stage = \"far\"
"
        );
        let spec = parse_spec(&doc).unwrap();
        assert_eq!(spec.links[0].channel, Channel::File);
        assert_eq!(spec.links[1].channel, Channel::Network);
        assert_eq!(parse_spec(&spec.to_document()).unwrap(), spec);
    }

    #[test]
    fn workers_max_auto_resolves_to_cores() {
        assert_eq!(WorkersMax::Auto.resolve(48), 48);
        assert_eq!(WorkersMax::Fixed(3).resolve(48), 3);
    }
}
