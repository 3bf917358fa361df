use std::time::Duration;

use geonimbus::events::audit_flows;
use geonimbus::local::{LocalCluster, LocalOptions};
use geonimbus::spec::parse_spec;
use geonimbus::storage::content_id;

const SPEC: &str = r#"
[system]
name = "fan"

[[endpoints]]
name = "src"
address = "127.0.0.1:1"
cores = 2

[[endpoints]]
name = "dst"
address = "127.0.0.1:2"
cores = 2

[[stages]]
name = "produce"
kind = "function"
entry = "util.copy"
endpoint = "src"

[[stages]]
name = "left"
kind = "function"
entry = "util.copy"
endpoint = "dst"

[[stages]]
name = "right"
kind = "function"
entry = "util.copy"
endpoint = "dst"

[[links]]
from_stage = "produce"
to_stage = "left"
channel = "network"

[[links]]
from_stage = "produce"
to_stage = "right"
channel = "network"
"#;

#[test]
fn every_network_delivery_follows_the_storage_flow() {
    let spec = parse_spec(SPEC).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cluster = LocalCluster::start(&spec, &LocalOptions::new(dir.path())).unwrap();
    let handle = cluster.controller.deploy_system(&spec).unwrap();
    let items: Vec<_> = (0..30).map(|i| (format!("f{i}"), format!("content {i}").repeat(i + 1).into_bytes())).collect();
    handle.ingest(&items).unwrap();
    handle.wait_quiescent(Duration::from_secs(60), Duration::from_millis(10)).unwrap();

    let events = cluster.events.snapshot();
    let audit = audit_flows(&events);
    assert_eq!(audit.executions, 60);
    assert!(audit.violations.is_empty(), "{:?}", audit.violations);

    let dst = cluster.daemons["dst"].store();
    for (_, bytes) in &items {
        let id = content_id(bytes);
        assert_eq!(content_id(&dst.pull(&id).unwrap()), id);
    }
    // two consumers on one endpoint share one stored copy
    assert_eq!(dst.items().len(), items.len());
}
