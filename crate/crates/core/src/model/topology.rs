//! Cluster topology descriptor and Clos validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::entity::{is_gpu_uuid, EntityId};
use crate::error::ModelError;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    #[serde(default)]
    pub hosts: Vec<HostSpec>,
    #[serde(default)]
    pub switches: Vec<SwitchSpec>,
    #[serde(default)]
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub hostname: String,
    #[serde(default)]
    pub gpus: Vec<GpuSpec>,
    #[serde(default)]
    pub nics: Vec<NicSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuSpec {
    pub uuid: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NicSpec {
    pub nic_id: String,
    pub ip: IpAddr,
    pub attached_switch: String,
    pub attached_port: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Leaf,
    Spine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub switch_id: String,
    pub tier: Tier,
    #[serde(default)]
    pub ports: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortRef {
    pub switch: String,
    pub port: String,
}

impl PortRef {
    pub fn new(switch: impl Into<String>, port: impl Into<String>) -> Self {
        PortRef { switch: switch.into(), port: port.into() }
    }

    pub fn entity(&self) -> EntityId {
        EntityId::switch_port(&self.switch, &self.port)
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.switch, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NicRef {
    pub host: String,
    pub nic: String,
}

impl NicRef {
    pub fn entity(&self) -> EntityId {
        EntityId::nic(&self.host, &self.nic)
    }
}

/// Far end of a link: another switch port or a host NIC.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Endpoint {
    Switch(PortRef),
    Nic(NicRef),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Switch(p) => write!(f, "{p}"),
            Endpoint::Nic(n) => write!(f, "{}/{}", n.host, n.nic),
        }
    }
}

/// Undirected cable. `a` is always a switch port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub a: PortRef,
    pub b: Endpoint,
}

impl Link {
    fn canonical(&self) -> (Endpoint, Endpoint) {
        let a = Endpoint::Switch(self.a.clone());
        if a <= self.b {
            (a, self.b.clone())
        } else {
            (self.b.clone(), a)
        }
    }

    fn label(&self) -> String {
        format!("link {} <-> {}", self.a, self.b)
    }
}

/// One broken topology invariant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub element: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

impl Topology {
    pub fn from_toml_str(text: &str) -> Result<Topology, ModelError> {
        toml::from_str(text).map_err(|e| ModelError::TopologyParse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("topology is always representable as TOML")
    }

    /// Loads a topology document; `.json` files are read as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Topology, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::TopologyParse(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ModelError::TopologyParse(e.to_string()))
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn switch(&self, id: &str) -> Option<&SwitchSpec> {
        self.switches.iter().find(|s| s.switch_id == id)
    }

    pub fn host(&self, hostname: &str) -> Option<&HostSpec> {
        self.hosts.iter().find(|h| h.hostname == hostname)
    }

    pub fn index(&self) -> TopologyIndex {
        TopologyIndex::build(self)
    }
}

/// Returns one entry per broken invariant, sorted by element then message.
pub fn validate_topology(t: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |element: String, message: String| out.push(Violation { element, message });

    let mut hostnames = BTreeSet::new();
    let mut gpu_owner: BTreeMap<&str, &str> = BTreeMap::new();
    let mut ip_owner: BTreeMap<IpAddr, String> = BTreeMap::new();
    for h in &t.hosts {
        let el = format!("host {}", h.hostname);
        if h.hostname.is_empty() || h.hostname.contains(['/', ':']) || h.hostname.contains(char::is_whitespace) {
            push(el.clone(), "hostname must be non-empty without '/', ':' or whitespace".into());
        }
        if !hostnames.insert(h.hostname.as_str()) {
            push(el.clone(), "duplicate hostname".into());
        }
        for g in &h.gpus {
            if !is_gpu_uuid(&g.uuid) {
                push(format!("gpu {}", g.uuid), "uuid must be GPU- followed by 8+ hex/uuid characters".into());
            }
            if let Some(prev) = gpu_owner.insert(&g.uuid, &h.hostname) {
                push(format!("gpu {}", g.uuid), format!("duplicate uuid (also on host {prev})"));
            }
        }
        let mut nic_ids = BTreeSet::new();
        for n in &h.nics {
            let nel = format!("nic {}/{}", h.hostname, n.nic_id);
            if n.nic_id.is_empty() || n.nic_id.contains(['/', ':']) {
                push(nel.clone(), "nic id must be non-empty without '/' or ':'".into());
            }
            if !nic_ids.insert(n.nic_id.as_str()) {
                push(nel.clone(), "duplicate nic id on host".into());
            }
            if let Some(prev) = ip_owner.insert(n.ip, nel.clone()) {
                push(nel.clone(), format!("ip {} already assigned to {prev}", n.ip));
            }
        }
    }

    let mut switch_tier: BTreeMap<&str, Tier> = BTreeMap::new();
    let mut switch_ports: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for s in &t.switches {
        let el = format!("switch {}", s.switch_id);
        if s.switch_id.is_empty() || s.switch_id.contains(['/', ':']) {
            push(el.clone(), "switch id must be non-empty without '/' or ':'".into());
        }
        if switch_tier.insert(&s.switch_id, s.tier).is_some() {
            push(el.clone(), "duplicate switch id".into());
        }
        let ports = switch_ports.entry(&s.switch_id).or_default();
        for p in &s.ports {
            if p.is_empty() || p.contains(['/', ':']) {
                push(format!("port {}/{}", s.switch_id, p), "port id must be non-empty without '/' or ':'".into());
            }
            if !ports.insert(p) {
                push(format!("port {}/{}", s.switch_id, p), "duplicate port id".into());
            }
        }
    }

    let port_exists = |pr: &PortRef| switch_ports.get(pr.switch.as_str()).map(|ps| ps.contains(pr.port.as_str()));
    let nic_exists = |nr: &NicRef| {
        t.hosts
            .iter()
            .find(|h| h.hostname == nr.host)
            .map(|h| h.nics.iter().any(|n| n.nic_id == nr.nic))
    };

    let mut seen_links = BTreeSet::new();
    let mut port_use: BTreeMap<Endpoint, usize> = BTreeMap::new();
    let mut nic_links: BTreeSet<(NicRef, PortRef)> = BTreeSet::new();
    for link in &t.links {
        let el = link.label();
        let mut ends_ok = true;
        match port_exists(&link.a) {
            None => {
                push(el.clone(), format!("unknown switch {}", link.a.switch));
                ends_ok = false;
            }
            Some(false) => {
                push(el.clone(), format!("unknown port {}", link.a));
                ends_ok = false;
            }
            Some(true) => {}
        }
        match &link.b {
            Endpoint::Switch(pr) => match port_exists(pr) {
                None => {
                    push(el.clone(), format!("unknown switch {}", pr.switch));
                    ends_ok = false;
                }
                Some(false) => {
                    push(el.clone(), format!("unknown port {pr}"));
                    ends_ok = false;
                }
                Some(true) => {}
            },
            Endpoint::Nic(nr) => match nic_exists(nr) {
                None => {
                    push(el.clone(), format!("unknown host {}", nr.host));
                    ends_ok = false;
                }
                Some(false) => {
                    push(el.clone(), format!("unknown nic {}/{}", nr.host, nr.nic));
                    ends_ok = false;
                }
                Some(true) => {}
            },
        }
        if Endpoint::Switch(link.a.clone()) == link.b {
            push(el.clone(), "link connects a port to itself".into());
            continue;
        }
        if !seen_links.insert(link.canonical()) {
            push(el.clone(), "duplicate link".into());
            continue;
        }
        for end in [Endpoint::Switch(link.a.clone()), link.b.clone()] {
            *port_use.entry(end).or_default() += 1;
        }
        if !ends_ok {
            continue;
        }
        let tier_a = switch_tier[link.a.switch.as_str()];
        match &link.b {
            Endpoint::Switch(pr) => {
                let tier_b = switch_tier[pr.switch.as_str()];
                if tier_a == tier_b {
                    let tier = if tier_a == Tier::Leaf { "leaf" } else { "spine" };
                    push(el.clone(), format!("{tier}-{tier} link breaks Clos bipartiteness"));
                }
            }
            Endpoint::Nic(nr) => {
                if tier_a == Tier::Spine {
                    push(el.clone(), "spine switch connected directly to a host".into());
                }
                nic_links.insert((nr.clone(), link.a.clone()));
            }
        }
    }
    for (end, count) in &port_use {
        if *count > 1 {
            push(format!("endpoint {end}"), format!("used by {count} links"));
        }
    }

    for h in &t.hosts {
        for n in &h.nics {
            let nr = NicRef { host: h.hostname.clone(), nic: n.nic_id.clone() };
            let pr = PortRef::new(&n.attached_switch, &n.attached_port);
            if !nic_links.contains(&(nr, pr.clone())) {
                push(
                    format!("nic {}/{}", h.hostname, n.nic_id),
                    format!("attachment {pr} has no matching link"),
                );
            }
        }
    }

    out.sort();
    out
}

/// Lookup tables derived from a [`Topology`].
#[derive(Debug, Clone, Default)]
pub struct TopologyIndex {
    pub tiers: BTreeMap<String, Tier>,
    /// (switch, port) -> far end of its link.
    pub peers: BTreeMap<PortRef, Endpoint>,
    /// nic -> the switch port it is cabled to.
    pub nic_attachment: BTreeMap<NicRef, PortRef>,
    pub nic_by_ip: BTreeMap<IpAddr, NicRef>,
    pub ip_by_nic: BTreeMap<NicRef, IpAddr>,
    pub gpu_host: BTreeMap<String, String>,
    pub host_nics: BTreeMap<String, Vec<String>>,
    pub host_gpus: BTreeMap<String, Vec<String>>,
    pub switch_ports: BTreeMap<String, Vec<String>>,
}

impl TopologyIndex {
    fn build(t: &Topology) -> Self {
        let mut ix = TopologyIndex::default();
        for s in &t.switches {
            ix.tiers.insert(s.switch_id.clone(), s.tier);
            ix.switch_ports.insert(s.switch_id.clone(), s.ports.clone());
        }
        for h in &t.hosts {
            ix.host_nics.insert(h.hostname.clone(), h.nics.iter().map(|n| n.nic_id.clone()).collect());
            ix.host_gpus.insert(h.hostname.clone(), h.gpus.iter().map(|g| g.uuid.clone()).collect());
            for g in &h.gpus {
                ix.gpu_host.insert(g.uuid.clone(), h.hostname.clone());
            }
            for n in &h.nics {
                let nr = NicRef { host: h.hostname.clone(), nic: n.nic_id.clone() };
                ix.nic_attachment.insert(nr.clone(), PortRef::new(&n.attached_switch, &n.attached_port));
                ix.nic_by_ip.insert(n.ip, nr.clone());
                ix.ip_by_nic.insert(nr, n.ip);
            }
        }
        for l in &t.links {
            ix.peers.insert(l.a.clone(), l.b.clone());
            if let Endpoint::Switch(pr) = &l.b {
                ix.peers.insert(pr.clone(), Endpoint::Switch(l.a.clone()));
            }
        }
        ix
    }

    pub fn has_port(&self, switch: &str, port: &str) -> bool {
        self.switch_ports.get(switch).is_some_and(|ps| ps.iter().any(|p| p == port))
    }

    pub fn has_nic(&self, host: &str, nic: &str) -> bool {
        self.host_nics.get(host).is_some_and(|ns| ns.iter().any(|n| n == nic))
    }

    pub fn has_entity(&self, id: &EntityId) -> bool {
        use super::entity::Layer;
        match id.layer {
            Layer::Application => true,
            Layer::Gpu => self.gpu_host.contains_key(&id.key),
            Layer::Host => self.host_nics.contains_key(&id.key),
            Layer::Nic => id.split_composite().is_some_and(|(h, n)| self.has_nic(h, n)),
            Layer::SwitchPort => id.split_composite().is_some_and(|(s, p)| self.has_port(s, p)),
            Layer::Switch => self.tiers.contains_key(&id.key),
        }
    }

    pub fn peer(&self, switch: &str, port: &str) -> Option<&Endpoint> {
        self.peers.get(&PortRef::new(switch, port))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Eight single-GPU hosts, two leaves, two spines, full leaf/spine mesh.
    pub(crate) fn eight_host_fixture() -> Topology {
        let mut t = Topology::default();
        for leaf in 1..=2 {
            let mut ports: Vec<String> = (1..=4).map(|p| format!("p{p}")).collect();
            ports.extend((1..=2).map(|s| format!("up{s}")));
            t.switches.push(SwitchSpec { switch_id: format!("leaf{leaf}"), tier: Tier::Leaf, ports });
        }
        for spine in 1..=2 {
            t.switches.push(SwitchSpec {
                switch_id: format!("spine{spine}"),
                tier: Tier::Spine,
                ports: (1..=2).map(|p| format!("p{p}")).collect(),
            });
        }
        for h in 0..8 {
            let leaf = h / 4 + 1;
            let port = format!("p{}", h % 4 + 1);
            let hostname = format!("node{}", h + 1);
            t.hosts.push(HostSpec {
                hostname: hostname.clone(),
                gpus: vec![GpuSpec { uuid: format!("GPU-{:08x}", 0xa000 + h) }],
                nics: vec![NicSpec {
                    nic_id: "nic0".into(),
                    ip: format!("10.0.{leaf}.{}", h + 1).parse().unwrap(),
                    attached_switch: format!("leaf{leaf}"),
                    attached_port: port.clone(),
                }],
            });
            t.links.push(Link {
                a: PortRef::new(format!("leaf{leaf}"), port),
                b: Endpoint::Nic(NicRef { host: hostname, nic: "nic0".into() }),
            });
        }
        for leaf in 1..=2 {
            for spine in 1..=2 {
                t.links.push(Link {
                    a: PortRef::new(format!("leaf{leaf}"), format!("up{spine}")),
                    b: Endpoint::Switch(PortRef::new(format!("spine{spine}"), format!("p{leaf}"))),
                });
            }
        }
        t
    }

    #[test]
    fn eight_host_clos_is_valid() {
        assert_eq!(validate_topology(&eight_host_fixture()), vec![]);
    }

    #[test]
    fn empty_topology_is_vacuously_valid() {
        assert!(validate_topology(&Topology::default()).is_empty());
    }

    #[test]
    fn flags_exactly_the_unknown_switch() {
        let mut t = eight_host_fixture();
        let idx = t.links.iter().position(|l| matches!(l.b, Endpoint::Switch(_))).unwrap();
        t.links[idx].b = Endpoint::Switch(PortRef::new("leaf9", "p1"));
        let v = validate_topology(&t);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].message.contains("leaf9"));
    }

    #[test]
    fn flags_leaf_to_leaf_link() {
        let mut t = eight_host_fixture();
        t.switches[0].ports.push("x1".into());
        t.switches[1].ports.push("x1".into());
        t.links.push(Link {
            a: PortRef::new("leaf1", "x1"),
            b: Endpoint::Switch(PortRef::new("leaf2", "x1")),
        });
        let v = validate_topology(&t);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("leaf-leaf"));
    }

    #[test]
    fn flags_duplicate_reversed_link_and_missing_attachment() {
        let mut t = eight_host_fixture();
        let spine_link = t.links.iter().find(|l| matches!(l.b, Endpoint::Switch(_))).unwrap().clone();
        let Endpoint::Switch(b) = spine_link.b.clone() else { unreachable!() };
        t.links.push(Link { a: b, b: Endpoint::Switch(spine_link.a.clone()) });
        t.hosts[0].nics[0].attached_port = "p3".into();
        let v = validate_topology(&t);
        assert!(v.iter().any(|x| x.message == "duplicate link"));
        assert!(v.iter().any(|x| x.element == "nic node1/nic0"));
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(v, sorted);
    }

    #[test]
    fn toml_round_trip() {
        let t = eight_host_fixture();
        let text = t.to_toml_string();
        assert_eq!(Topology::from_toml_str(&text).unwrap(), t);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Topology::from_toml_str("[[switches]]\nswitch_id = \"s\"\ntier = \"leaf\"\ncolour = 1\n").unwrap_err();
        assert!(err.to_string().contains("colour"));
    }
}
