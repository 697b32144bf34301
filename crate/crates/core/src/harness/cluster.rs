//! Leaf/spine cluster generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::model::{Endpoint, GpuSpec, HostSpec, Link, NicRef, NicSpec, PortRef, SwitchSpec, Tier, Topology};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub hosts: usize,
    #[serde(default = "one")]
    pub gpus_per_host: usize,
    pub leaves: usize,
    pub spines: usize,
    /// Leaf capacity; defaults to the fewest hosts per leaf that fits.
    #[serde(default)]
    pub hosts_per_leaf: Option<usize>,
}

fn one() -> usize {
    1
}

impl ClusterSpec {
    pub fn new(hosts: usize, gpus_per_host: usize, leaves: usize, spines: usize) -> Self {
        ClusterSpec { hosts, gpus_per_host, leaves, spines, hosts_per_leaf: None }
    }

    /// Eight single-GPU hosts under two leaves and two spines.
    pub fn testbed() -> Self {
        ClusterSpec::new(8, 1, 2, 2)
    }

    pub fn hosts_per_leaf(&self) -> usize {
        self.hosts_per_leaf.unwrap_or_else(|| self.hosts.div_ceil(self.leaves.max(1)))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: &str| Err(HarnessError::InvalidSpec(m.to_string()));
        if self.hosts == 0 || self.gpus_per_host == 0 || self.leaves == 0 {
            return invalid("hosts, gpus_per_host and leaves must be at least 1");
        }
        if self.spines == 0 {
            return invalid("spines must be at least 1");
        }
        if self.hosts > self.leaves * self.hosts_per_leaf() {
            return invalid(&format!(
                "{} hosts exceed {} leaves x {} hosts per leaf",
                self.hosts,
                self.leaves,
                self.hosts_per_leaf()
            ));
        }
        if self.hosts_per_leaf() > 254 || self.gpus_per_host > 254 || self.leaves > 255 {
            return invalid("cluster too large for the 10.leaf.host.gpu address plan");
        }
        Ok(())
    }

    /// Leaf (1-based) that host `index` (0-based) hangs off.
    pub fn leaf_of(&self, index: usize) -> usize {
        index / self.hosts_per_leaf() + 1
    }
}

pub fn hostname(index: usize) -> String {
    format!("node{}", index + 1)
}

pub fn nic_id(gpu_index: usize) -> String {
    format!("nic{gpu_index}")
}

fn gpu_uuid(rng: &mut ChaCha8Rng) -> String {
    format!(
        "GPU-{:08x}-{:04x}-{:04x}-{:04x}-{:012x}",
        rng.random::<u32>(),
        rng.random::<u16>(),
        rng.random::<u16>(),
        rng.random::<u16>(),
        rng.random::<u64>() & 0xffff_ffff_ffff
    )
}

/// Builds a two-tier Clos fabric: every leaf connects to every spine, and
/// each GPU has its own NIC on a leaf access port.
pub fn generate_cluster(spec: &ClusterSpec, seed: u64) -> Result<Topology, HarnessError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hpl = spec.hosts_per_leaf();
    let mut t = Topology::default();

    for l in 1..=spec.leaves {
        let mut ports: Vec<String> = (1..=hpl * spec.gpus_per_host).map(|p| format!("p{p}")).collect();
        ports.extend((1..=spec.spines).map(|s| format!("up{s}")));
        t.switches.push(SwitchSpec { switch_id: format!("leaf{l}"), tier: Tier::Leaf, ports });
    }
    for s in 1..=spec.spines {
        t.switches.push(SwitchSpec {
            switch_id: format!("spine{s}"),
            tier: Tier::Spine,
            ports: (1..=spec.leaves).map(|l| format!("p{l}")).collect(),
        });
    }

    for h in 0..spec.hosts {
        let leaf = spec.leaf_of(h);
        let slot = h % hpl;
        let name = hostname(h);
        let mut host = HostSpec { hostname: name.clone(), gpus: Vec::new(), nics: Vec::new() };
        for g in 0..spec.gpus_per_host {
            host.gpus.push(GpuSpec { uuid: gpu_uuid(&mut rng) });
            let port = format!("p{}", slot * spec.gpus_per_host + g + 1);
            let leaf_id = format!("leaf{leaf}");
            host.nics.push(NicSpec {
                nic_id: nic_id(g),
                ip: format!("10.{leaf}.{}.{}", slot + 1, g + 1).parse().expect("valid address"),
                attached_switch: leaf_id.clone(),
                attached_port: port.clone(),
            });
            t.links.push(Link {
                a: PortRef::new(leaf_id, port),
                b: Endpoint::Nic(NicRef { host: name.clone(), nic: nic_id(g) }),
            });
        }
        t.hosts.push(host);
    }

    for l in 1..=spec.leaves {
        for s in 1..=spec.spines {
            t.links.push(Link {
                a: PortRef::new(format!("leaf{l}"), format!("up{s}")),
                b: Endpoint::Switch(PortRef::new(format!("spine{s}"), format!("p{l}"))),
            });
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_topology;

    #[test]
    fn testbed_shape() {
        let t = generate_cluster(&ClusterSpec::testbed(), 1).unwrap();
        assert_eq!(t.hosts.len(), 8);
        assert_eq!(t.hosts.iter().map(|h| h.gpus.len()).sum::<usize>(), 8);
        assert_eq!(t.hosts.iter().map(|h| h.nics.len()).sum::<usize>(), 8);
        assert_eq!(t.switches.len(), 4);
        assert!(validate_topology(&t).is_empty());
    }

    #[test]
    fn minimal_clos() {
        let t = generate_cluster(&ClusterSpec::new(1, 1, 1, 1), 0).unwrap();
        assert!(validate_topology(&t).is_empty());
        assert_eq!(t.links.len(), 2);
    }

    #[test]
    fn capacity_exceeded() {
        let spec = ClusterSpec { hosts_per_leaf: Some(2), ..ClusterSpec::new(5, 1, 2, 1) };
        assert!(matches!(generate_cluster(&spec, 0), Err(HarnessError::InvalidSpec(_))));
        assert!(generate_cluster(&ClusterSpec::new(2, 1, 1, 0), 0).is_err());
    }

    #[test]
    fn deterministic_and_seeded() {
        let a = generate_cluster(&ClusterSpec::new(6, 2, 3, 2), 9).unwrap();
        let b = generate_cluster(&ClusterSpec::new(6, 2, 3, 2), 9).unwrap();
        let c = generate_cluster(&ClusterSpec::new(6, 2, 3, 2), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(validate_topology(&a).is_empty());
    }
}
