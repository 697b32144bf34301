use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ModelError;

/// Layers of the assurance stack, ordered from the workload down to the fabric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Application,
    Gpu,
    Host,
    Nic,
    SwitchPort,
    Switch,
}

impl Layer {
    pub const ALL: [Layer; 6] = [
        Layer::Application,
        Layer::Gpu,
        Layer::Host,
        Layer::Nic,
        Layer::SwitchPort,
        Layer::Switch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Application => "application",
            Layer::Gpu => "gpu",
            Layer::Host => "host",
            Layer::Nic => "nic",
            Layer::SwitchPort => "switch_port",
            Layer::Switch => "switch",
        }
    }

    pub fn is_fabric(self) -> bool {
        matches!(self, Layer::SwitchPort | Layer::Switch)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "application" | "app" => Layer::Application,
            "gpu" => Layer::Gpu,
            "host" => Layer::Host,
            "nic" => Layer::Nic,
            "switch_port" | "switchport" | "port" => Layer::SwitchPort,
            "switch" => Layer::Switch,
            other => return Err(ModelError::UnknownLayer(other.to_string())),
        })
    }
}

/// Identity of one element of the stack.
///
/// Keys are self-describing per layer: application id, GPU UUID, hostname,
/// `hostname/nic-id`, `switch-id/port-id`, `switch-id`. The textual form is
/// `<layer>:<key>`, which is also the serialized form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    pub layer: Layer,
    pub key: String,
}

impl EntityId {
    pub fn new(layer: Layer, key: impl Into<String>) -> Result<Self, ModelError> {
        let id = EntityId { layer, key: key.into() };
        id.validate()?;
        Ok(id)
    }

    pub fn app(id: impl Into<String>) -> Self {
        EntityId { layer: Layer::Application, key: id.into() }
    }

    pub fn gpu(uuid: impl Into<String>) -> Self {
        EntityId { layer: Layer::Gpu, key: uuid.into() }
    }

    pub fn host(hostname: impl Into<String>) -> Self {
        EntityId { layer: Layer::Host, key: hostname.into() }
    }

    pub fn nic(hostname: &str, nic_id: &str) -> Self {
        EntityId { layer: Layer::Nic, key: format!("{hostname}/{nic_id}") }
    }

    pub fn switch_port(switch_id: &str, port_id: &str) -> Self {
        EntityId { layer: Layer::SwitchPort, key: format!("{switch_id}/{port_id}") }
    }

    pub fn switch(switch_id: impl Into<String>) -> Self {
        EntityId { layer: Layer::Switch, key: switch_id.into() }
    }

    /// For composite keys (`Nic`, `SwitchPort`) returns the two halves.
    pub fn split_composite(&self) -> Option<(&str, &str)> {
        match self.layer {
            Layer::Nic | Layer::SwitchPort => self.key.split_once('/'),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.key.is_empty() {
            return Err(ModelError::InvalidEntity(self.to_string(), "empty key"));
        }
        match self.layer {
            Layer::Gpu if !is_gpu_uuid(&self.key) => {
                Err(ModelError::InvalidEntity(self.to_string(), "GPU key must be GPU- followed by 8+ hex/uuid characters"))
            }
            Layer::Nic | Layer::SwitchPort => match self.key.split_once('/') {
                Some((a, b)) if !a.is_empty() && !b.is_empty() && !b.contains('/') => Ok(()),
                _ => Err(ModelError::InvalidEntity(self.to_string(), "composite key must be <parent>/<child>")),
            },
            _ => Ok(()),
        }
    }
}

/// `GPU-` followed by at least eight hex digits or dashes.
pub fn is_gpu_uuid(key: &str) -> bool {
    match key.strip_prefix("GPU-") {
        Some(rest) => {
            rest.chars().filter(|c| c.is_ascii_hexdigit()).count() >= 8
                && rest.chars().all(|c| c.is_ascii_hexdigit() || c == '-')
        }
        None => false,
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.key)
    }
}

impl FromStr for EntityId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (layer, key) = s
            .split_once(':')
            .ok_or_else(|| ModelError::InvalidEntity(s.to_string(), "expected <layer>:<key>"))?;
        EntityId::new(layer.parse()?, key)
    }
}

impl Serialize for EntityId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
