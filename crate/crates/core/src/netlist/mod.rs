//! Netlist data model for switching-converter topologies.
//!
//! A [`Netlist`] is an ordered list of devices, each wired to two explicit
//! nodes. MOSFET gate and body terminals are implied by the device kind and
//! never appear in the terminal list.

mod canon;
mod check;
mod incident;
mod triple;

pub use canon::{canonical_key, CanonicalKey};
pub use check::{structural_check, Severity, Violation};
pub use incident::{encode_incident, parse_incident};
pub use triple::{emit_triple_list, parse_triple_list};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetlistError {
    #[error("malformed syntax: {0}")]
    MalformedSyntax(String),
    #[error("unknown device name `{0}`")]
    UnknownDeviceName(String),
    #[error("device `{device}` has {found} terminals, expected {expected}")]
    ArityMismatch {
        device: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate device `{0}`")]
    DuplicateDevice(String),
    #[error("invalid duty cycle {0}")]
    InvalidDuty(String),
    #[error("inconsistent incidence for `{0}`")]
    InconsistentIncidence(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    Capacitor,
    Inductor,
    FetA,
    FetB,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 4] = [
        ComponentKind::Capacitor,
        ComponentKind::Inductor,
        ComponentKind::FetA,
        ComponentKind::FetB,
    ];

    /// Name prefix used in netlist text (`FET-A` in `FET-A-2`).
    pub fn prefix(self) -> &'static str {
        match self {
            ComponentKind::Capacitor => "capacitor",
            ComponentKind::Inductor => "inductor",
            ComponentKind::FetA => "FET-A",
            ComponentKind::FetB => "FET-B",
        }
    }

    pub fn explicit_ports(self) -> usize {
        2
    }

    pub fn is_switch(self) -> bool {
        matches!(self, ComponentKind::FetA | ComponentKind::FetB)
    }

    /// Implied (gate, body) nets for switches.
    pub fn implied_nets(self) -> Option<(Port, Port)> {
        match self {
            ComponentKind::FetA => Some((Port::GateN, Port::Gnd)),
            ComponentKind::FetB => Some((Port::GateP, Port::In)),
            _ => None,
        }
    }

    /// Names of the explicit terminals, in terminal-list order.
    pub fn terminal_roles(self) -> [&'static str; 2] {
        if self.is_switch() {
            ["drain", "source"]
        } else {
            ["p", "n"]
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

/// The five reserved external nets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Port {
    In,
    Out,
    Gnd,
    GateN,
    GateP,
}

impl Port {
    pub const ALL: [Port; 5] = [Port::In, Port::Out, Port::Gnd, Port::GateN, Port::GateP];

    pub fn name(self) -> &'static str {
        match self {
            Port::In => "IN",
            Port::Out => "OUT",
            Port::Gnd => "0",
            Port::GateN => "GATEN",
            Port::GateP => "GATEP",
        }
    }

    pub fn is_control(self) -> bool {
        matches!(self, Port::GateN | Port::GateP)
    }
}

/// A net: either a reserved external port or an internal node with a
/// positive integer label. The label `0` is ground and therefore reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Port(Port),
    Internal(u32),
}

impl NodeId {
    pub const IN: NodeId = NodeId::Port(Port::In);
    pub const OUT: NodeId = NodeId::Port(Port::Out);
    pub const GND: NodeId = NodeId::Port(Port::Gnd);

    pub fn is_internal(self) -> bool {
        matches!(self, NodeId::Internal(_))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Port(p) => f.write_str(p.name()),
            NodeId::Internal(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for NodeId {
    type Err = NetlistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(p) = Port::ALL.iter().find(|p| p.name() == s) {
            return Ok(NodeId::Port(*p));
        }
        if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) {
            return s
                .parse::<u32>()
                .map(NodeId::Internal)
                .map_err(|_| NetlistError::UnknownNode(s.to_string()));
        }
        Err(NetlistError::UnknownNode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Device {
    pub kind: ComponentKind,
    pub index: u32,
}

impl Device {
    pub fn new(kind: ComponentKind, index: u32) -> Self {
        Device { kind, index }
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind.prefix(), self.index)
    }
}

impl FromStr for Device {
    type Err = NetlistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || NetlistError::UnknownDeviceName(s.to_string());
        let (prefix, index) = s.rsplit_once('-').ok_or_else(unknown)?;
        let kind = ComponentKind::ALL
            .into_iter()
            .find(|k| k.prefix() == prefix)
            .ok_or_else(unknown)?;
        if index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
            return Err(unknown());
        }
        let index = index.parse().map_err(|_| unknown())?;
        Ok(Device { kind, index })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Entry {
    pub device: Device,
    pub terminals: [NodeId; 2],
}

impl Entry {
    pub fn new(device: Device, a: NodeId, b: NodeId) -> Self {
        Entry {
            device,
            terminals: [a, b],
        }
    }
}

/// Ordered device-to-node assignments. Device identifiers are unique.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Netlist {
    entries: Vec<Entry>,
}

impl Netlist {
    pub fn new(entries: Vec<Entry>) -> Result<Self, NetlistError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.device) {
                return Err(NetlistError::DuplicateDevice(e.device.to_string()));
            }
        }
        Ok(Netlist { entries })
    }

    pub fn empty() -> Self {
        Netlist::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Count of devices per kind, indexed by [`ComponentKind::ordinal`].
    pub fn kind_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for e in &self.entries {
            counts[e.device.kind.ordinal()] += 1;
        }
        counts
    }

    /// Distinct nets touched by explicit terminals, sorted.
    pub fn nodes(&self) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self
            .entries
            .iter()
            .flat_map(|e| e.terminals.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    pub fn internal_nodes(&self) -> Vec<NodeId> {
        self.nodes().into_iter().filter(|n| n.is_internal()).collect()
    }

    /// Same topology with entries sorted by device and internal nodes
    /// renumbered 1, 2, ... in order of first appearance.
    pub fn normalized(&self) -> Netlist {
        let mut entries = self.entries.clone();
        entries.sort_by_key(|e| e.device);
        let mut map = std::collections::HashMap::new();
        for e in entries.iter_mut() {
            for t in e.terminals.iter_mut() {
                if let NodeId::Internal(label) = *t {
                    let next = map.len() as u32 + 1;
                    *t = NodeId::Internal(*map.entry(label).or_insert(next));
                }
            }
        }
        Netlist { entries }
    }
}

/// One of the five swept duty cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DutyCycle(u8);

impl DutyCycle {
    pub const VALUES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

    pub fn all() -> [DutyCycle; 5] {
        [0, 1, 2, 3, 4].map(DutyCycle)
    }

    pub fn from_index(i: usize) -> Option<Self> {
        (i < 5).then_some(DutyCycle(i as u8))
    }

    pub fn from_value(v: f64) -> Result<Self, NetlistError> {
        Self::VALUES
            .iter()
            .position(|x| (x - v).abs() < 1e-9)
            .map(|i| DutyCycle(i as u8))
            .ok_or_else(|| NetlistError::InvalidDuty(v.to_string()))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn value(self) -> f64 {
        Self::VALUES[self.0 as usize]
    }
}

impl fmt::Display for DutyCycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for DutyCycle {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for DutyCycle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        DutyCycle::from_value(v).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Netlist {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&emit_triple_list(self))
    }
}

impl<'de> Deserialize<'de> for Netlist {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_triple_list(&text).map_err(serde::de::Error::custom)
    }
}
