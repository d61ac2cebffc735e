//! Per-node incidence text:
//!
//! ```text
//! Node IN connects: FET-B-0:drain.
//! Node 6 connects: FET-B-0:source, FET-A-0:drain, inductor-0:p.
//! Duty cycle: 0.5.
//! ```
//!
//! Nodes are listed externals first (IN, OUT, 0, GATEN, GATEP), then
//! internal labels ascending. Devices within a line keep netlist order.

use std::collections::BTreeMap;

use super::{Device, DutyCycle, Entry, Netlist, NetlistError, NodeId};

fn node_rank(n: &NodeId) -> (u8, u32) {
    match n {
        NodeId::Port(p) => (0, *p as u32),
        NodeId::Internal(i) => (1, *i),
    }
}

pub fn encode_incident(n: &Netlist, d: DutyCycle) -> String {
    let mut nodes = n.nodes();
    nodes.sort_by_key(node_rank);
    let mut out = String::new();
    for node in nodes {
        let mut refs = Vec::new();
        for e in n.entries() {
            let roles = e.device.kind.terminal_roles();
            for (t, role) in e.terminals.iter().zip(roles) {
                if *t == node {
                    refs.push(format!("{}:{}", e.device, role));
                }
            }
        }
        out.push_str(&format!("Node {node} connects: {}.\n", refs.join(", ")));
    }
    out.push_str(&format!("Duty cycle: {d}.\n"));
    out
}

pub fn parse_incident(text: &str) -> Result<(Netlist, DutyCycle), NetlistError> {
    let bad = |msg: String| NetlistError::MalformedSyntax(msg);
    let mut order: Vec<Device> = Vec::new();
    let mut terms: BTreeMap<Device, [Option<NodeId>; 2]> = BTreeMap::new();
    let mut duty = None;

    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if duty.is_some() {
            return Err(bad(format!("content after duty line: `{line}`")));
        }
        if let Some(rest) = line.strip_prefix("Duty cycle: ") {
            let value = rest
                .strip_suffix('.')
                .ok_or_else(|| bad(format!("missing `.` in `{line}`")))?;
            let v: f64 = value
                .parse()
                .map_err(|_| bad(format!("bad duty value `{value}`")))?;
            duty = Some(DutyCycle::from_value(v)?);
            continue;
        }
        let rest = line
            .strip_prefix("Node ")
            .ok_or_else(|| bad(format!("unrecognized line `{line}`")))?;
        let (node, refs) = rest
            .split_once(" connects: ")
            .ok_or_else(|| bad(format!("missing `connects:` in `{line}`")))?;
        let node: NodeId = node.parse()?;
        let refs = refs
            .strip_suffix('.')
            .ok_or_else(|| bad(format!("missing `.` in `{line}`")))?;
        for r in refs.split(", ") {
            let (dev, role) = r
                .split_once(':')
                .ok_or_else(|| bad(format!("bad terminal reference `{r}`")))?;
            let device: Device = dev.parse()?;
            let slot = device
                .kind
                .terminal_roles()
                .iter()
                .position(|x| *x == role)
                .ok_or_else(|| bad(format!("unknown terminal role `{role}` for {device}")))?;
            let entry = terms.entry(device).or_insert_with(|| {
                order.push(device);
                [None, None]
            });
            if entry[slot].replace(node).is_some() {
                return Err(NetlistError::InconsistentIncidence(device.to_string()));
            }
        }
    }

    let duty = duty.ok_or_else(|| bad("missing duty line".to_string()))?;
    let mut entries = Vec::with_capacity(order.len());
    for device in order {
        match terms[&device] {
            [Some(a), Some(b)] => entries.push(Entry::new(device, a, b)),
            _ => return Err(NetlistError::InconsistentIncidence(device.to_string())),
        }
    }
    Ok((Netlist::new(entries)?, duty))
}
