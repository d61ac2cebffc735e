use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Device, Netlist, NodeId, Port};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Violation {
    EmptyNetlist,
    /// IN, OUT or 0 is not reached by any explicit or implied terminal.
    MissingPort(Port),
    SelfLoop(Device),
    DisconnectedGraph,
    /// Internal node touched by fewer than two terminals.
    DanglingInternal(NodeId),
    /// Explicit terminal wired to GATEN or GATEP.
    ControlNetTerminal(Device),
}

impl Violation {
    pub fn severity(&self) -> Severity {
        match self {
            Violation::ControlNetTerminal(_) => Severity::Warning,
            _ => Severity::Error,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity() == Severity::Error
    }
}

/// All rule violations, sorted so the result does not depend on entry order.
pub fn structural_check(n: &Netlist) -> Vec<Violation> {
    let mut out = Vec::new();
    if n.is_empty() {
        out.push(Violation::EmptyNetlist);
        return out;
    }

    let mut reached: BTreeSet<NodeId> = BTreeSet::new();
    let mut degree: BTreeMap<NodeId, usize> = BTreeMap::new();
    for e in n.entries() {
        for t in e.terminals {
            reached.insert(t);
            *degree.entry(t).or_default() += 1;
        }
        if let Some((gate, body)) = e.device.kind.implied_nets() {
            reached.insert(NodeId::Port(gate));
            reached.insert(NodeId::Port(body));
        }
        if e.terminals[0] == e.terminals[1] {
            out.push(Violation::SelfLoop(e.device));
        }
        if e.terminals
            .iter()
            .any(|t| matches!(t, NodeId::Port(p) if p.is_control()))
        {
            out.push(Violation::ControlNetTerminal(e.device));
        }
    }
    for port in [Port::In, Port::Out, Port::Gnd] {
        if !reached.contains(&NodeId::Port(port)) {
            out.push(Violation::MissingPort(port));
        }
    }
    for (node, d) in &degree {
        if node.is_internal() && *d < 2 {
            out.push(Violation::DanglingInternal(*node));
        }
    }
    if !connected(n) {
        out.push(Violation::DisconnectedGraph);
    }
    out.sort();
    out
}

/// Connectivity of the device/node incidence graph over explicit terminals.
fn connected(n: &Netlist) -> bool {
    let nodes = n.nodes();
    let index = |x: &NodeId| nodes.binary_search(x).unwrap();
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in n.entries() {
        let a = find(&mut parent, index(&e.terminals[0]));
        let b = find(&mut parent, index(&e.terminals[1]));
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    (0..nodes.len()).all(|i| find(&mut parent, i) == root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse_triple_list, ComponentKind};

    fn check(text: &str) -> Vec<Violation> {
        structural_check(&parse_triple_list(text).unwrap())
    }

    #[test]
    fn mislabeled_node_netlist_is_structurally_clean() {
        // Hand trace: IN{FET-B-1,FET-A-0} 0{FET-A-0} OUT{FET-B-0}
        // 6{FET-B-1,inductor-0} 7{FET-B-0,inductor-0}; one component, no
        // dangling node, no self loop. Its failure only shows in simulation.
        let v = check("[['FET-B-1','IN','6'],['FET-A-0','0','IN'],['FET-B-0','OUT','7'],['inductor-0','6','7']]");
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn corrected_netlist_is_clean() {
        let v = check("[['FET-B-1','IN','6'],['FET-A-0','0','IN'],['FET-B-0','OUT','0'],['inductor-0','6','OUT']]");
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn self_loop() {
        let v = check("[['capacitor-0','IN','IN']]");
        assert!(v.contains(&Violation::SelfLoop(Device::new(ComponentKind::Capacitor, 0))));
    }

    #[test]
    fn empty() {
        assert_eq!(check("[]"), vec![Violation::EmptyNetlist]);
    }

    #[test]
    fn missing_ports_and_implied_terminals() {
        let v = check("[['capacitor-0','IN','0']]");
        assert_eq!(v, vec![Violation::MissingPort(Port::Out)]);
        // FET-B's body reaches IN and FET-A's body reaches 0.
        let v = check("[['FET-B-0','OUT','1'],['FET-A-0','1','OUT']]");
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn dangling_and_disconnected() {
        let v = check("[['capacitor-0','IN','0'],['inductor-0','OUT','5']]");
        assert!(v.contains(&Violation::DanglingInternal(NodeId::Internal(5))));
        assert!(v.contains(&Violation::DisconnectedGraph));
    }

    #[test]
    fn control_net_is_warning() {
        let v = check("[['capacitor-0','IN','GATEN'],['FET-A-0','IN','OUT'],['capacitor-1','OUT','0'],['capacitor-2','GATEN','0']]");
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|x| x.severity() == Severity::Warning));
    }
}
