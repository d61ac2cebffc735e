//! Relabeling-invariant design features.
//!
//! The first [`DENSE_LEN`] slots are named structural descriptors. The rest
//! is a hashed bag of Weisfeiler-Lehman subtree and edge patterns. Each
//! pattern also appears crossed with the duty one-hot and scaled by D and
//! D^2, so a linear model can fit a per-structure duty response.

use std::hash::Hasher;

use fnv::FnvHasher;

use crate::netlist::{ComponentKind, Netlist, NodeId};
use crate::simulator::Design;

/// Bumped whenever the layout or hashing below changes.
pub const FEATURE_MAP_VERSION: u32 = 1;

pub const KIND_COUNTS: usize = 0;
pub const DUTY_ONE_HOT: usize = 4;
/// Nets touched by 1, 2, 3, 4, 5 or 6+ explicit terminals.
pub const DEGREE_HISTOGRAM: usize = 9;
pub const SWITCH_ON_PATH: usize = 15;
pub const INDUCTOR_ON_PATH: usize = 16;
pub const CAPACITORS_ON_OUT: usize = 17;
pub const DIAMETER: usize = 18;
pub const DENSE_LEN: usize = 19;

pub const HASH_BITS: u32 = 20;
pub const DIM: usize = DENSE_LEN + (1 << HASH_BITS);

const WL_ROUNDS: usize = 3;

/// A sparse vector of length [`DIM`]; indices are unique and ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub entries: Vec<(usize, f64)>,
}

impl Features {
    pub fn dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; DIM];
        for &(i, x) in &self.entries {
            v[i] = x;
        }
        v
    }

    pub fn get(&self, i: usize) -> f64 {
        match self.entries.binary_search_by_key(&i, |e| e.0) {
            Ok(k) => self.entries[k].1,
            Err(_) => 0.0,
        }
    }
}

struct Graph {
    nodes: Vec<NodeId>,
    /// (kind, a, b) over indices into `nodes`.
    edges: Vec<(usize, usize, usize)>,
    adj: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    fn new(n: &Netlist) -> Graph {
        let nodes = n.nodes();
        let idx = |x: &NodeId| nodes.binary_search(x).unwrap();
        let mut adj = vec![Vec::new(); nodes.len()];
        let mut edges = Vec::new();
        for e in n.entries() {
            let k = e.device.kind.ordinal();
            let (a, b) = (idx(&e.terminals[0]), idx(&e.terminals[1]));
            edges.push((k, a, b));
            adj[a].push((k, b));
            adj[b].push((k, a));
        }
        Graph { nodes, edges, adj }
    }

    fn find(&self, x: NodeId) -> Option<usize> {
        self.nodes.binary_search(&x).ok()
    }

    /// Kinds appearing on some simple IN-to-OUT path.
    fn path_kinds(&self) -> [bool; 4] {
        let mut seen = [false; 4];
        let (Some(s), Some(t)) = (self.find(NodeId::IN), self.find(NodeId::OUT)) else {
            return seen;
        };
        let mut on_path = vec![false; self.nodes.len()];
        let mut used = Vec::new();
        self.walk(s, t, &mut on_path, &mut used, &mut seen);
        seen
    }

    fn walk(
        &self,
        v: usize,
        t: usize,
        on_path: &mut [bool],
        used: &mut Vec<usize>,
        seen: &mut [bool; 4],
    ) {
        if v == t {
            for &k in used.iter() {
                seen[k] = true;
            }
            return;
        }
        on_path[v] = true;
        for &(k, w) in &self.adj[v] {
            if !on_path[w] {
                used.push(k);
                self.walk(w, t, on_path, used, seen);
                used.pop();
            }
        }
        on_path[v] = false;
    }

    fn diameter(&self) -> usize {
        let n = self.nodes.len();
        let mut best = 0;
        for s in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                for &(_, w) in &self.adj[v] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                }
            }
            best = best.max(dist.iter().filter(|&&d| d != usize::MAX).max().copied().unwrap_or(0));
        }
        best
    }

    /// Colour of every node after each refinement round, as stable hashes.
    fn wl_labels(&self) -> Vec<Vec<u64>> {
        let mut rounds = Vec::with_capacity(WL_ROUNDS + 1);
        let mut cur: Vec<u64> = self
            .nodes
            .iter()
            .map(|x| match x {
                NodeId::Port(p) => hash(&[0, *p as u64]),
                NodeId::Internal(_) => hash(&[1]),
            })
            .collect();
        rounds.push(cur.clone());
        for _ in 0..WL_ROUNDS {
            cur = (0..self.nodes.len())
                .map(|v| {
                    let mut nb: Vec<u64> = self.adj[v]
                        .iter()
                        .map(|&(k, w)| hash(&[k as u64, cur[w]]))
                        .collect();
                    nb.sort_unstable();
                    nb.insert(0, cur[v]);
                    hash(&nb)
                })
                .collect();
            rounds.push(cur.clone());
        }
        rounds
    }
}

fn hash(words: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    for w in words {
        h.write_u64(*w);
    }
    h.finish()
}

fn duty_basis(d: f64) -> [f64; 2] {
    [d, d * d]
}

fn bucket(h: u64) -> usize {
    DENSE_LEN + (h & ((1 << HASH_BITS) - 1)) as usize
}

pub fn featurize(d: &Design) -> Features {
    let mut dense = [0.0; DENSE_LEN];
    let counts = d.netlist.kind_counts();
    for k in 0..4 {
        dense[KIND_COUNTS + k] = counts[k] as f64;
    }
    let duty = d.duty.index();
    dense[DUTY_ONE_HOT + duty] = 1.0;
    if d.netlist.is_empty() {
        return Features {
            entries: vec![(DUTY_ONE_HOT + duty, 1.0)],
        };
    }

    let g = Graph::new(&d.netlist);
    for adj in &g.adj {
        if !adj.is_empty() {
            dense[DEGREE_HISTOGRAM + adj.len().min(6) - 1] += 1.0;
        }
    }
    let kinds = g.path_kinds();
    let switch = ComponentKind::ALL
        .iter()
        .any(|k| k.is_switch() && kinds[k.ordinal()]);
    dense[SWITCH_ON_PATH] = switch as u8 as f64;
    dense[INDUCTOR_ON_PATH] = kinds[ComponentKind::Inductor.ordinal()] as u8 as f64;
    dense[CAPACITORS_ON_OUT] = d
        .netlist
        .entries()
        .iter()
        .filter(|e| e.device.kind == ComponentKind::Capacitor && e.terminals.contains(&NodeId::OUT))
        .count() as f64;
    dense[DIAMETER] = g.diameter() as f64;

    let basis = duty_basis(d.duty.value());
    let mut sparse: Vec<(usize, f64)> = Vec::new();
    let mut emit = |h: u64| {
        sparse.push((bucket(h), 1.0));
        sparse.push((bucket(hash(&[h, 200 + duty as u64])), 1.0));
        for (j, phi) in basis.iter().enumerate() {
            sparse.push((bucket(hash(&[h, 100 + j as u64])), *phi));
        }
    };
    emit(hash(&[2, counts[0] as u64, counts[1] as u64, counts[2] as u64, counts[3] as u64]));
    let rounds = g.wl_labels();
    for (r, labels) in rounds.iter().enumerate() {
        for &l in labels {
            emit(hash(&[3, r as u64, l]));
        }
        for &(k, a, b) in &g.edges {
            let (x, y) = (labels[a].min(labels[b]), labels[a].max(labels[b]));
            emit(hash(&[4, r as u64, k as u64, x, y]));
        }
    }
    let mut whole = rounds[WL_ROUNDS].clone();
    whole.sort_unstable();
    whole.insert(0, 5);
    emit(hash(&whole));

    sparse.sort_unstable_by_key(|e| e.0);
    let mut entries: Vec<(usize, f64)> = dense
        .iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, x)| (i, *x))
        .collect();
    for (i, x) in sparse {
        match entries.last_mut() {
            Some(last) if last.0 == i => last.1 += x,
            _ => entries.push((i, x)),
        }
    }
    Features { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse_triple_list, DutyCycle};

    const BUCK: &str =
        "[['FET-B-0','IN','6'],['FET-A-0','6','0'],['inductor-0','6','OUT'],['capacitor-0','OUT','0']]";

    fn design(text: &str, duty: f64) -> Design {
        Design::new(parse_triple_list(text).unwrap(), DutyCycle::from_value(duty).unwrap())
    }

    #[test]
    fn buck_by_hand() {
        let f = featurize(&design(BUCK, 0.5));
        assert_eq!(f.get(KIND_COUNTS + 1), 1.0);
        assert_eq!(f.get(INDUCTOR_ON_PATH), 1.0);
        assert_eq!(f.get(SWITCH_ON_PATH), 1.0);
        assert_eq!(f.get(CAPACITORS_ON_OUT), 1.0);
        assert_eq!(f.get(DUTY_ONE_HOT + 2), 1.0);
        // IN:1, OUT:2, 0:2, node 6:3.
        assert_eq!(f.get(DEGREE_HISTOGRAM), 1.0);
        assert_eq!(f.get(DEGREE_HISTOGRAM + 1), 2.0);
        assert_eq!(f.get(DEGREE_HISTOGRAM + 2), 1.0);
        assert_eq!(f.get(DIAMETER), 2.0);
    }

    #[test]
    fn relabel_invariant() {
        let other = "[['capacitor-0','0','OUT'],['inductor-0','OUT','9'],['FET-A-0','0','9'],['FET-B-0','9','IN']]";
        assert_eq!(featurize(&design(BUCK, 0.3)), featurize(&design(other, 0.3)));
    }

    #[test]
    fn duty_changes_features() {
        assert_ne!(featurize(&design(BUCK, 0.3)), featurize(&design(BUCK, 0.5)));
    }

    #[test]
    fn empty_netlist_has_only_duty() {
        let f = featurize(&Design::new(Netlist::empty(), DutyCycle::from_index(0).unwrap()));
        assert_eq!(f.entries, vec![(DUTY_ONE_HOT, 1.0)]);
    }
}
