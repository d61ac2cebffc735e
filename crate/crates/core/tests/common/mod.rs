#![allow(dead_code)]

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use topo_core::netlist::*;

pub const PORTS: [Port; 5] = [Port::In, Port::Out, Port::Gnd, Port::GateN, Port::GateP];

/// Node universe for the exhaustive space: every port plus three internal nets.
pub fn universe() -> Vec<NodeId> {
    let mut v: Vec<NodeId> = PORTS.iter().map(|&p| NodeId::Port(p)).collect();
    v.extend((1..=3).map(NodeId::Internal));
    v
}

pub fn build(edges: &[(usize, NodeId, NodeId)]) -> Netlist {
    let mut next = [0u32; 4];
    let entries = edges
        .iter()
        .map(|&(k, a, b)| {
            let kind = ComponentKind::ALL[k];
            next[k] += 1;
            Entry::new(Device::new(kind, next[k] - 1), a, b)
        })
        .collect();
    Netlist::new(entries).unwrap()
}

pub fn node_code(n: NodeId) -> u32 {
    match n {
        NodeId::Port(p) => p as u32,
        NodeId::Internal(i) => 100 + i,
    }
}

pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Smallest description over every entry order, terminal orientation and
/// bijection of internal labels 1..=3.
pub fn brute_force_form(edges: &[(usize, NodeId, NodeId)]) -> Vec<(usize, u32, u32)> {
    let n = edges.len();
    let entry_orders = permutations(&(0..n).collect::<Vec<_>>());
    let relabels = permutations(&[1, 2, 3]);
    let mut best: Option<Vec<(usize, u32, u32)>> = None;
    for relabel in &relabels {
        let map = |x: NodeId| match x {
            NodeId::Internal(i) => NodeId::Internal(relabel[i as usize - 1] as u32),
            p => p,
        };
        for order in &entry_orders {
            for flips in 0..(1u32 << n) {
                let form: Vec<(usize, u32, u32)> = order
                    .iter()
                    .enumerate()
                    .map(|(pos, &i)| {
                        let (k, a, b) = edges[i];
                        let (a, b) = (node_code(map(a)), node_code(map(b)));
                        if flips >> pos & 1 == 1 {
                            (k, b, a)
                        } else {
                            (k, a, b)
                        }
                    })
                    .collect();
                if best.as_ref().map_or(true, |b| form < *b) {
                    best = Some(form);
                }
            }
        }
    }
    best.unwrap()
}

/// Random netlist of `n` devices over ports and a handful of internal nets.
pub fn random_netlist(n: usize, rng: &mut ChaCha8Rng) -> Netlist {
    let internal = rng.gen_range(1..=n as u32);
    let node = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.4) {
            NodeId::Port(PORTS[rng.gen_range(0..3)])
        } else {
            NodeId::Internal(rng.gen_range(1..=internal))
        }
    };
    let edges: Vec<(usize, NodeId, NodeId)> = (0..n)
        .map(|_| (rng.gen_range(0..4), node(rng), node(rng)))
        .collect();
    build(&edges)
}

/// Shuffle entries, reindex devices within each kind, swap terminals and
/// relabel internal nets injectively.
pub fn relabel(n: &Netlist, rng: &mut ChaCha8Rng) -> Netlist {
    let mut labels: Vec<u32> = (1..1000).collect();
    labels.shuffle(rng);
    let index_maps: Vec<Vec<u32>> = (0..4)
        .map(|_| {
            let mut v: Vec<u32> = (0..50).collect();
            v.shuffle(rng);
            v
        })
        .collect();
    let map = |x: NodeId| match x {
        NodeId::Internal(i) => NodeId::Internal(labels[i as usize]),
        p => p,
    };
    let mut entries: Vec<Entry> = n
        .entries()
        .iter()
        .map(|e| {
            let k = e.device.kind.ordinal();
            let dev = Device::new(e.device.kind, index_maps[k][e.device.index as usize]);
            let (a, b) = (map(e.terminals[0]), map(e.terminals[1]));
            if rng.gen_bool(0.5) {
                Entry::new(dev, b, a)
            } else {
                Entry::new(dev, a, b)
            }
        })
        .collect();
    entries.shuffle(rng);
    Netlist::new(entries).unwrap()
}

/// Check that canonical keys partition every netlist of at most three
/// devices exactly as brute-force isomorphism does. Returns the number of
/// netlists visited.
pub fn check_exhaustive_small_space() -> usize {
    let nodes = universe();
    let mut kinds_edges = Vec::new();
    for k in 0..4 {
        for i in 0..nodes.len() {
            for j in i..nodes.len() {
                kinds_edges.push((k, nodes[i], nodes[j]));
            }
        }
    }
    let m = kinds_edges.len();
    let mut key_to_form: HashMap<CanonicalKey, Vec<(usize, u32, u32)>> = HashMap::new();
    let mut form_to_key: HashMap<Vec<(usize, u32, u32)>, CanonicalKey> = HashMap::new();
    let mut netlists = 0usize;
    let mut visit = |edges: &[(usize, NodeId, NodeId)]| {
        let key = canonical_key(&build(edges));
        let form = brute_force_form(edges);
        if let Some(f) = key_to_form.get(&key) {
            assert_eq!(f, &form, "one key covers two isomorphism classes: {edges:?}");
        } else {
            key_to_form.insert(key.clone(), form.clone());
        }
        if let Some(k) = form_to_key.get(&form) {
            assert_eq!(k, &key, "one isomorphism class has two keys: {edges:?}");
        } else {
            form_to_key.insert(form, key);
        }
        netlists += 1;
    };
    for a in 0..m {
        visit(&[kinds_edges[a]]);
        for b in a..m {
            visit(&[kinds_edges[a], kinds_edges[b]]);
            for c in b..m {
                visit(&[kinds_edges[a], kinds_edges[b], kinds_edges[c]]);
            }
        }
    }
    assert_eq!(key_to_form.len(), form_to_key.len());
    netlists
}

/// Key equality across `transforms` relabelings of `count` random netlists
/// with 4 to 6 devices.
pub fn check_relabel_invariance(count: usize, transforms: usize, seed: u64) {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    for _ in 0..count {
        let size = rng.gen_range(4..=6);
        let n = random_netlist(size, &mut rng);
        let key = canonical_key(&n);
        for _ in 0..transforms {
            let m = relabel(&n, &mut rng);
            assert_eq!(canonical_key(&m), key, "{}\n{}", emit_triple_list(&n), emit_triple_list(&m));
        }
    }
}
