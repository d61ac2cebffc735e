//! Relabeling-invariant topology keys.
//!
//! A netlist is viewed as an edge-labelled multigraph over its nets: each
//! device is an undirected edge labelled by its kind. Every device model is
//! symmetric in its two explicit terminals, so terminal order is not part
//! of the topology. Sorting the edge list removes device order and device indices, so
//! the only freedom left is the labelling of internal nets. External ports
//! keep fixed colours. Internal nets are ordered by colour refinement and
//! the remaining ties are broken by an individualization search that keeps
//! the lexicographically smallest sorted edge list. Automorphisms found
//! along the way prune equivalent branches.

use std::fmt;

use super::{ComponentKind, Netlist, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalKey(Vec<u8>);

impl CanonicalKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

type Edge = (u8, u16, u16);

const PORT_COLORS: u32 = 5;

struct Graph {
    /// Edges as (kind, vertex, vertex).
    edges: Vec<(u8, usize, usize)>,
    /// For each vertex, incident (kind, role, other vertex).
    adj: Vec<Vec<(u8, u8, usize)>>,
    /// Fixed label of port vertices.
    port: Vec<Option<u32>>,
}

impl Graph {
    fn new(n: &Netlist) -> Graph {
        let nodes = n.nodes();
        let idx = |x: &NodeId| nodes.binary_search(x).unwrap();
        let mut adj = vec![Vec::new(); nodes.len()];
        let mut edges = Vec::with_capacity(n.len());
        for e in n.entries() {
            let k = e.device.kind.ordinal() as u8;
            let (a, b) = (idx(&e.terminals[0]), idx(&e.terminals[1]));
            edges.push((k, a, b));
            adj[a].push((k, 0, b));
            adj[b].push((k, 0, a));
        }
        let port = nodes
            .iter()
            .map(|x| match x {
                NodeId::Port(p) => Some(*p as u32),
                NodeId::Internal(_) => None,
            })
            .collect();
        Graph { edges, adj, port }
    }

    fn len(&self) -> usize {
        self.port.len()
    }

    fn initial_colors(&self) -> Vec<u32> {
        self.port.iter().map(|p| p.unwrap_or(PORT_COLORS)).collect()
    }

    /// Refine to an equitable colouring. Colours are ranks of sorted
    /// signatures, so they depend only on structure, never on input labels.
    fn refine(&self, colors: &mut Vec<u32>) {
        let mut classes = count_classes(colors);
        loop {
            let sigs: Vec<(u32, Vec<(u8, u8, u32)>)> = (0..self.len())
                .map(|v| {
                    let mut nb: Vec<(u8, u8, u32)> = self.adj[v]
                        .iter()
                        .map(|&(k, r, o)| (k, r, colors[o]))
                        .collect();
                    nb.sort_unstable();
                    (colors[v], nb)
                })
                .collect();
            let mut sorted: Vec<&(u32, Vec<(u8, u8, u32)>)> = sigs.iter().collect();
            sorted.sort();
            sorted.dedup();
            let next: Vec<u32> = sigs
                .iter()
                .map(|s| sorted.binary_search(&s).unwrap() as u32)
                .collect();
            let n = sorted.len();
            *colors = next;
            if n == classes {
                return;
            }
            classes = n;
        }
    }

    /// Sorted edge list under the labelling implied by a discrete colouring.
    fn certificate(&self, colors: &[u32]) -> Vec<Edge> {
        let label = |v: usize| -> u16 {
            match self.port[v] {
                Some(p) => p as u16,
                None => colors[v] as u16 + PORT_COLORS as u16,
            }
        };
        let mut out: Vec<Edge> = self
            .edges
            .iter()
            .map(|&(k, a, b)| {
                let (x, y) = (label(a), label(b));
                (k, x.min(y), x.max(y))
            })
            .collect();
        out.sort_unstable();
        out
    }
}

fn count_classes(colors: &[u32]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

/// Smallest colour class with more than one vertex.
fn target_cell(colors: &[u32]) -> Option<Vec<usize>> {
    let mut by_color: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (v, c) in colors.iter().enumerate() {
        by_color.entry(*c).or_default().push(v);
    }
    by_color.into_values().find(|cell| cell.len() > 1)
}

fn individualize(colors: &[u32], v: usize) -> Vec<u32> {
    let c = colors[v];
    colors
        .iter()
        .enumerate()
        .map(|(u, &x)| if x > c || (x == c && u != v) { x + 1 } else { x })
        .collect()
}

struct Search<'a> {
    g: &'a Graph,
    best: Option<(Vec<Edge>, Vec<u32>)>,
    first: Option<(Vec<Edge>, Vec<u32>)>,
    automorphisms: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn leaf(&mut self, colors: Vec<u32>) {
        let cert = self.g.certificate(&colors);
        for seen in [&self.first, &self.best].into_iter().flatten() {
            if seen.0 == cert {
                let auto = compose_leaves(&seen.1, &colors);
                self.automorphisms.push(auto);
                break;
            }
        }
        if self.first.is_none() {
            self.first = Some((cert.clone(), colors.clone()));
        }
        match &self.best {
            Some((b, _)) if *b <= cert => {}
            _ => self.best = Some((cert, colors)),
        }
    }

    fn descend(&mut self, colors: Vec<u32>, fixed: &mut Vec<usize>) {
        let Some(cell) = target_cell(&colors) else {
            self.leaf(colors);
            return;
        };
        let mut tried: Vec<usize> = Vec::new();
        for &v in &cell {
            if !tried.is_empty() && self.in_orbit_of(v, &tried, fixed) {
                continue;
            }
            let mut next = individualize(&colors, v);
            self.g.refine(&mut next);
            fixed.push(v);
            self.descend(next, fixed);
            fixed.pop();
            tried.push(v);
        }
    }

    /// Whether an automorphism fixing `fixed` pointwise maps some tried
    /// vertex onto `v`.
    fn in_orbit_of(&self, v: usize, tried: &[usize], fixed: &[usize]) -> bool {
        let n = self.g.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for a in &self.automorphisms {
            if fixed.iter().all(|&f| a[f] == f) {
                for (x, &y) in a.iter().enumerate() {
                    let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
                    parent[rx] = ry;
                }
            }
        }
        let rv = find(&mut parent, v);
        tried.iter().any(|&t| find(&mut parent, t) == rv)
    }
}

/// Vertex map sending each vertex of leaf `a` to the vertex with the same
/// canonical label in leaf `b`.
fn compose_leaves(a: &[u32], b: &[u32]) -> Vec<usize> {
    let mut inv_b = vec![0usize; b.len()];
    for (v, &c) in b.iter().enumerate() {
        inv_b[c as usize] = v;
    }
    a.iter().map(|&c| inv_b[c as usize]).collect()
}

pub fn canonical_key(n: &Netlist) -> CanonicalKey {
    let g = Graph::new(n);
    let mut colors = g.initial_colors();
    g.refine(&mut colors);
    let mut search = Search {
        g: &g,
        best: None,
        first: None,
        automorphisms: Vec::new(),
    };
    search.descend(colors, &mut Vec::new());
    let cert = search.best.map(|b| b.0).unwrap_or_default();
    CanonicalKey(render(&cert).into_bytes())
}

fn render(cert: &[Edge]) -> String {
    let node = |l: u16| -> String {
        if (l as u32) < PORT_COLORS {
            super::Port::ALL[l as usize].name().to_string()
        } else {
            format!("n{}", l as u32 - PORT_COLORS)
        }
    };
    cert.iter()
        .map(|&(k, a, b)| format!("{}({},{})", ComponentKind::ALL[k as usize].prefix(), node(a), node(b)))
        .collect::<Vec<_>>()
        .join(";")
}
