//! Token vocabulary for netlist-plus-duty sequences.
//!
//! A sequence is `(KIND IDX NODE NODE SEP)* DUTY EOS` with at most
//! [`MAX_ENTRIES`] entries.

use crate::netlist::{ComponentKind, Device, DutyCycle, Entry, Netlist, NodeId, Port};

use super::PolicyError;

pub type Token = usize;

pub const KIND0: Token = 0;
pub const IDX0: Token = 4;
pub const MAX_INDEX: usize = 10;
pub const NODE0: Token = IDX0 + MAX_INDEX;
pub const MAX_INTERNAL: u32 = 10;
pub const NODES: usize = 5 + MAX_INTERNAL as usize;
pub const SEP: Token = NODE0 + NODES;
pub const DUTY0: Token = SEP + 1;
pub const EOS: Token = DUTY0 + 5;
pub const VOCAB: usize = EOS + 1;

pub const MAX_ENTRIES: usize = 10;
pub const MAX_LEN: usize = MAX_ENTRIES * 5 + 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct TokenSequence(pub Vec<Token>);

pub fn node_token(n: NodeId) -> Result<Token, PolicyError> {
    match n {
        NodeId::Port(p) => Ok(NODE0 + p as usize),
        NodeId::Internal(k) if (1..=MAX_INTERNAL).contains(&k) => Ok(NODE0 + 4 + k as usize),
        NodeId::Internal(k) => Err(PolicyError::OutOfVocabulary(format!("internal node {k}"))),
    }
}

pub fn token_node(t: Token) -> Option<NodeId> {
    if !(NODE0..NODE0 + NODES).contains(&t) {
        return None;
    }
    let i = t - NODE0;
    Some(if i < 5 {
        NodeId::Port(Port::ALL[i])
    } else {
        NodeId::Internal((i - 4) as u32)
    })
}

pub fn token_name(t: Token) -> String {
    match t {
        t if t < IDX0 => ComponentKind::ALL[t - KIND0].prefix().to_string(),
        t if t < NODE0 => format!("#{}", t - IDX0),
        t if t < SEP => format!("@{}", token_node(t).unwrap()),
        SEP => ";".to_string(),
        t if t < EOS => format!("D{}", DutyCycle::VALUES[t - DUTY0]),
        EOS => "<eos>".to_string(),
        _ => format!("<{t}>"),
    }
}

/// Entries in netlist order, then the duty and end tokens.
pub fn tokenize(n: &Netlist, d: DutyCycle) -> Result<TokenSequence, PolicyError> {
    if n.len() > MAX_ENTRIES {
        return Err(PolicyError::OutOfVocabulary(format!("{} devices", n.len())));
    }
    let mut out = Vec::with_capacity(n.len() * 5 + 2);
    for e in n.entries() {
        if e.device.index as usize >= MAX_INDEX {
            return Err(PolicyError::OutOfVocabulary(e.device.to_string()));
        }
        out.push(KIND0 + e.device.kind.ordinal());
        out.push(IDX0 + e.device.index as usize);
        out.push(node_token(e.terminals[0])?);
        out.push(node_token(e.terminals[1])?);
        out.push(SEP);
    }
    out.push(DUTY0 + d.index());
    out.push(EOS);
    Ok(TokenSequence(out))
}

pub fn detokenize(ts: &TokenSequence) -> Result<(Netlist, DutyCycle), PolicyError> {
    let bad = |at: usize| PolicyError::MalformedSequence(format!("unexpected token at {at}"));
    let t = &ts.0;
    let mut entries = Vec::new();
    let mut i = 0;
    while i < t.len() && t[i] < IDX0 {
        if i + 5 > t.len() {
            return Err(bad(t.len()));
        }
        let kind = ComponentKind::ALL[t[i]];
        if !(IDX0..NODE0).contains(&t[i + 1]) {
            return Err(bad(i + 1));
        }
        let a = token_node(t[i + 2]).ok_or_else(|| bad(i + 2))?;
        let b = token_node(t[i + 3]).ok_or_else(|| bad(i + 3))?;
        if t[i + 4] != SEP {
            return Err(bad(i + 4));
        }
        entries.push(Entry::new(Device::new(kind, (t[i + 1] - IDX0) as u32), a, b));
        i += 5;
    }
    if entries.len() > MAX_ENTRIES {
        return Err(PolicyError::MalformedSequence("too many entries".into()));
    }
    if i + 2 != t.len() || !(DUTY0..EOS).contains(&t[i]) || t[i + 1] != EOS {
        return Err(bad(i));
    }
    let duty = DutyCycle::from_index(t[i] - DUTY0).unwrap();
    let netlist =
        Netlist::new(entries).map_err(|e| PolicyError::MalformedSequence(e.to_string()))?;
    Ok((netlist, duty))
}
