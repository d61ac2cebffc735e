//! `[['FET-A-2','5','0'], ...]` list-of-triples netlist text.

use super::{Device, Entry, Netlist, NetlistError, NodeId};

#[derive(Debug, PartialEq)]
enum Tok {
    Open,
    Close,
    Comma,
    Str(String),
}

fn lex(text: &str) -> Result<Vec<Tok>, NetlistError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((pos, c)) = chars.next() {
        match c {
            '[' => out.push(Tok::Open),
            ']' => out.push(Tok::Close),
            ',' => out.push(Tok::Comma),
            '\'' | '"' => {
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some((_, q)) if q == c => break,
                        Some((_, ch)) => s.push(ch),
                        None => {
                            return Err(NetlistError::MalformedSyntax(format!(
                                "unterminated string at byte {pos}"
                            )))
                        }
                    }
                }
                out.push(Tok::Str(s));
            }
            c if c.is_whitespace() => {}
            other => {
                return Err(NetlistError::MalformedSyntax(format!(
                    "unexpected `{other}` at byte {pos}"
                )))
            }
        }
    }
    Ok(out)
}

pub fn parse_triple_list(text: &str) -> Result<Netlist, NetlistError> {
    let toks = lex(text)?;
    let bad = |msg: &str| NetlistError::MalformedSyntax(msg.to_string());
    let mut it = toks.into_iter().peekable();
    if it.next() != Some(Tok::Open) {
        return Err(bad("expected `[`"));
    }
    let mut entries = Vec::new();
    if it.peek() == Some(&Tok::Close) {
        it.next();
    } else {
        loop {
            if it.next() != Some(Tok::Open) {
                return Err(bad("expected `[` opening a triple"));
            }
            let mut fields = Vec::new();
            loop {
                match it.next() {
                    Some(Tok::Str(s)) => fields.push(s),
                    _ => return Err(bad("expected quoted name")),
                }
                match it.next() {
                    Some(Tok::Comma) => continue,
                    Some(Tok::Close) => break,
                    _ => return Err(bad("expected `,` or `]` inside triple")),
                }
            }
            entries.push(entry_from_fields(fields)?);
            match it.next() {
                Some(Tok::Comma) => continue,
                Some(Tok::Close) => break,
                _ => return Err(bad("expected `,` or `]` after triple")),
            }
        }
    }
    if it.next().is_some() {
        return Err(bad("trailing input after list"));
    }
    Netlist::new(entries)
}

fn entry_from_fields(fields: Vec<String>) -> Result<Entry, NetlistError> {
    let device: Device = fields[0].parse()?;
    let expected = device.kind.explicit_ports();
    if fields.len() - 1 != expected {
        return Err(NetlistError::ArityMismatch {
            device: fields[0].clone(),
            expected,
            found: fields.len() - 1,
        });
    }
    let a: NodeId = fields[1].parse()?;
    let b: NodeId = fields[2].parse()?;
    Ok(Entry::new(device, a, b))
}

pub fn emit_triple_list(n: &Netlist) -> String {
    let body: Vec<String> = n
        .entries()
        .iter()
        .map(|e| format!("['{}','{}','{}']", e.device, e.terminals[0], e.terminals[1]))
        .collect();
    format!("[{}]", body.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{ComponentKind, Port};

    const COMPONENT_ROW: &str =
        "[['FET-A-2','5','0'],['FET-B-0','5','OUT'],['FET-A-1','0','IN'],['FET-A-0','5','OUT']]";

    #[test]
    fn parses_component_constraint_row() {
        let n = parse_triple_list(COMPONENT_ROW).unwrap();
        assert_eq!(n.len(), 4);
        assert_eq!(n.internal_nodes(), vec![NodeId::Internal(5)]);
        let externals: Vec<NodeId> = n.nodes().into_iter().filter(|x| !x.is_internal()).collect();
        assert_eq!(
            externals,
            vec![NodeId::Port(Port::In), NodeId::Port(Port::Out), NodeId::Port(Port::Gnd)]
        );
        assert_eq!(n.entries()[0].device, Device::new(ComponentKind::FetA, 2));
        assert_eq!(emit_triple_list(&n), COMPONENT_ROW);
    }

    #[test]
    fn accepts_whitespace_and_double_quotes() {
        let n = parse_triple_list("[ [\"capacitor-0\", 'IN' , '0'] ,\n ['inductor-1','IN','3'] ]").unwrap();
        assert_eq!(emit_triple_list(&n), "[['capacitor-0','IN','0'],['inductor-1','IN','3']]");
    }

    #[test]
    fn empty_list() {
        let n = parse_triple_list("[]").unwrap();
        assert!(n.is_empty());
        assert_eq!(emit_triple_list(&n), "[]");
    }

    #[test]
    fn mislabeled_node_netlist() {
        let n = parse_triple_list(
            "[['FET-B-1','IN','6'],['FET-A-0','0','IN'],['FET-B-0','OUT','7'],['inductor-0','6','7']]",
        )
        .unwrap();
        assert_eq!(n.len(), 4);
        assert_eq!(n.internal_nodes(), vec![NodeId::Internal(6), NodeId::Internal(7)]);
    }

    #[test]
    fn emits_corrected_netlist() {
        let text = "[['FET-B-1','IN','6'],['FET-A-0','0','IN'],['FET-B-0','OUT','0'],['inductor-0','6','OUT']]";
        let spaced = "[['FET-B-1', 'IN', '6'], \n ['FET-A-0', '0', 'IN'], \n ['FET-B-0', 'OUT', '0'], \n ['inductor-0', '6', 'OUT']]";
        assert_eq!(emit_triple_list(&parse_triple_list(spaced).unwrap()), text);
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(
            parse_triple_list("[['FET-A-0','IN','0']"),
            Err(NetlistError::MalformedSyntax(_))
        ));
        assert!(matches!(
            parse_triple_list("[['resistor-0','IN','0']]"),
            Err(NetlistError::UnknownDeviceName(_))
        ));
        assert!(matches!(
            parse_triple_list("[['FET-A-0','IN','0','OUT']]"),
            Err(NetlistError::ArityMismatch { expected: 2, found: 3, .. })
        ));
        assert!(matches!(
            parse_triple_list("[['FET-A-0','IN']]"),
            Err(NetlistError::ArityMismatch { expected: 2, found: 1, .. })
        ));
        assert!(matches!(
            parse_triple_list("[['FET-A-0','IN','0'],['FET-A-0','OUT','0']]"),
            Err(NetlistError::DuplicateDevice(_))
        ));
        assert!(matches!(
            parse_triple_list("[['FET-A-0','IN','VDD']]"),
            Err(NetlistError::UnknownNode(_))
        ));
        assert!(matches!(parse_triple_list("[] x"), Err(NetlistError::MalformedSyntax(_))));
    }
}
