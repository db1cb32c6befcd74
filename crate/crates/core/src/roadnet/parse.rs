use std::fmt::Write as _;

use roxmltree::{Document, Node};

use super::{RoadEdge, RoadGraph, RoadNode, RoadnetError};
use crate::geometry::Vec2;

fn line_of(doc: &Document<'_>, node: &Node<'_, '_>) -> u32 {
    doc.text_pos_at(node.range().start).row
}

fn attr<'a>(
    doc: &Document<'_>,
    node: &Node<'a, '_>,
    element: &'static str,
    attribute: &'static str,
) -> Result<&'a str, RoadnetError> {
    node.attribute(attribute).ok_or_else(|| RoadnetError::MissingAttribute {
        element,
        id: node.attribute("id").unwrap_or("?").to_string(),
        line: line_of(doc, node),
        attribute,
    })
}

fn num_attr(
    doc: &Document<'_>,
    node: &Node<'_, '_>,
    element: &'static str,
    attribute: &'static str,
) -> Result<f64, RoadnetError> {
    let raw = attr(doc, node, element, attribute)?;
    raw.trim().parse::<f64>().map_err(|_| RoadnetError::InvalidValue {
        element,
        id: node.attribute("id").unwrap_or("?").to_string(),
        line: line_of(doc, node),
        attribute,
        value: raw.to_string(),
    })
}

fn bool_attr(
    doc: &Document<'_>,
    node: &Node<'_, '_>,
    element: &'static str,
    attribute: &'static str,
) -> Result<bool, RoadnetError> {
    match node.attribute(attribute) {
        None => Ok(false),
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(other) => Err(RoadnetError::InvalidValue {
            element,
            id: node.attribute("id").unwrap_or("?").to_string(),
            line: line_of(doc, node),
            attribute,
            value: other.to_string(),
        }),
    }
}

/// Parses a `<network>` XML document into a validated [`RoadGraph`].
///
/// Edges without `<pt>` children get a straight centerline between their
/// end nodes.
pub fn parse_network(text: &str) -> Result<RoadGraph, RoadnetError> {
    let doc = Document::parse(text).map_err(|e| RoadnetError::Malformed {
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "network" {
        return Err(RoadnetError::Malformed {
            line: line_of(&doc, &root),
            message: format!("expected root <network>, found <{}>", root.tag_name().name()),
        });
    }

    let mut nodes = Vec::new();
    let mut node_lines = Vec::new();
    let mut raw_edges = Vec::new();
    for child in root.children().filter(Node::is_element) {
        match child.tag_name().name() {
            "node" => {
                let id = attr(&doc, &child, "node", "id")?.to_string();
                let x = num_attr(&doc, &child, "node", "x")?;
                let y = num_attr(&doc, &child, "node", "y")?;
                node_lines.push((line_of(&doc, &child), 0));
                nodes.push(RoadNode { id, x, y });
            }
            "edge" => raw_edges.push(child),
            other => {
                return Err(RoadnetError::Malformed {
                    line: line_of(&doc, &child),
                    message: format!("unexpected element <{other}>"),
                })
            }
        }
    }

    let mut edges = Vec::with_capacity(raw_edges.len());
    let mut edge_lines = Vec::with_capacity(raw_edges.len());
    for e in raw_edges {
        let id = attr(&doc, &e, "edge", "id")?.to_string();
        let from = attr(&doc, &e, "edge", "from")?.to_string();
        let to = attr(&doc, &e, "edge", "to")?.to_string();
        let length = num_attr(&doc, &e, "edge", "length")?;
        let speed = num_attr(&doc, &e, "edge", "speed")?;
        let internal = bool_attr(&doc, &e, "edge", "internal")?;
        let is_loop = bool_attr(&doc, &e, "edge", "loop")?;
        let mut centerline = Vec::new();
        for pt in e.children().filter(Node::is_element) {
            if pt.tag_name().name() != "pt" {
                return Err(RoadnetError::Malformed {
                    line: line_of(&doc, &pt),
                    message: format!("unexpected element <{}> inside edge `{id}`", pt.tag_name().name()),
                });
            }
            centerline.push(Vec2::new(num_attr(&doc, &pt, "pt", "x")?, num_attr(&doc, &pt, "pt", "y")?));
        }
        let line = line_of(&doc, &e);
        if centerline.is_empty() {
            let lookup = |nid: &str| nodes.iter().find(|n| n.id == nid).map(RoadNode::position);
            match (lookup(&from), lookup(&to)) {
                (Some(a), Some(b)) => centerline = vec![a, b],
                (None, _) => return Err(RoadnetError::DanglingNode { edge: id, node: from, line }),
                (_, None) => return Err(RoadnetError::DanglingNode { edge: id, node: to, line }),
            }
        }
        edge_lines.push((line, 0));
        edges.push(RoadEdge { id, from, to, length, speed, centerline, internal, is_loop });
    }
    RoadGraph::with_lines(nodes, edges, &node_lines, &edge_lines)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Writes the network document. Floats use shortest round-trip formatting,
/// so parsing the output reproduces the graph exactly.
pub fn serialize_network(graph: &RoadGraph) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<network>\n");
    for n in graph.nodes() {
        let _ = writeln!(out, "  <node id=\"{}\" x=\"{:?}\" y=\"{:?}\"/>", escape(&n.id), n.x, n.y);
    }
    for e in graph.edges() {
        let _ = write!(
            out,
            "  <edge id=\"{}\" from=\"{}\" to=\"{}\" length=\"{:?}\" speed=\"{:?}\" internal=\"{}\"",
            escape(&e.id),
            escape(&e.from),
            escape(&e.to),
            e.length,
            e.speed,
            e.internal
        );
        if e.is_loop {
            out.push_str(" loop=\"true\"");
        }
        out.push_str(">\n");
        for p in &e.centerline {
            let _ = writeln!(out, "    <pt x=\"{:?}\" y=\"{:?}\"/>", p.x, p.y);
        }
        out.push_str("  </edge>\n");
    }
    out.push_str("</network>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODES: &str = r#"<network>
  <node id="a" x="0" y="0"/>
  <node id="b" x="100" y="0"/>
  <edge id="e1" from="a" to="b" length="100" speed="10">
    <pt x="0" y="0"/>
    <pt x="100" y="0"/>
  </edge>
</network>"#;

    #[test]
    fn parses_single_edge() {
        let g = parse_network(TWO_NODES).unwrap();
        assert_eq!(g.edges().len(), 1);
        let e = g.edge_ix("e1").unwrap();
        assert_eq!(g.weight(e), 10.0);
        assert!(!g.edge(e).internal);
    }

    #[test]
    fn dangling_to_reports_id_and_line() {
        let text = TWO_NODES.replace("to=\"b\"", "to=\"zz\"");
        match parse_network(&text) {
            Err(RoadnetError::DanglingNode { edge, node, line }) => {
                assert_eq!(edge, "e1");
                assert_eq!(node, "zz");
                assert_eq!(line, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_node_set_is_dangling() {
        let text = r#"<network><edge id="e" from="a" to="b" length="1" speed="1"/></network>"#;
        assert!(matches!(parse_network(text), Err(RoadnetError::DanglingNode { .. })));
    }

    #[test]
    fn nonpositive_length_and_malformed() {
        let text = TWO_NODES.replace("length=\"100\"", "length=\"-1\"");
        assert!(matches!(
            parse_network(&text),
            Err(RoadnetError::NonPositive { field: "length", line: 4, .. })
        ));
        assert!(matches!(parse_network("<network><node"), Err(RoadnetError::Malformed { .. })));
        assert!(matches!(parse_network("<graph/>"), Err(RoadnetError::Malformed { .. })));
    }

    #[test]
    fn missing_points_default_to_straight_line() {
        let text = r#"<network><node id="a" x="0" y="0"/><node id="b" x="3" y="4"/>
<edge id="e" from="a" to="b" length="5" speed="1" internal="true"/></network>"#;
        let g = parse_network(text).unwrap();
        assert!(g.edges()[0].internal);
        assert_eq!(g.edges()[0].centerline.len(), 2);
    }

    #[test]
    fn length_must_match_polyline() {
        let text = TWO_NODES.replace("length=\"100\"", "length=\"101\"");
        assert!(matches!(parse_network(&text), Err(RoadnetError::LengthMismatch { .. })));
    }
}
