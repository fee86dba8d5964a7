use std::fmt::Write as _;

use crate::gnn::MaskPair;
use crate::graph::Graph;

/// Gray level of a mask value: 0 maps to white, 1 to black.
pub fn gray_level(m: f32) -> u8 {
    (255.0 * (1.0 - m.clamp(0.0, 1.0))).round() as u8
}

pub fn penwidth(m: f32) -> f32 {
    0.5 + 3.0 * m.clamp(0.0, 1.0)
}

/// Undirected DOT rendering of `graph` under `masks`. Ground-truth causal nodes
/// get a double border.
pub fn render_dot(graph: &Graph, masks: &MaskPair) -> String {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "graph g{} {{", graph.id);
    let _ = writeln!(w, "  label=\"graph {} label {} env {}\";", graph.id, graph.label, graph.env);
    let _ = writeln!(w, "  node [shape=circle, style=filled, fontcolor=\"#ff0000\"];");
    for i in 0..graph.num_nodes {
        let m = masks.node_mask.data()[i];
        let g = gray_level(m);
        let border = if graph.causal_nodes[i] { ", peripheries=2" } else { "" };
        let _ = writeln!(w, "  n{i} [fillcolor=\"#{g:02x}{g:02x}{g:02x}\", tooltip=\"{m:.4}\"{border}];");
    }
    for &[a, b] in &graph.edges {
        let m = masks.edge_mask.at2(a, b);
        let _ = writeln!(w, "  n{a} -- n{b} [penwidth={:.3}];", penwidth(m));
    }
    out.push_str("}\n");
    out
}
