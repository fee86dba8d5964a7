use std::ops::Range;

/// Offsets of graphs packed into one disjoint union: contiguous node rows, and
/// one row-major `n×n` adjacency block per graph in a flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    nodes: Vec<usize>,
    blocks: Vec<usize>,
}

impl Layout {
    pub fn new(sizes: &[usize]) -> Self {
        let mut nodes = Vec::with_capacity(sizes.len() + 1);
        let mut blocks = Vec::with_capacity(sizes.len() + 1);
        let (mut n, mut b) = (0, 0);
        nodes.push(0);
        blocks.push(0);
        for &s in sizes {
            n += s;
            b += s * s;
            nodes.push(n);
            blocks.push(b);
        }
        Layout { nodes, blocks }
    }

    /// Number of graphs.
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn size(&self, g: usize) -> usize {
        self.nodes[g + 1] - self.nodes[g]
    }

    pub fn nodes(&self, g: usize) -> Range<usize> {
        self.nodes[g]..self.nodes[g + 1]
    }

    pub fn block(&self, g: usize) -> Range<usize> {
        self.blocks[g]..self.blocks[g + 1]
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes[self.len()]
    }

    pub fn total_block(&self) -> usize {
        self.blocks[self.len()]
    }

    pub fn node_offsets(&self) -> &[usize] {
        &self.nodes
    }

    pub fn block_offsets(&self) -> &[usize] {
        &self.blocks
    }
}
