//! Synthetic Motif graphs: a base graph carrying the environment, joined by one
//! bridge edge to a motif whose type alone fixes the label.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError};

pub const NUM_CLASSES: usize = 3;

/// Node-count ranges (inclusive, motif included) of the small/middle/large
/// environments used for size shift.
pub const SIZE_BUCKETS: [(&str, usize, usize); 3] =
    [("small", 10, 20), ("middle", 30, 40), ("large", 60, 90)];

const MOTIF_NODES: usize = 5;
const FEATURE_NOISE: f32 = 0.1;

/// Node count and undirected edge list (`i < j`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub num_nodes: usize,
    pub edges: Vec<[usize; 2]>,
}

impl Topology {
    fn new(num_nodes: usize) -> Self {
        Topology {
            num_nodes,
            edges: Vec::new(),
        }
    }

    fn link(&mut self, a: usize, b: usize) {
        self.edges.push([a.min(b), a.max(b)]);
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &[i, j] in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Wheel,
    Tree,
    Ladder,
    Star,
    Path,
}

impl BaseKind {
    pub const ALL: [BaseKind; 5] = [
        BaseKind::Wheel,
        BaseKind::Tree,
        BaseKind::Ladder,
        BaseKind::Star,
        BaseKind::Path,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaseKind::Wheel => "wheel",
            BaseKind::Tree => "tree",
            BaseKind::Ladder => "ladder",
            BaseKind::Star => "star",
            BaseKind::Path => "path",
        }
    }

    pub fn min_size(self) -> usize {
        match self {
            BaseKind::Wheel | BaseKind::Ladder => 4,
            _ => 2,
        }
    }

    fn accepts(self, size: usize) -> bool {
        size >= self.min_size() && (self != BaseKind::Ladder || size % 2 == 0)
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaseKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaseKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GraphError::Argument(format!("unknown base graph kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotifKind {
    House,
    Cycle,
    Crane,
}

impl MotifKind {
    pub const ALL: [MotifKind; 3] = [MotifKind::House, MotifKind::Cycle, MotifKind::Crane];

    pub fn label(self) -> usize {
        match self {
            MotifKind::House => 0,
            MotifKind::Cycle => 1,
            MotifKind::Crane => 2,
        }
    }

    pub fn from_label(label: usize) -> Option<Self> {
        MotifKind::ALL.get(label).copied()
    }
}

/// Builds a connected base graph of the named family.
///
/// Wheel: hub 0 joined to a rim cycle. Ladder: two rails of `size / 2` nodes
/// with rungs. Star: hub 0 plus leaves. Path: a chain. Tree: node `i` attaches
/// to a uniformly chosen earlier node.
pub fn make_base_graph<R: Rng>(
    kind: BaseKind,
    size: usize,
    rng: &mut R,
) -> Result<Topology, GraphError> {
    if !kind.accepts(size) {
        return Err(GraphError::Argument(format!(
            "{kind} needs at least {} nodes{}, got {size}",
            kind.min_size(),
            if kind == BaseKind::Ladder { " (even)" } else { "" }
        )));
    }
    let mut t = Topology::new(size);
    match kind {
        BaseKind::Wheel => {
            for i in 1..size {
                t.link(0, i);
            }
            for i in 1..size - 1 {
                t.link(i, i + 1);
            }
            t.link(1, size - 1);
        }
        BaseKind::Tree => {
            for i in 1..size {
                let parent = rng.gen_range(0..i);
                t.link(parent, i);
            }
        }
        BaseKind::Ladder => {
            let half = size / 2;
            for i in 0..half - 1 {
                t.link(i, i + 1);
                t.link(half + i, half + i + 1);
            }
            for i in 0..half {
                t.link(i, half + i);
            }
        }
        BaseKind::Star => {
            for i in 1..size {
                t.link(0, i);
            }
        }
        BaseKind::Path => {
            for i in 0..size - 1 {
                t.link(i, i + 1);
            }
        }
    }
    Ok(t)
}

/// Five-node motif. House: 4-cycle 0-1-2-3 with apex 4 on the 0-1 side.
/// Cycle: a 5-ring. Crane: triangle 0-1-2 with pendant path 2-3-4.
pub fn make_motif(kind: MotifKind) -> Topology {
    let mut t = Topology::new(MOTIF_NODES);
    let pairs: &[(usize, usize)] = match kind {
        MotifKind::House => &[(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)],
        MotifKind::Cycle => &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)],
        MotifKind::Crane => &[(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)],
    };
    for &(a, b) in pairs {
        t.link(a, b);
    }
    t
}

/// One environment of the generator: graphs whose base is drawn from `bases`
/// with a base size in `base_sizes` (inclusive), `per_class` graphs per label.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub tag: String,
    pub bases: Vec<BaseKind>,
    pub base_sizes: (usize, usize),
    pub per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotifConfig {
    pub envs: Vec<EnvSpec>,
    pub feature_dim: usize,
    pub seed: u64,
}

impl MotifConfig {
    /// Base-graph shift: wheel/tree/ladder for training, star for validation,
    /// path for testing.
    pub fn base_shift(
        train_per_class: usize,
        eval_per_class: usize,
        base_sizes: (usize, usize),
        feature_dim: usize,
        seed: u64,
    ) -> Self {
        let env = |kind: BaseKind, per_class| EnvSpec {
            tag: kind.as_str().to_owned(),
            bases: vec![kind],
            base_sizes,
            per_class,
        };
        MotifConfig {
            envs: vec![
                env(BaseKind::Wheel, train_per_class),
                env(BaseKind::Tree, train_per_class),
                env(BaseKind::Ladder, train_per_class),
                env(BaseKind::Star, eval_per_class),
                env(BaseKind::Path, eval_per_class),
            ],
            feature_dim,
            seed,
        }
    }

    /// Size shift over [`SIZE_BUCKETS`]; every base family appears in every bucket.
    pub fn size_shift(
        train_per_class: usize,
        eval_per_class: usize,
        feature_dim: usize,
        seed: u64,
    ) -> Self {
        let envs = SIZE_BUCKETS
            .iter()
            .enumerate()
            .map(|(i, &(tag, lo, hi))| EnvSpec {
                tag: tag.to_owned(),
                bases: BaseKind::ALL.to_vec(),
                base_sizes: (lo - MOTIF_NODES, hi - MOTIF_NODES),
                per_class: if i == 0 { train_per_class } else { eval_per_class },
            })
            .collect();
        MotifConfig {
            envs,
            feature_dim,
            seed,
        }
    }

    /// Desk-scale base-shift default: 900 / 150 / 150 graphs.
    pub fn desk_base(seed: u64) -> Self {
        Self::base_shift(100, 50, (4, 10), 4, seed)
    }

    pub fn total_graphs(&self) -> usize {
        self.envs.iter().map(|e| e.per_class * NUM_CLASSES).sum()
    }

    fn validate(&self) -> Result<(), GraphError> {
        if self.feature_dim == 0 {
            return Err(GraphError::Argument("feature_dim must be at least 1".into()));
        }
        if self.envs.is_empty() {
            return Err(GraphError::Argument("no environments configured".into()));
        }
        for env in &self.envs {
            let (lo, hi) = env.base_sizes;
            if env.per_class == 0 {
                return Err(GraphError::Argument(format!(
                    "env {:?}: per-class count must be at least 1",
                    env.tag
                )));
            }
            if env.bases.is_empty() || lo > hi {
                return Err(GraphError::Argument(format!(
                    "env {:?}: empty base list or size range",
                    env.tag
                )));
            }
            for &kind in &env.bases {
                if !(lo..=hi).any(|s| kind.accepts(s)) {
                    return Err(GraphError::Argument(format!(
                        "env {:?}: no valid {kind} size in {lo}..={hi}",
                        env.tag
                    )));
                }
            }
        }
        Ok(())
    }
}

fn sample_base_size<R: Rng>(kind: BaseKind, (lo, hi): (usize, usize), rng: &mut R) -> usize {
    let valid: Vec<usize> = (lo..=hi).filter(|&s| kind.accepts(s)).collect();
    *valid.choose(rng).expect("validated size range")
}

/// Generates every graph of every environment, in environment / class order.
/// All randomness comes from one `ChaCha8Rng` seeded with `config.seed`.
pub fn generate_motif_dataset(config: &MotifConfig) -> Result<Vec<Graph>, GraphError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut graphs = Vec::with_capacity(config.total_graphs());
    for env in &config.envs {
        for motif in MotifKind::ALL {
            for _ in 0..env.per_class {
                let kind = *env.bases.choose(&mut rng).expect("validated bases");
                let size = sample_base_size(kind, env.base_sizes, &mut rng);
                let base = make_base_graph(kind, size, &mut rng)?;
                let id = graphs.len();
                graphs.push(compose(
                    id,
                    &base,
                    motif,
                    &env.tag,
                    config.feature_dim,
                    &mut rng,
                ));
            }
        }
    }
    Ok(graphs)
}

fn compose<R: Rng>(
    id: usize,
    base: &Topology,
    motif: MotifKind,
    env: &str,
    feature_dim: usize,
    rng: &mut R,
) -> Graph {
    let offset = base.num_nodes;
    let shape = make_motif(motif);
    let num_nodes = offset + shape.num_nodes;
    let mut edges = base.edges.clone();
    edges.extend(shape.edges.iter().map(|&[i, j]| [i + offset, j + offset]));
    let bridge_base = rng.gen_range(0..offset);
    let bridge_motif = offset + rng.gen_range(0..shape.num_nodes);
    edges.push([bridge_base, bridge_motif]);
    edges.sort_unstable();

    let features = (0..num_nodes)
        .map(|_| {
            (0..feature_dim)
                .map(|_| 1.0 + rng.gen_range(-FEATURE_NOISE..=FEATURE_NOISE))
                .collect()
        })
        .collect();
    let causal_nodes = (0..num_nodes).map(|i| i >= offset).collect();
    Graph {
        id,
        num_nodes,
        edges,
        features,
        label: motif.label(),
        env: env.to_owned(),
        causal_nodes,
    }
}
