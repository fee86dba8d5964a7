use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BaseKind, Graph, GraphError, SIZE_BUCKETS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    #[default]
    Base,
    Size,
}

impl ShiftKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShiftKind::Base => "base",
            ShiftKind::Size => "size",
        }
    }

    /// Environment tags of the train, validation and test partitions.
    pub fn env_tags(self) -> [Vec<&'static str>; 3] {
        match self {
            ShiftKind::Base => [
                vec![
                    BaseKind::Wheel.as_str(),
                    BaseKind::Tree.as_str(),
                    BaseKind::Ladder.as_str(),
                ],
                vec![BaseKind::Star.as_str()],
                vec![BaseKind::Path.as_str()],
            ],
            ShiftKind::Size => [
                vec![SIZE_BUCKETS[0].0],
                vec![SIZE_BUCKETS[1].0],
                vec![SIZE_BUCKETS[2].0],
            ],
        }
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShiftKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(ShiftKind::Base),
            "size" => Ok(ShiftKind::Size),
            other => Err(GraphError::Argument(format!("unknown shift kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub test: Vec<Graph>,
    pub shift_kind: ShiftKind,
}

impl DatasetSplit {
    pub fn envs(graphs: &[Graph]) -> BTreeSet<&str> {
        graphs.iter().map(|g| g.env.as_str()).collect()
    }

    /// Checks the partition invariants of the shift kind.
    pub fn check(&self) -> Result<(), GraphError> {
        let [train_tags, val_tags, test_tags] = self.shift_kind.env_tags();
        for (name, part, tags) in [
            ("train", &self.train, &train_tags),
            ("val", &self.val, &val_tags),
            ("test", &self.test, &test_tags),
        ] {
            if part.is_empty() {
                return Err(GraphError::Data(format!("{name} split is empty")));
            }
            if let Some(g) = part.iter().find(|g| !tags.contains(&g.env.as_str())) {
                return Err(GraphError::Data(format!(
                    "graph {} with env {:?} in {name} split",
                    g.id, g.env
                )));
            }
        }
        if !Self::envs(&self.train).is_disjoint(&Self::envs(&self.test)) {
            return Err(GraphError::Data("train and test environments overlap".into()));
        }
        if self.shift_kind == ShiftKind::Size {
            let max_train = self.train.iter().map(|g| g.num_nodes).max().unwrap_or(0);
            let min_val = self.val.iter().map(|g| g.num_nodes).min().unwrap_or(0);
            let min_test = self.test.iter().map(|g| g.num_nodes).min().unwrap_or(0);
            if !(max_train < min_val && min_val <= min_test) {
                return Err(GraphError::Data(format!(
                    "size ordering violated: max train {max_train}, min val {min_val}, min test {min_test}"
                )));
            }
        }
        Ok(())
    }
}

/// Partitions graphs into train / validation / test by environment tag.
pub fn split_covariate(graphs: Vec<Graph>, shift_kind: ShiftKind) -> Result<DatasetSplit, GraphError> {
    let [train_tags, val_tags, test_tags] = shift_kind.env_tags();
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        shift_kind,
    };
    for g in graphs {
        let env = g.env.as_str();
        if train_tags.contains(&env) {
            split.train.push(g);
        } else if val_tags.contains(&env) {
            split.val.push(g);
        } else if test_tags.contains(&env) {
            split.test.push(g);
        } else {
            return Err(GraphError::Data(format!(
                "graph {} has env {:?}, not part of a {shift_kind} split",
                g.id, g.env
            )));
        }
    }
    for (name, part, tags) in [
        ("train", &split.train, &train_tags),
        ("validation", &split.val, &val_tags),
        ("test", &split.test, &test_tags),
    ] {
        if part.is_empty() {
            return Err(GraphError::Data(format!(
                "no graphs for the {name} split (envs {tags:?})"
            )));
        }
    }
    split.check()?;
    Ok(split)
}
