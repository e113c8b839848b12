//! Student-to-teacher block assignment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    First,
    Last,
    #[default]
    Even,
}

impl MappingKind {
    pub const ALL: [MappingKind; 3] = [MappingKind::First, MappingKind::Last, MappingKind::Even];
}

impl fmt::Display for MappingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MappingKind::First => "first",
            MappingKind::Last => "last",
            MappingKind::Even => "even",
        })
    }
}

impl FromStr for MappingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "first" => Ok(MappingKind::First),
            "last" => Ok(MappingKind::Last),
            "even" => Ok(MappingKind::Even),
            other => Err(Error::Config(format!("unknown mapping '{other}' (first, last, even)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMapping {
    kind: MappingKind,
    teacher_depth: usize,
    g: Vec<usize>,
}

impl BlockMapping {
    pub fn kind(&self) -> MappingKind {
        self.kind
    }

    pub fn student_depth(&self) -> usize {
        self.g.len()
    }

    pub fn teacher_depth(&self) -> usize {
        self.teacher_depth
    }

    /// Teacher block for student block `i`.
    pub fn teacher_block(&self, i: usize) -> usize {
        self.g[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.g
    }
}

/// `First`: `g(i) = i`. `Last`: `g(i) = n_t − n_s + i`. `Even`:
/// `g(i) = round(i·n_t/n_s)` with halves rounded down, which is `2i` when
/// `n_t = 2·n_s`.
pub fn block_mapping(kind: MappingKind, n_s: usize, n_t: usize) -> Result<BlockMapping> {
    if n_s == 0 {
        return Err(Error::Config("student depth must be positive".into()));
    }
    if n_s > n_t {
        return Err(Error::Config(format!(
            "student depth {n_s} exceeds teacher depth {n_t}"
        )));
    }
    let g = (0..n_s)
        .map(|i| match kind {
            MappingKind::First => i,
            MappingKind::Last => n_t - n_s + i,
            MappingKind::Even => {
                let (q, r) = (i * n_t / n_s, i * n_t % n_s);
                if 2 * r > n_s {
                    q + 1
                } else {
                    q
                }
            }
        })
        .collect();
    Ok(BlockMapping {
        kind,
        teacher_depth: n_t,
        g,
    })
}
