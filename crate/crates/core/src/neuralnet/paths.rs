//! Turns a graph into the token sequences the autoencoder reads.

use super::model::Vocabulary;
use super::NnError;
use crate::scdg::Scdg;

/// Up to `K` token sequences; an empty sequence is all padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathBatch {
    paths: Vec<Vec<usize>>,
}

impl PathBatch {
    pub fn new(paths: Vec<Vec<usize>>) -> Self {
        if paths.is_empty() {
            return PathBatch::padding();
        }
        PathBatch { paths }
    }

    pub fn padding() -> Self {
        PathBatch {
            paths: vec![Vec::new()],
        }
    }

    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of non-padding steps.
    pub fn steps(&self) -> usize {
        self.paths.iter().map(Vec::len).sum()
    }
}

/// Maximal simple paths of `g`, depth first.
///
/// Starts are the nodes of in-degree zero (every node when there is none),
/// in node-id order. Successors are tried in ascending id order and a node is
/// never revisited within one path. A path is emitted when it cannot be
/// extended or reaches `max_len` nodes; enumeration stops after `max_paths`.
pub fn graph_paths(g: &Scdg, max_paths: usize, max_len: usize) -> Vec<Vec<usize>> {
    let n = g.node_count();
    if n == 0 || max_paths == 0 || max_len == 0 {
        return Vec::new();
    }
    let indeg = g.in_degrees();
    let mut starts: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    if starts.is_empty() {
        starts = (0..n).collect();
    }
    let succ: Vec<Vec<usize>> = (0..n).map(|v| g.successors(v).collect()).collect();

    let mut out = Vec::new();
    let mut on_path = vec![false; n];
    let mut path = Vec::with_capacity(max_len);
    for s in starts {
        if out.len() == max_paths {
            break;
        }
        dfs(s, &succ, max_paths, max_len, &mut on_path, &mut path, &mut out);
    }
    out
}

fn dfs(
    v: usize,
    succ: &[Vec<usize>],
    max_paths: usize,
    max_len: usize,
    on_path: &mut [bool],
    path: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    on_path[v] = true;
    path.push(v);
    let mut extended = false;
    if path.len() < max_len {
        for &w in &succ[v] {
            if out.len() == max_paths {
                break;
            }
            if !on_path[w] {
                extended = true;
                dfs(w, succ, max_paths, max_len, on_path, path, out);
            }
        }
    }
    if !extended && out.len() < max_paths {
        out.push(path.clone());
    }
    path.pop();
    on_path[v] = false;
}

/// Token sequences for the encoder, one per selected path.
pub fn graph_to_paths(
    g: &Scdg,
    vocab: &Vocabulary,
    max_paths: usize,
    max_len: usize,
) -> Result<PathBatch, NnError> {
    let tokens: Vec<usize> = (0..g.node_count())
        .map(|v| {
            vocab
                .index_of(g.label(v))
                .ok_or_else(|| NnError::UnknownLabel(g.label(v).to_string()))
        })
        .collect::<Result<_, _>>()?;
    let paths = graph_paths(g, max_paths, max_len)
        .into_iter()
        .map(|p| p.into_iter().map(|v| tokens[v]).collect())
        .collect();
    Ok(PathBatch::new(paths))
}
