use super::tree::QuadTree;
use crate::{HstError, Real, Result};

/// A node of the quadtree: an indexed point (external node) or a cell (internal node).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Point(usize),
    Cell(usize),
}

/// Sentinel row for padded key slots.
pub const PAD: usize = usize::MAX;

impl<T: Real> QuadTree<T> {
    /// Row of `node` in an `N x d` node matrix: points first, cells appended.
    pub fn row_of(&self, node: NodeId) -> usize {
        match node {
            NodeId::Point(i) => i,
            NodeId::Cell(c) => self.num_points() + c,
        }
    }

    pub fn node_of_row(&self, row: usize) -> NodeId {
        if row < self.num_points() {
            NodeId::Point(row)
        } else {
            NodeId::Cell(row - self.num_points())
        }
    }

    /// Selective key set of point `i`: the point itself, its leaf-mates, then the
    /// non-empty siblings of every ancestor cell, bottom-up, in quadrant order.
    pub fn key_set(&self, i: usize) -> Result<Vec<NodeId>> {
        if i >= self.num_points() {
            return Err(HstError::IndexOutOfRange { index: i, len: self.num_points() });
        }
        let leaf = self.leaf_of(i);
        let mut keys = vec![NodeId::Point(i)];
        keys.extend(self.leaf_points(leaf).iter().filter(|&&p| p != i).map(|&p| NodeId::Point(p)));
        self.push_ancestor_siblings(leaf, &mut keys);
        Ok(keys)
    }

    /// Key set for an arbitrary location that is not an indexed point: every point
    /// of the leaf containing `s`, then the ancestor siblings as in [`Self::key_set`].
    ///
    /// If `s` falls in an empty quadrant, the enclosing cell's non-empty children take
    /// the place of the leaf's points so the set still covers every point once.
    pub fn key_set_for_location(&self, s: [T; 2]) -> Result<Vec<NodeId>> {
        let cell = self.locate(s)?;
        let mut keys: Vec<NodeId> = if self.cell(cell).is_leaf() {
            self.leaf_points(cell).iter().map(|&p| NodeId::Point(p)).collect()
        } else {
            self.cell(cell).child_ids().map(NodeId::Cell).collect()
        };
        self.push_ancestor_siblings(cell, &mut keys);
        Ok(keys)
    }

    fn push_ancestor_siblings(&self, start: usize, keys: &mut Vec<NodeId>) {
        let mut current = start;
        while let Some(parent) = self.cell(current).parent {
            keys.extend(self.cell(parent).child_ids().filter(|&c| c != current).map(NodeId::Cell));
            current = parent;
        }
    }

    /// Sum of key-set sizes over all points, without materialising the sets.
    pub fn total_key_pairs(&self) -> u64 {
        let mut total = 0u64;
        for cell in self.cells().iter().filter(|c| c.is_leaf()) {
            let occupants = self.leaf_points(cell.id).len() as u64;
            if occupants == 0 {
                continue;
            }
            let siblings: u64 = self
                .path_to_root(cell.id)
                .filter_map(|c| self.cell(c).parent.map(|p| (c, p)))
                .map(|(_, p)| self.cell(p).child_ids().count() as u64 - 1)
                .sum();
            total += occupants * (occupants + siblings);
        }
        total
    }
}

/// Per-query key rows padded to a common width, as consumed by the batched gather.
#[derive(Clone, Debug, PartialEq)]
pub struct KeySetTable {
    rows: Vec<usize>,
    mask: Vec<bool>,
    lens: Vec<usize>,
    k_max: usize,
}

impl KeySetTable {
    /// Build from explicit key-row lists. Valid entries come first in every row.
    pub fn from_rows(sets: &[Vec<usize>]) -> Self {
        let k_max = sets.iter().map(Vec::len).max().unwrap_or(0);
        let mut rows = Vec::with_capacity(sets.len() * k_max);
        let mut mask = Vec::with_capacity(sets.len() * k_max);
        for set in sets {
            rows.extend_from_slice(set);
            mask.extend(std::iter::repeat_n(true, set.len()));
            rows.extend(std::iter::repeat_n(PAD, k_max - set.len()));
            mask.extend(std::iter::repeat_n(false, k_max - set.len()));
        }
        Self { rows, mask, lens: sets.iter().map(Vec::len).collect(), k_max }
    }

    /// Key table of every indexed point of `tree`.
    pub fn for_points<T: Real>(tree: &QuadTree<T>) -> Self {
        let sets: Vec<Vec<usize>> = (0..tree.num_points())
            .map(|i| {
                tree.key_set(i)
                    .expect("point index in range")
                    .into_iter()
                    .map(|k| tree.row_of(k))
                    .collect()
            })
            .collect();
        Self::from_rows(&sets)
    }

    /// Key table for query locations that are not indexed points.
    pub fn for_locations<T: Real>(tree: &QuadTree<T>, locations: &[[T; 2]]) -> Result<Self> {
        let sets = locations
            .iter()
            .map(|&s| Ok(tree.key_set_for_location(s)?.into_iter().map(|k| tree.row_of(k)).collect()))
            .collect::<Result<Vec<Vec<usize>>>>()?;
        Ok(Self::from_rows(&sets))
    }

    pub fn num_queries(&self) -> usize {
        self.lens.len()
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Row-major `num_queries x k_max` node rows; padded slots hold [`PAD`].
    pub fn key_rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len_of(&self, query: usize) -> usize {
        self.lens[query]
    }

    /// Valid key rows of `query`.
    pub fn keys_of(&self, query: usize) -> &[usize] {
        let start = query * self.k_max;
        &self.rows[start..start + self.lens[query]]
    }

    pub fn total_pairs(&self) -> u64 {
        self.lens.iter().map(|&l| l as u64).sum()
    }
}
