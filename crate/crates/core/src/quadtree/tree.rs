use super::points::{bounding_square, PointSet, Quadrant, Rect};
use crate::{HstError, Real, Result};

/// Cells deeper than this are never split; a leaf at the cap may exceed the capacity.
pub const MAX_LEVELS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Internal,
    Leaf,
}

/// A quadtree cell (internal node). Point samples are the external nodes and hang
/// off leaf cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell<T> {
    pub id: usize,
    pub level: usize,
    pub rect: Rect<T>,
    pub parent: Option<usize>,
    pub children: [Option<usize>; 4],
    pub kind: CellKind,
    /// Number of points in this cell's subtree.
    pub point_count: usize,
}

impl<T> Cell<T> {
    pub fn is_leaf(&self) -> bool {
        self.kind == CellKind::Leaf
    }

    pub fn child_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.children.iter().flatten().copied()
    }
}

/// Quadtree over a point set. Cells are numbered in level order, children in NW, NE,
/// SW, SE order, so ids are stable for a given input.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadTree<T> {
    cells: Vec<Cell<T>>,
    leaf_points: Vec<Vec<usize>>,
    point_leaf: Vec<usize>,
    capacity: usize,
    depth: usize,
}

impl<T: Real> QuadTree<T> {
    /// Recursively split the bounding square into four equal cells until every cell
    /// holds at most `capacity` points or all of its points coincide. Empty quadrants get no cell.
    pub fn build(points: &PointSet<T>, capacity: usize) -> Result<Self> {
        Self::from_coords(points.coords(), capacity)
    }

    pub fn from_coords(coords: &[[T; 2]], capacity: usize) -> Result<Self> {
        if coords.is_empty() {
            return Err(HstError::EmptyPointSet);
        }
        if capacity == 0 {
            return Err(HstError::InvalidCapacity);
        }
        let lo = coords.iter().fold([T::infinity(); 2], |a, c| [a[0].min(c[0]), a[1].min(c[1])]);
        let hi = coords.iter().fold([T::neg_infinity(); 2], |a, c| [a[0].max(c[0]), a[1].max(c[1])]);
        let root_rect = bounding_square(Rect::new(lo, hi));

        let n = coords.len();
        let mut cells = vec![Cell {
            id: 0,
            level: 0,
            rect: root_rect,
            parent: None,
            children: [None; 4],
            kind: CellKind::Leaf,
            point_count: n,
        }];
        let mut members: Vec<Vec<usize>> = vec![(0..n).collect()];
        let mut leaf_points: Vec<Vec<usize>> = Vec::new();
        let mut point_leaf = vec![0usize; n];
        let mut depth = 1;

        // Children are appended behind the cursor, so this walks the tree breadth-first.
        let mut id = 0;
        while id < cells.len() {
            let pts = std::mem::take(&mut members[id]);
            let level = cells[id].level;
            depth = depth.max(level + 1);
            let coincident = pts.iter().all(|&p| coords[p] == coords[pts[0]]);
            if pts.len() <= capacity || level + 1 >= MAX_LEVELS || coincident {
                for &p in &pts {
                    point_leaf[p] = id;
                }
                leaf_points.push(pts);
                id += 1;
                continue;
            }
            leaf_points.push(Vec::new());
            cells[id].kind = CellKind::Internal;
            let rect = cells[id].rect;
            let mut buckets: [Vec<usize>; 4] = Default::default();
            for p in pts {
                buckets[rect.quadrant_of(coords[p]).index()].push(p);
            }
            for q in Quadrant::ALL {
                let bucket = std::mem::take(&mut buckets[q.index()]);
                if bucket.is_empty() {
                    continue;
                }
                let child = cells.len();
                cells.push(Cell {
                    id: child,
                    level: level + 1,
                    rect: rect.quadrant(q),
                    parent: Some(id),
                    children: [None; 4],
                    kind: CellKind::Leaf,
                    point_count: bucket.len(),
                });
                members.push(bucket);
                cells[id].children[q.index()] = Some(child);
            }
            id += 1;
        }

        Ok(Self { cells, leaf_points, point_leaf, capacity, depth })
    }

    pub fn cells(&self) -> &[Cell<T>] {
        &self.cells
    }

    pub fn cell(&self, id: usize) -> &Cell<T> {
        &self.cells[id]
    }

    pub fn root(&self) -> &Cell<T> {
        &self.cells[0]
    }

    /// Root bounding square; every indexed point lies inside it.
    pub fn bounds(&self) -> Rect<T> {
        self.cells[0].rect
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of cell levels (root is level 0).
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Levels including the external (point) level below the deepest leaf cell.
    pub fn num_levels(&self) -> usize {
        self.depth + 1
    }

    pub fn num_points(&self) -> usize {
        self.point_leaf.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Total node count `N`: points plus cells.
    pub fn num_nodes(&self) -> usize {
        self.num_points() + self.num_cells()
    }

    /// Points stored directly in `cell` (empty for internal cells), ascending.
    pub fn leaf_points(&self, cell: usize) -> &[usize] {
        &self.leaf_points[cell]
    }

    pub fn leaf_of(&self, point: usize) -> usize {
        self.point_leaf[point]
    }

    /// Cells from `cell` up to and including the root.
    pub fn path_to_root(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(Some(cell), move |&c| self.cells[c].parent)
    }

    /// Descend from the root to the deepest cell containing `s`.
    ///
    /// This is a leaf whenever `s` falls inside a materialised leaf. If `s` lands in
    /// an empty quadrant, the internal cell whose empty child would own `s` is returned.
    pub fn locate(&self, s: [T; 2]) -> Result<usize> {
        if !s[0].is_finite() || !s[1].is_finite() || !self.bounds().contains_closed(s) {
            return Err(HstError::OutOfBounds { x: s[0].as_f64(), y: s[1].as_f64() });
        }
        let mut id = 0;
        loop {
            let cell = &self.cells[id];
            if cell.is_leaf() {
                return Ok(id);
            }
            match cell.children[cell.rect.quadrant_of(s).index()] {
                Some(child) => id = child,
                None => return Ok(id),
            }
        }
    }

    /// Points in the subtree of every cell, indexed by cell id.
    pub fn subtree_points(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cells.len()];
        for p in 0..self.num_points() {
            for c in self.path_to_root(self.point_leaf[p]) {
                out[c].push(p);
            }
        }
        out
    }
}
