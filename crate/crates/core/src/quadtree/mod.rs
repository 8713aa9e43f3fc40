//! Quadtree spatial index over irregular 2D points.
//!
//! Cells are internal nodes, point samples are external nodes hanging off leaf cells.
//! Node matrices used by the model put point rows first and cell rows after them,
//! see [`QuadTree::row_of`].

mod keys;
mod points;
mod pooling;
mod tree;

pub use keys::{KeySetTable, NodeId, PAD};
pub use points::{bounding_square, PointSet, Quadrant, Rect};
pub use pooling::PoolingMatrix;
pub use tree::{Cell, CellKind, QuadTree, MAX_LEVELS};
