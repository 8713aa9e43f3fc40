use proptest::prelude::*;

use hst::quadtree::{NodeId, QuadTree};

fn descendants(tree: &QuadTree<f64>, c: usize, out: &mut Vec<usize>) {
    let cell = tree.cell(c);
    if cell.is_leaf() {
        out.extend_from_slice(tree.leaf_points(c));
    }
    for ch in cell.children.iter().flatten() {
        descendants(tree, *ch, out);
    }
}

fn assert_partition(tree: &QuadTree<f64>, keys: &[NodeId]) -> Result<(), TestCaseError> {
    let mut seen = vec![0u32; tree.num_points()];
    for k in keys {
        match *k {
            NodeId::Point(p) => seen[p] += 1,
            NodeId::Cell(c) => {
                let mut pts = Vec::new();
                descendants(tree, c, &mut pts);
                for p in pts {
                    seen[p] += 1;
                }
            }
        }
    }
    prop_assert!(seen.iter().all(|&s| s == 1), "coverage counts {:?}", seen);
    Ok(())
}

fn coords_strategy() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0).prop_map(|(x, y)| [x, y]), 1..300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn point_key_sets_partition_the_points(coords in coords_strategy(), m in prop::sample::select(vec![1usize, 2, 5, 20])) {
        let tree = QuadTree::from_coords(&coords, m).unwrap();
        for i in 0..coords.len() {
            assert_partition(&tree, &tree.key_set(i).unwrap())?;
        }
    }

    #[test]
    fn location_key_sets_partition_the_points(
        coords in coords_strategy(),
        m in prop::sample::select(vec![1usize, 2, 5, 20]),
        s in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let tree = QuadTree::from_coords(&coords, m).unwrap();
        let s = tree.bounds().clamp([s.0, s.1]);
        assert_partition(&tree, &tree.key_set_for_location(s).unwrap())?;
    }

    #[test]
    fn clustered_and_duplicate_points_still_partition(
        base in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..6),
        reps in 1usize..40,
    ) {
        let coords: Vec<[f64; 2]> = base.iter().flat_map(|&(x, y)| (0..reps).map(move |k| [x, y + k as f64 * 1e-9])).collect();
        let tree = QuadTree::from_coords(&coords, 2).unwrap();
        for i in 0..coords.len() {
            assert_partition(&tree, &tree.key_set(i).unwrap())?;
        }
    }
}
