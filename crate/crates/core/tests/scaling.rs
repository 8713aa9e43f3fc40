use hst::harness::uniform_points;
use hst::model::count_attention_pairs;
use hst::quadtree::QuadTree;

fn pairs(n: usize, m: usize) -> u64 {
    let pts = uniform_points(n, 1, 42).unwrap();
    count_attention_pairs(&QuadTree::build(&pts, m).unwrap())
}

#[test]
fn pair_count_grows_near_linearly() {
    let ratio = pairs(4096, 20) as f64 / pairs(1024, 20) as f64;
    assert!(ratio < 4.6, "ratio {ratio}");
    assert!(ratio > 3.5, "ratio {ratio}");
}

#[test]
fn pair_count_matches_materialised_key_sets() {
    let pts = uniform_points(700, 1, 3).unwrap();
    let tree = QuadTree::build(&pts, 20).unwrap();
    let total: u64 = (0..700).map(|i| tree.key_set(i).unwrap().len() as u64).sum();
    assert_eq!(total, count_attention_pairs(&tree));
}

#[test]
fn all_pair_count_is_quadratic() {
    let a = 1024u64 * 1024;
    let b = 4096u64 * 4096;
    assert_eq!(b / a, 16);
    assert_eq!(b % a, 0);
}

/// Wall-clock timing; run with `cargo test --release -- --ignored`.
#[test]
#[ignore]
fn leaf_size_sweep_is_u_shaped() {
    use hst::harness::{bench_leaf_sizes, BenchConfig};
    let recs = bench_leaf_sizes(5000, &[10, 25, 50, 100, 200], &BenchConfig { reps: 5, ..BenchConfig::default() }).unwrap();
    let times: Vec<f64> = recs.iter().map(|r| r.time_ms.unwrap()).collect();
    let argmin = times.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!(argmin != 0 && argmin != times.len() - 1, "times {times:?}");
}
