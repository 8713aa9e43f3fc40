mod common;

use common::{jittered_params, model_fd_check, oracle_predict, random_points, small_config};
use hst::model::{decode_batch, encode};
use hst::quadtree::QuadTree;

#[test]
fn twelve_point_forward_matches_scalar_oracle() {
    for seed in 0..5 {
        let cfg = small_config(seed);
        let params = jittered_params(&cfg, 100 + seed);
        let points = random_points(12, 2, 200 + seed);
        let feats = vec![vec![0.3, -0.2], vec![-0.5, 0.9], vec![0.0, 0.1], vec![0.7, 0.7]];
        let tree = QuadTree::build(&points, cfg.leaf_capacity).unwrap();
        let b = tree.bounds();
        // Fractions of the bounding square: interior, near a corner, centre, opposite corner.
        let locs: Vec<[f64; 2]> = [[0.41, 0.37], [0.02, 0.97], [0.55, 0.51], [0.93, 0.06]]
            .iter()
            .map(|f| [b.lo[0] + f[0] * b.width(), b.lo[1] + f[1] * b.height()])
            .collect();
        let (y_ref, kq_ref) = oracle_predict(&params, &points, &feats, &locs);
        let state = encode(&params, &points, &tree).unwrap();
        let flat: Vec<f64> = feats.concat();
        let out = decode_batch(&params, &state, &flat, &locs).unwrap();
        for (i, p) in out.predictions(&params).iter().enumerate() {
            assert!((p.y_hat - y_ref[i]).abs() < 1e-10, "seed {seed} query {i}: {} vs {}", p.y_hat, y_ref[i]);
            assert!((p.kq_sq - kq_ref[i]).abs() < 1e-10 * kq_ref[i].abs().max(1.0), "seed {seed} query {i} kq");
        }
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let cfg = small_config(3);
    let params = jittered_params(&cfg, 7);
    let all = random_points(12, 2, 11);
    let context = all.without(&[2, 9]).unwrap();
    let queries = all.select(&[2, 9]).unwrap();
    let (worst, at) = model_fd_check(&params, &context, &queries);
    assert!(worst < 1e-4, "max relative error {worst:e} at {at}");
}
