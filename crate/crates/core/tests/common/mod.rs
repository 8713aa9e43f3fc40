//! Shared oracles for the integration tests and the acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hst::model::{decode_batch, encode, mse_loss, AttentionMode, ModelConfig, ModelParams};
use hst::quadtree::{PointSet, QuadTree};
use hst::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn random_points(n: usize, m: usize, seed: u64) -> PointSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let feats = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    PointSet::new(coords, feats, m, targets).unwrap()
}

/// Parameters with every tensor perturbed away from its init, so layer norm gains and
/// biases are exercised too.
pub fn jittered_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let base = ModelParams::<f64>::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = base
        .values()
        .into_iter()
        .map(|v| v.into_iter().map(|x| x + rng.random_range(-0.2..0.2)).collect())
        .collect();
    base.with_values(values, false).unwrap()
}

fn tensor_mat(t: &Tensor<f64>) -> Mat {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn row(t: &Tensor<f64>) -> Vec<f64> {
    t.data().to_vec()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|r| (0..b[0].len()).map(|j| r.iter().enumerate().map(|(p, &x)| x * b[p][j]).sum()).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> Mat {
    x.iter()
        .map(|r| {
            let d = r.len() as f64;
            let mean = r.iter().sum::<f64>() / d;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            r.iter().enumerate().map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * g[j] + b[j]).collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

fn add_bias(a: Mat, b: &[f64]) -> Mat {
    a.into_iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

struct Layer {
    ln1: (Vec<f64>, Vec<f64>),
    wq: Mat,
    wk: Mat,
    wv: Mat,
    wo: Mat,
    ln2: (Vec<f64>, Vec<f64>),
    w1: Mat,
    b1: Vec<f64>,
    w2: Mat,
    b2: Vec<f64>,
}

impl Layer {
    fn from(lp: &hst::model::LayerParams<f64>) -> Self {
        Self {
            ln1: (row(&lp.ln1_g), row(&lp.ln1_b)),
            wq: tensor_mat(&lp.wq),
            wk: tensor_mat(&lp.wk),
            wv: tensor_mat(&lp.wv),
            wo: tensor_mat(&lp.wo),
            ln2: (row(&lp.ln2_g), row(&lp.ln2_b)),
            w1: tensor_mat(&lp.w1),
            b1: row(&lp.b1),
            w2: tensor_mat(&lp.w2),
            b2: row(&lp.b2),
        }
    }

    fn ffn_residual(&self, h: &Mat) -> Mat {
        let x = layer_norm(h, &self.ln2.0, &self.ln2.1);
        let mid: Mat = add_bias(matmul(&x, &self.w1), &self.b1).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
        add(h, &add_bias(matmul(&mid, &self.w2), &self.b2))
    }
}

/// Multi-head attention of each query over its own list of key rows.
fn attend(q: &Mat, k: &Mat, v: &Mat, keys: &[Vec<usize>], heads: usize) -> Mat {
    let d = q[0].len();
    let dh = d / heads;
    q.iter()
        .zip(keys)
        .map(|(qi, ks)| {
            let mut out = vec![0.0; d];
            for h in 0..heads {
                let c = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = ks.iter().map(|&r| dot(&qi[c.clone()], &k[r][c.clone()]) / (dh as f64).sqrt()).collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for (w, &r) in e.iter().zip(ks) {
                    for j in c.clone() {
                        out[j] += w / z * v[r][j];
                    }
                }
            }
            out
        })
        .collect()
}

/// Tree facts recomputed from the raw cell links.
struct TreeView {
    n: usize,
    /// Point rows beneath each cell.
    subtree: Vec<Vec<usize>>,
    leaf: Vec<usize>,
}

impl TreeView {
    fn new(tree: &QuadTree<f64>) -> Self {
        let n = tree.num_points();
        let cells = tree.cells();
        let mut leaf = vec![usize::MAX; n];
        for c in cells.iter().filter(|c| c.is_leaf()) {
            for &p in tree.leaf_points(c.id) {
                leaf[p] = c.id;
            }
        }
        fn collect(tree: &QuadTree<f64>, c: usize, out: &mut Vec<usize>) {
            let cell = tree.cell(c);
            if cell.is_leaf() {
                out.extend_from_slice(tree.leaf_points(c));
            }
            for ch in cell.children.iter().flatten() {
                collect(tree, *ch, out);
            }
        }
        let subtree = (0..cells.len())
            .map(|c| {
                let mut v = Vec::new();
                collect(tree, c, &mut v);
                v
            })
            .collect();
        Self { n, subtree, leaf }
    }

    /// Rows of the ancestor siblings of cell `c`, walking upward.
    fn ancestor_siblings(&self, tree: &QuadTree<f64>, mut c: usize, out: &mut Vec<usize>) {
        while let Some(p) = tree.cell(c).parent {
            for ch in tree.cell(p).children.iter().flatten() {
                if *ch != c {
                    out.push(self.n + ch);
                }
            }
            c = p;
        }
    }

    fn point_keys(&self, tree: &QuadTree<f64>, i: usize) -> Vec<usize> {
        let mut keys: Vec<usize> = tree.leaf_points(self.leaf[i]).to_vec();
        self.ancestor_siblings(tree, self.leaf[i], &mut keys);
        keys
    }

    fn location_keys(&self, tree: &QuadTree<f64>, s: [f64; 2]) -> Vec<usize> {
        let mut c = 0;
        loop {
            let cell = tree.cell(c);
            if cell.is_leaf() {
                let mut keys = tree.leaf_points(c).to_vec();
                self.ancestor_siblings(tree, c, &mut keys);
                return keys;
            }
            let next = cell.children.iter().flatten().copied().find(|&ch| {
                let r = tree.cell(ch).rect;
                s[0] >= r.lo[0] && s[0] < r.hi[0] && s[1] >= r.lo[1] && s[1] < r.hi[1]
            });
            match next {
                Some(ch) => c = ch,
                None => {
                    let mut keys: Vec<usize> = cell.children.iter().flatten().map(|ch| self.n + ch).collect();
                    self.ancestor_siblings(tree, c, &mut keys);
                    return keys;
                }
            }
        }
    }

    fn with_cells(&self, h_o: &Mat) -> Mat {
        let d = h_o[0].len();
        let mut h = h_o.clone();
        for pts in &self.subtree {
            let mut mean = vec![0.0; d];
            for &p in pts {
                for j in 0..d {
                    mean[j] += h_o[p][j] / pts.len() as f64;
                }
            }
            h.push(mean);
        }
        h
    }
}

fn embed(params: &ModelParams<f64>, tree: &QuadTree<f64>, xy: &[Vec<f64>], coords: &[[f64; 2]]) -> Mat {
    let w = tensor_mat(&params.embed);
    let b = tree.bounds();
    let side = (b.hi[0] - b.lo[0]).max(b.hi[1] - b.lo[1]);
    let dim = params.pos.dim();
    let scale = (2.0 / dim as f64).sqrt();
    xy.iter()
        .zip(coords)
        .map(|(v, s)| {
            let u = [(s[0] - b.lo[0]) / side, (s[1] - b.lo[1]) / side];
            let mut r: Vec<f64> = w.iter().map(|wr| dot(wr, v)).collect();
            for f in params.pos.frequencies() {
                let a = f[0] * u[0] + f[1] * u[1];
                r.push(scale * a.cos());
                r.push(scale * a.sin());
            }
            r
        })
        .collect()
}

/// Scalar-loop forward pass of the hierarchical model: predictions and `|K q|^2` per query.
pub fn oracle_predict(
    params: &ModelParams<f64>,
    points: &PointSet<f64>,
    query_feats: &[Vec<f64>],
    query_locs: &[[f64; 2]],
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(params.config.mode, AttentionMode::Hierarchical);
    let heads = params.config.heads;
    let tree = QuadTree::build(points, params.config.leaf_capacity).unwrap();
    let view = TreeView::new(&tree);
    let n = points.len();
    let xy: Mat = (0..n)
        .map(|i| {
            let mut v = points.features_of(i).to_vec();
            v.push(points.target(i));
            v
        })
        .collect();
    let mut h_o = embed(params, &tree, &xy, points.coords());
    let point_keys: Vec<Vec<usize>> = (0..n).map(|i| view.point_keys(&tree, i)).collect();
    for lp in &params.enc {
        let l = Layer::from(lp);
        let x = layer_norm(&view.with_cells(&h_o), &l.ln1.0, &l.ln1.1);
        let q = matmul(&x[..n].to_vec(), &l.wq);
        let a = matmul(&attend(&q, &matmul(&x, &l.wk), &matmul(&x, &l.wv), &point_keys, heads), &l.wo);
        h_o = l.ffn_residual(&add(&h_o, &a));
    }
    let memory = layer_norm(&view.with_cells(&h_o), &row(&params.mem_g), &row(&params.mem_b));

    let qxy: Mat = query_feats
        .iter()
        .map(|f| {
            let mut v = f.clone();
            v.push(params.query_target_fill);
            v
        })
        .collect();
    let mut h = embed(params, &tree, &qxy, query_locs);
    let keys: Vec<Vec<usize>> = query_locs.iter().map(|&s| view.location_keys(&tree, s)).collect();
    let mut last_q = Vec::new();
    for lp in &params.dec {
        let l = Layer::from(lp);
        let x = layer_norm(&h, &l.ln1.0, &l.ln1.1);
        let q = matmul(&x, &l.wq);
        let a = matmul(&attend(&q, &matmul(&memory, &l.wk), &matmul(&memory, &l.wv), &keys, heads), &l.wo);
        h = l.ffn_residual(&add(&h, &a));
        last_q = q;
    }
    let out = layer_norm(&h, &row(&params.out_g), &row(&params.out_b));
    let hw = row(&params.head_w);
    let hb = params.head_b.data()[0];
    let y = out.iter().map(|r| dot(r, &hw) + hb).collect();
    let kq = last_q
        .iter()
        .zip(&keys)
        .map(|(q, ks)| ks.iter().map(|&r| dot(&memory[r], q).powi(2)).sum())
        .collect();
    (y, kq)
}

/// Mean squared error of decoding `queries` against `context`, as a graph.
pub fn model_loss(params: &ModelParams<f64>, context: &PointSet<f64>, queries: &PointSet<f64>) -> Tensor<f64> {
    let tree = QuadTree::build(context, params.config.leaf_capacity).unwrap();
    let state = encode(params, context, &tree).unwrap();
    let out = decode_batch(params, &state, queries.features(), queries.coords()).unwrap();
    mse_loss(&out.y, queries.targets()).unwrap()
}

/// Relative error with a floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest relative error between backward gradients and central differences over
/// every parameter entry, with the name of the worst tensor.
pub fn model_fd_check(params: &ModelParams<f64>, context: &PointSet<f64>, queries: &PointSet<f64>) -> (f64, String) {
    let tracked = params.trainable();
    model_loss(&tracked, context, queries).backward().unwrap();
    let grads = tracked.grads();
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let base = params.values();
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[t][i] += delta;
                model_loss(&params.with_values(v, false).unwrap(), context, queries).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let e = rel_err(g[i], fd);
            if e > worst.0 {
                worst = (e, format!("{}[{i}]", names[t]));
            }
        }
    }
    worst
}

/// Largest relative error of one op's input gradients against central differences.
/// The loss is `sum(out * probe)` with a fixed probe.
pub fn op_fd_check(inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>) -> f64 {
    let probe_loss = |out: &Tensor<f64>| {
        let probe: Vec<f64> = (0..out.numel()).map(|i| (0.7 * i as f64 + 0.3).sin()).collect();
        out.mul(&Tensor::new(probe, out.shape()).unwrap()).unwrap().sum()
    };
    let tracked: Vec<Tensor<f64>> = inputs.iter().map(|t| t.to_param()).collect();
    probe_loss(&f(&tracked)).backward().unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (k, t) in tracked.iter().enumerate() {
        let g = t.grad_or_zeros();
        for i in 0..t.numel() {
            let eval = |delta: f64| {
                let xs: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let mut d = x.data().to_vec();
                        if j == k {
                            d[i] += delta;
                        }
                        Tensor::new(d, x.shape()).unwrap()
                    })
                    .collect();
                probe_loss(&f(&xs)).item()
            };
            worst = worst.max(rel_err(g[i], (eval(h) - eval(-h)) / (2.0 * h)));
        }
    }
    worst
}

/// Configuration used by the end-to-end gradient and oracle checks.
pub fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        enc_layers: 2,
        dec_layers: 2,
        feature_dim: 2,
        leaf_capacity: 3,
        length_scale: 0.3,
        seed,
        ..ModelConfig::default()
    }
}
