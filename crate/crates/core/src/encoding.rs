//! Random-Fourier-feature positional encoding and initial point embeddings.
//!
//! `phi(s) = sqrt(2/d) [cos(w_1.s), sin(w_1.s), ..., cos(w_{d/2}.s), sin(w_{d/2}.s)]`
//! with `w_i ~ N(0, I / sigma^2)`, so `<phi(a), phi(b)>` is a Monte Carlo estimate of
//! `exp(-|a - b|^2 / (2 sigma^2))` and `<phi(s), phi(s)> = 1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::quadtree::{PointSet, Rect};
use crate::{HstError, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PosEncoder<T> {
    frequencies: Vec<[T; 2]>,
    length_scale: T,
    dim: usize,
    seed: u64,
}

impl<T: Real> PosEncoder<T> {
    pub fn new(dim: usize, length_scale: T, seed: u64) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(HstError::InvalidArgument(format!("encoding dimension must be even and >= 2, got {dim}")));
        }
        if !(length_scale > T::zero()) || !length_scale.is_finite() {
            return Err(HstError::InvalidArgument(format!("length scale must be positive, got {length_scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inv = T::one() / length_scale;
        let frequencies = (0..dim / 2)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [T::lit(a) * inv, T::lit(b) * inv]
            })
            .collect();
        Ok(Self { frequencies, length_scale, dim, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn length_scale(&self) -> T {
        self.length_scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Frequency rows, `dim / 2` of them.
    pub fn frequencies(&self) -> &[[T; 2]] {
        &self.frequencies
    }

    pub fn encode(&self, s: [T; 2]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.dim);
        self.encode_into(s, &mut out);
        out
    }

    pub fn encode_into(&self, s: [T; 2], out: &mut Vec<T>) {
        let scale = (T::lit(2.0) / T::from_usize_lossy(self.dim)).sqrt();
        for w in &self.frequencies {
            let (sin, cos) = (w[0] * s[0] + w[1] * s[1]).sin_cos();
            out.push(scale * cos);
            out.push(scale * sin);
        }
    }

    /// Row-major `len x dim` encodings.
    pub fn encode_all(&self, coords: &[[T; 2]]) -> Vec<T> {
        let mut out = Vec::with_capacity(coords.len() * self.dim);
        for &s in coords {
            self.encode_into(s, &mut out);
        }
        out
    }
}

/// Affine map of a bounding square onto the unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitFrame<T> {
    origin: [T; 2],
    side: T,
}

impl<T: Real> UnitFrame<T> {
    pub fn new(square: Rect<T>) -> Self {
        let side = square.width().max(square.height());
        Self { origin: square.lo, side: if side > T::zero() { side } else { T::one() } }
    }

    pub fn to_unit(&self, s: [T; 2]) -> [T; 2] {
        [(s[0] - self.origin[0]) / self.side, (s[1] - self.origin[1]) / self.side]
    }
}

/// Feature-plus-target embedding `psi(o) = W [x; y]`, `W` is `(d/2) x (m + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedParams<T> {
    pub w: Vec<T>,
    pub half_dim: usize,
    pub feature_dim: usize,
    /// Stands in for the unknown target of query points.
    pub query_target_fill: T,
}

impl<T: Real> EmbedParams<T> {
    pub fn new(w: Vec<T>, half_dim: usize, feature_dim: usize) -> Result<Self> {
        if w.len() != half_dim * (feature_dim + 1) {
            return Err(HstError::Shape(format!(
                "embedding matrix has {} values, expected {half_dim} x {}",
                w.len(),
                feature_dim + 1
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(HstError::NonFinite("embedding matrix"));
        }
        Ok(Self { w, half_dim, feature_dim, query_target_fill: T::zero() })
    }

    pub fn zeros(half_dim: usize, feature_dim: usize) -> Self {
        Self { w: vec![T::zero(); half_dim * (feature_dim + 1)], half_dim, feature_dim, query_target_fill: T::zero() }
    }
}

/// Stack `[x; y]` per point into a row-major `n x (m + 1)` matrix. Without the target
/// the last column holds `fill`.
pub fn feature_target_rows<T: Real>(points: &PointSet<T>, include_target: bool, fill: T) -> Vec<T> {
    let m = points.feature_dim();
    let mut out = Vec::with_capacity(points.len() * (m + 1));
    for i in 0..points.len() {
        out.extend_from_slice(points.features_of(i));
        out.push(if include_target { points.target(i) } else { fill });
    }
    out
}

/// Initial embeddings `H_o`: row `i` is `[W [x_i; y_i] ; phi(s_i)]`, `n x d`.
///
/// The encoder width must equal `W`'s row count, so both halves are `d/2` wide.
/// Coordinates are encoded as given; callers normalise them first if needed.
pub fn embed_points<T: Real>(
    params: &EmbedParams<T>,
    encoder: &PosEncoder<T>,
    points: &PointSet<T>,
    include_target: bool,
) -> Result<Vec<T>> {
    if params.feature_dim != points.feature_dim() {
        return Err(HstError::Shape(format!(
            "embedding expects {} features, point set has {}",
            params.feature_dim,
            points.feature_dim()
        )));
    }
    if params.half_dim != encoder.dim() {
        return Err(HstError::Shape(format!(
            "feature half has width {}, encoder produces {}",
            params.half_dim,
            encoder.dim()
        )));
    }
    let m1 = params.feature_dim + 1;
    let xy = feature_target_rows(points, include_target, params.query_target_fill);
    let d = 2 * encoder.dim();
    let mut out = Vec::with_capacity(points.len() * d);
    for i in 0..points.len() {
        let row = &xy[i * m1..(i + 1) * m1];
        for r in 0..params.half_dim {
            let w = &params.w[r * m1..(r + 1) * m1];
            out.push(w.iter().zip(row).map(|(&a, &b)| a * b).sum());
        }
        encoder.encode_into(points.coord(i), &mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn rejects_bad_config() {
        assert!(PosEncoder::<f64>::new(3, 0.1, 0).is_err());
        assert!(PosEncoder::<f64>::new(0, 0.1, 0).is_err());
        assert!(PosEncoder::<f64>::new(4, 0.0, 0).is_err());
        assert!(PosEncoder::<f64>::new(4, -1.0, 0).is_err());
    }

    #[test]
    fn seeded_determinism() {
        let a = PosEncoder::<f64>::new(64, 0.1, 7).unwrap();
        let b = PosEncoder::<f64>::new(64, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let c = PosEncoder::<f64>::new(64, 0.1, 8).unwrap();
        assert_ne!(a.frequencies(), c.frequencies());
    }

    #[test]
    fn frequency_variance_matches_length_scale() {
        let sigma = 0.25;
        let enc = PosEncoder::<f64>::new(4096, sigma, 3).unwrap();
        let vals: Vec<f64> = enc.frequencies().iter().flatten().copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        let target = 1.0 / (sigma * sigma);
        assert!((var - target).abs() / target < 0.1, "var {var} vs {target}");
    }

    #[test]
    fn self_similarity_is_one() {
        let enc = PosEncoder::<f64>::new(64, 0.3, 1).unwrap();
        let mut rng = rand::rng();
        for _ in 0..50 {
            let s = [rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0];
            let e = enc.encode(s);
            assert!((dot(&e, &e) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_length_scale_collapses_encodings() {
        let enc = PosEncoder::<f64>::new(32, 1e9, 1).unwrap();
        let a = enc.encode([0.0, 0.0]);
        let b = enc.encode([1.0, -1.0]);
        assert!((dot(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rbf_kernel_approximation() {
        let sigma = 0.3;
        let enc = PosEncoder::<f64>::new(256, sigma, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut err = 0.0;
        for _ in 0..100 {
            let a = [rng.random::<f64>(), rng.random::<f64>()];
            let b = [rng.random::<f64>(), rng.random::<f64>()];
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            let k = (-d2 / (2.0 * sigma * sigma)).exp();
            err += (dot(&enc.encode(a), &enc.encode(b)) - k).abs();
        }
        assert!(err / 100.0 < 0.1);
    }

    #[test]
    fn shift_invariance_is_exact_in_real_arithmetic() {
        let enc = PosEncoder::<f64>::new(128, 0.2, 4).unwrap();
        let a = [0.2, 0.7];
        let b = [0.5, 0.1];
        let t = [0.25, -0.125];
        let k0 = dot(&enc.encode(a), &enc.encode(b));
        let k1 = dot(&enc.encode([a[0] + t[0], a[1] + t[1]]), &enc.encode([b[0] + t[0], b[1] + t[1]]));
        assert!((k0 - k1).abs() < 1e-12);
    }

    #[test]
    fn unit_frame_maps_square() {
        let f = UnitFrame::new(Rect::new([2.0, -1.0], [6.0, 3.0]));
        assert_eq!(f.to_unit([2.0, -1.0]), [0.0, 0.0]);
        assert_eq!(f.to_unit([6.0, 3.0]), [1.0, 1.0]);
    }

    fn small_points() -> PointSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 5;
        let m = 3;
        let coords = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let feats = (0..n * m).map(|_| rng.random::<f64>() - 0.5).collect();
        let targets = (0..n).map(|_| rng.random::<f64>()).collect();
        PointSet::new(coords, feats, m, targets).unwrap()
    }

    #[test]
    fn zero_embedding_leaves_positional_half() {
        let pts = small_points();
        let enc = PosEncoder::new(4, 0.5, 2).unwrap();
        let h = embed_points(&EmbedParams::zeros(4, 3), &enc, &pts, true).unwrap();
        for i in 0..pts.len() {
            assert!(h[i * 8..i * 8 + 4].iter().all(|&v| v == 0.0));
            assert_eq!(&h[i * 8 + 4..(i + 1) * 8], enc.encode(pts.coord(i)).as_slice());
        }
    }

    #[test]
    fn embedding_matches_per_row_oracle() {
        let pts = small_points();
        let enc = PosEncoder::new(4, 0.5, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..4 * 4).map(|_| rng.random::<f64>() - 0.5).collect();
        let params = EmbedParams::new(w.clone(), 4, 3).unwrap();
        for include_target in [true, false] {
            let h = embed_points(&params, &enc, &pts, include_target).unwrap();
            for i in 0..pts.len() {
                let x = pts.features_of(i);
                let y = if include_target { pts.target(i) } else { 0.0 };
                for r in 0..4 {
                    let expect = w[r * 4] * x[0] + w[r * 4 + 1] * x[1] + w[r * 4 + 2] * x[2] + w[r * 4 + 3] * y;
                    assert!((h[i * 8 + r] - expect).abs() < 1e-14);
                }
                let s = pts.coord(i);
                for k in 0..2 {
                    let f = enc.frequencies()[k];
                    let arg = f[0] * s[0] + f[1] * s[1];
                    let scale = 0.5f64.sqrt();
                    assert!((h[i * 8 + 4 + 2 * k] - scale * arg.cos()).abs() < 1e-14);
                    assert!((h[i * 8 + 5 + 2 * k] - scale * arg.sin()).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn single_point_and_mismatch() {
        let pts = PointSet::new(vec![[0.1, 0.2]], vec![1.0, 2.0], 2, vec![3.0]).unwrap();
        let enc = PosEncoder::new(2, 0.5, 2).unwrap();
        let params = EmbedParams::new(vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        let h = embed_points(&params, &enc, &pts, true).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(&h[..2], &[1.0, 3.0]);
        let wrong = EmbedParams::<f64>::zeros(2, 3);
        assert!(embed_points(&wrong, &enc, &pts, true).is_err());
    }
}
