use crate::{HstError, Real, Result};

/// Axis-aligned rectangle `[lo, hi)` in abstract spatial units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect<T> {
    pub lo: [T; 2],
    pub hi: [T; 2],
}

impl<T: Real> Rect<T> {
    pub fn new(lo: [T; 2], hi: [T; 2]) -> Self {
        Self { lo, hi }
    }

    pub fn mid(&self) -> [T; 2] {
        let two = T::lit(2.0);
        [(self.lo[0] + self.hi[0]) / two, (self.lo[1] + self.hi[1]) / two]
    }

    pub fn width(&self) -> T {
        self.hi[0] - self.lo[0]
    }

    pub fn height(&self) -> T {
        self.hi[1] - self.lo[1]
    }

    /// Closed containment test, used for bounding boxes.
    pub fn contains_closed(&self, s: [T; 2]) -> bool {
        s[0] >= self.lo[0] && s[0] <= self.hi[0] && s[1] >= self.lo[1] && s[1] <= self.hi[1]
    }

    /// Clamp `s` onto the rectangle.
    pub fn clamp(&self, s: [T; 2]) -> [T; 2] {
        [
            s[0].max(self.lo[0]).min(self.hi[0]),
            s[1].max(self.lo[1]).min(self.hi[1]),
        ]
    }

    /// Sub-rectangle for a quadrant; shares the split line with its neighbours so the
    /// four quadrants tile `self` exactly.
    pub fn quadrant(&self, q: Quadrant) -> Self {
        let m = self.mid();
        let (x0, x1) = if q.is_east() { (m[0], self.hi[0]) } else { (self.lo[0], m[0]) };
        let (y0, y1) = if q.is_north() { (m[1], self.hi[1]) } else { (self.lo[1], m[1]) };
        Self::new([x0, y0], [x1, y1])
    }

    /// Quadrant owning `s` under the half-open rule: coordinates on the split line go
    /// east / north.
    pub fn quadrant_of(&self, s: [T; 2]) -> Quadrant {
        let m = self.mid();
        Quadrant::from_flags(s[0] >= m[0], s[1] >= m[1])
    }
}

/// Child slot of a cell. Discriminants give the canonical NW, NE, SW, SE order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quadrant {
    NorthWest = 0,
    NorthEast = 1,
    SouthWest = 2,
    SouthEast = 3,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::NorthWest,
        Quadrant::NorthEast,
        Quadrant::SouthWest,
        Quadrant::SouthEast,
    ];

    fn from_flags(east: bool, north: bool) -> Self {
        match (north, east) {
            (true, false) => Quadrant::NorthWest,
            (true, true) => Quadrant::NorthEast,
            (false, false) => Quadrant::SouthWest,
            (false, true) => Quadrant::SouthEast,
        }
    }

    pub fn is_east(self) -> bool {
        matches!(self, Quadrant::NorthEast | Quadrant::SouthEast)
    }

    pub fn is_north(self) -> bool {
        matches!(self, Quadrant::NorthWest | Quadrant::NorthEast)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// `n` point samples: 2D location, `m` explanatory features and a scalar target each.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet<T> {
    coords: Vec<[T; 2]>,
    features: Vec<T>,
    targets: Vec<T>,
    feature_dim: usize,
    bbox: Rect<T>,
}

impl<T: Real> PointSet<T> {
    /// `features` is row-major `n x feature_dim`.
    pub fn new(coords: Vec<[T; 2]>, features: Vec<T>, feature_dim: usize, targets: Vec<T>) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(HstError::EmptyPointSet);
        }
        if feature_dim == 0 {
            return Err(HstError::InvalidArgument("feature dimension must be at least 1".into()));
        }
        if features.len() != n * feature_dim {
            return Err(HstError::Shape(format!(
                "features hold {} values, expected {n} x {feature_dim}",
                features.len()
            )));
        }
        if targets.len() != n {
            return Err(HstError::Shape(format!("{} targets for {n} points", targets.len())));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(HstError::NonFinite("coordinates"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(HstError::NonFinite("features"));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(HstError::NonFinite("targets"));
        }
        let bbox = tight_bbox(&coords);
        Ok(Self { coords, features, targets, feature_dim, bbox })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn coords(&self) -> &[[T; 2]] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> [T; 2] {
        self.coords[i]
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn features_of(&self, i: usize) -> &[T] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn target(&self, i: usize) -> T {
        self.targets[i]
    }

    pub fn bbox(&self) -> Rect<T> {
        self.bbox
    }

    /// Points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len());
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(HstError::IndexOutOfRange { index: i, len: self.len() });
            }
            coords.push(self.coords[i]);
            features.extend_from_slice(self.features_of(i));
            targets.push(self.targets[i]);
        }
        Self::new(coords, features, self.feature_dim, targets)
    }

    /// All points except those in `excluded`, order preserved.
    pub fn without(&self, excluded: &[usize]) -> Result<Self> {
        let mut drop = vec![false; self.len()];
        for &i in excluded {
            if i >= self.len() {
                return Err(HstError::IndexOutOfRange { index: i, len: self.len() });
            }
            drop[i] = true;
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !drop[i]).collect();
        self.select(&keep)
    }
}

fn tight_bbox<T: Real>(coords: &[[T; 2]]) -> Rect<T> {
    let mut lo = coords[0];
    let mut hi = coords[0];
    for c in coords {
        for k in 0..2 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    Rect::new(lo, hi)
}

/// Tight bounding square of `bbox`, widened by a relative margin of 1e-9.
pub fn bounding_square<T: Real>(bbox: Rect<T>) -> Rect<T> {
    let mut side = bbox.width().max(bbox.height());
    if side <= T::zero() {
        side = T::one();
    }
    let margin = side * T::lit(1e-9);
    let lo = [bbox.lo[0] - margin, bbox.lo[1] - margin];
    let side = side + margin + margin;
    Rect::new(lo, [lo[0] + side, lo[1] + side])
}
