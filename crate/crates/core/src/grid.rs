//! Truncated space-time lattice and value fields.

use crate::error::GridError;

/// Box `[lo, hi]` with `nodes[a]` equally spaced nodes per axis and
/// `time_steps` uniform steps over `[0, horizon]`.
///
/// Nodes are numbered lexicographically: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
    nodes: Vec<usize>,
    time_steps: usize,
    horizon: f64,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

/// Relative slack used when deciding whether a point lies in the box.
const BOX_SLACK: f64 = 1e-12;

impl GridSpec {
    pub fn new(
        lo: Vec<f64>,
        hi: Vec<f64>,
        nodes: Vec<usize>,
        time_steps: usize,
        horizon: f64,
    ) -> Result<Self, GridError> {
        let dim = lo.len();
        if dim == 0 || hi.len() != dim || nodes.len() != dim {
            return Err(GridError::Invalid(format!(
                "corner/nodes dimensions disagree: lo {}, hi {}, nodes {}",
                lo.len(),
                hi.len(),
                nodes.len()
            )));
        }
        for a in 0..dim {
            if !(lo[a].is_finite() && hi[a].is_finite() && lo[a] < hi[a]) {
                return Err(GridError::Invalid(format!(
                    "axis {a}: need finite lo < hi, got [{}, {}]",
                    lo[a], hi[a]
                )));
            }
            if nodes[a] < 3 {
                return Err(GridError::Invalid(format!(
                    "axis {a}: need at least 3 nodes, got {}",
                    nodes[a]
                )));
            }
        }
        if time_steps == 0 {
            return Err(GridError::Invalid("time steps must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GridError::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        let spacing = (0..dim)
            .map(|a| (hi[a] - lo[a]) / (nodes[a] - 1) as f64)
            .collect();
        let mut strides = vec![1; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * nodes[a + 1];
        }
        Ok(Self {
            lo,
            hi,
            nodes,
            time_steps,
            horizon,
            spacing,
            strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.iter().product()
    }

    /// Time of level `m`; level `time_steps` is exactly the horizon.
    pub fn time(&self, m: usize) -> f64 {
        if m == self.time_steps {
            self.horizon
        } else {
            m as f64 * self.dt()
        }
    }

    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.nodes[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.spacing[axis]
        }
    }

    pub fn multi_index(&self, node: usize, out: &mut [usize]) {
        let mut rem = node;
        for a in 0..self.dim() {
            out[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords(&self, node: usize, out: &mut [f64]) {
        let mut rem = node;
        for a in 0..self.dim() {
            let i = rem / self.strides[a];
            rem %= self.strides[a];
            out[a] = self.axis_coord(a, i);
        }
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords(node, &mut x);
        x
    }

    /// True when the node lies on a face of the box.
    pub fn is_boundary(&self, node: usize) -> bool {
        let mut rem = node;
        for a in 0..self.dim() {
            let i = rem / self.strides[a];
            rem %= self.strides[a];
            if i == 0 || i + 1 == self.nodes[a] {
                return true;
            }
        }
        false
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(a, &v)| {
            let slack = BOX_SLACK * (self.hi[a] - self.lo[a]);
            v >= self.lo[a] - slack && v <= self.hi[a] + slack
        })
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (a, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[a], self.hi[a]);
        }
    }

    /// Node nearest to `x` after clamping into the box.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut node = 0;
        for a in 0..self.dim() {
            let s = ((x[a] - self.lo[a]) / self.spacing[a]).round();
            let i = if s.is_nan() { 0.0 } else { s.clamp(0.0, (self.nodes[a] - 1) as f64) };
            node += i as usize * self.strides[a];
        }
        node
    }

    /// Nearest time level to `t`, clamped to `[0, time_steps]`.
    pub fn nearest_level(&self, t: f64) -> usize {
        let s = (t / self.dt()).round();
        s.clamp(0.0, self.time_steps as f64) as usize
    }

    /// Multilinear interpolation weights at `x` as `(node, weight)` pairs.
    ///
    /// `x` must lie in the closed box. Weights are nonnegative and sum to 1.
    pub fn stencil(&self, x: &[f64]) -> Result<Vec<(usize, f64)>, GridError> {
        if x.len() != self.dim() || !self.contains(x) {
            return Err(GridError::OutsideBox { point: x.to_vec() });
        }
        let dim = self.dim();
        let mut base = vec![0usize; dim];
        let mut frac = vec![0.0; dim];
        for a in 0..dim {
            let s = ((x[a] - self.lo[a]) / self.spacing[a]).clamp(0.0, (self.nodes[a] - 1) as f64);
            let mut cell = s.floor();
            let mut w = s - cell;
            // snap to a node when within rounding of one
            if w < 1e-9 {
                w = 0.0;
            } else if w > 1.0 - 1e-9 {
                w = 0.0;
                cell += 1.0;
            }
            let mut cell = cell as usize;
            if cell + 1 >= self.nodes[a] {
                cell = self.nodes[a] - 1;
                w = 0.0;
            }
            base[a] = cell;
            frac[a] = w;
        }
        let mut out = Vec::with_capacity(1 << dim);
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut node = 0;
            for a in 0..dim {
                let upper = corner >> a & 1 == 1;
                let w = if upper { frac[a] } else { 1.0 - frac[a] };
                if w == 0.0 {
                    weight = 0.0;
                    break;
                }
                weight *= w;
                node += (base[a] + usize::from(upper)) * self.strides[a];
            }
            if weight > 0.0 {
                out.push((node, weight));
            }
        }
        Ok(out)
    }

    /// Sub-box not affected by truncation: the box shrunk by `radius` per axis.
    pub fn trust_region(&self, radius: &[f64]) -> TrustRegion {
        TrustRegion {
            lo: self.lo.iter().zip(radius).map(|(l, r)| l + r).collect(),
            hi: self.hi.iter().zip(radius).map(|(h, r)| h - r).collect(),
        }
    }

    /// A grid with the same space lattice over `[0, time(m)]` with `m` steps.
    pub fn truncated_in_time(&self, m: usize) -> Result<Self, GridError> {
        Self::new(
            self.lo.clone(),
            self.hi.clone(),
            self.nodes.clone(),
            m,
            self.time(m),
        )
    }

    pub fn check_field(&self, values: &[f64]) -> Result<(), GridError> {
        if values.len() != self.num_nodes() {
            return Err(GridError::SizeMismatch {
                expected: self.num_nodes(),
                found: values.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl TrustRegion {
    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| l > h)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(a, &v)| v >= self.lo[a] - 1e-12 && v <= self.hi[a] + 1e-12)
    }
}

/// Values of one time level, one entry per spatial node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub time_index: usize,
    pub values: Vec<f64>,
}

impl ValueField {
    pub fn new(time_index: usize, values: Vec<f64>) -> Self {
        Self { time_index, values }
    }

    pub fn constant(time_index: usize, n: usize, v: f64) -> Self {
        Self::new(time_index, vec![v; n])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Multilinear interpolation of `field` at `x`, which must lie in the box.
pub fn interpolate(field: &ValueField, x: &[f64], grid: &GridSpec) -> Result<f64, GridError> {
    grid.check_field(&field.values)?;
    Ok(grid
        .stencil(x)?
        .into_iter()
        .map(|(n, w)| w * field.values[n])
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_1d() -> GridSpec {
        GridSpec::new(vec![0.0], vec![1.0], vec![2 + 1], 4, 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(vec![1.0], vec![0.0], vec![5], 1, 1.0).is_err());
        assert!(GridSpec::new(vec![0.0], vec![1.0], vec![2], 1, 1.0).is_err());
        assert!(GridSpec::new(vec![0.0], vec![1.0], vec![5], 0, 1.0).is_err());
        assert!(GridSpec::new(vec![0.0, 0.0], vec![1.0], vec![5], 3, 1.0).is_err());
    }

    #[test]
    fn lexicographic_numbering() {
        let g = GridSpec::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![3, 5], 1, 1.0).unwrap();
        assert_eq!(g.num_nodes(), 15);
        assert_eq!(g.strides(), &[5, 1]);
        assert_eq!(g.node_coords(7), vec![0.5, 1.0]);
        let mut idx = [0; 2];
        g.multi_index(13, &mut idx);
        assert_eq!(idx, [2, 3]);
        assert_eq!(g.flat_index(&idx), 13);
        assert!(g.is_boundary(0));
        assert!(!g.is_boundary(7));
        assert_eq!(g.time(1), 1.0);
    }

    #[test]
    fn interpolation_basics() {
        let g = GridSpec::new(vec![0.0], vec![1.0], vec![3], 1, 1.0).unwrap();
        let v = ValueField::new(0, vec![0.0, 0.5, 1.0]);
        assert_eq!(interpolate(&v, &[0.3], &g).unwrap(), 0.3);
        assert_eq!(interpolate(&v, &[0.5], &g).unwrap(), 0.5);
        assert!(interpolate(&v, &[1.5], &g).is_err());
        let g2 = unit_1d();
        assert_eq!(g2.nearest_node(&[0.74]), 1);
        assert_eq!(g2.nearest_node(&[7.0]), 2);
    }

    #[test]
    fn trust_region_shrinks_box() {
        let g = GridSpec::new(vec![-2.0], vec![2.0], vec![5], 1, 1.0).unwrap();
        let tr = g.trust_region(&[0.5]);
        assert_eq!(tr.lo, vec![-1.5]);
        assert!(tr.contains(&[1.5]) && !tr.contains(&[1.6]));
        assert!(g.trust_region(&[3.0]).is_empty());
    }

    proptest! {
        #[test]
        fn multilinear_is_exact_on_affine_data(
            c in -2.0..2.0f64, g0 in -2.0..2.0f64, g1 in -2.0..2.0f64,
            p0 in 0.0..1.0f64, p1 in 0.0..1.0f64, n0 in 3usize..7, n1 in 3usize..7,
        ) {
            let g = GridSpec::new(vec![-1.0, 0.0], vec![1.0, 3.0], vec![n0, n1], 1, 1.0).unwrap();
            let vals: Vec<f64> = (0..g.num_nodes())
                .map(|n| { let x = g.node_coords(n); c + g0 * x[0] + g1 * x[1] })
                .collect();
            let field = ValueField::new(0, vals.clone());
            let x = [-1.0 + 2.0 * p0, 3.0 * p1];
            let got = interpolate(&field, &x, &g).unwrap();
            prop_assert!((got - (c + g0 * x[0] + g1 * x[1])).abs() < 1e-12);
            for (n, v) in vals.iter().enumerate() {
                prop_assert_eq!(interpolate(&field, &g.node_coords(n), &g).unwrap(), *v);
            }
        }
    }
}
