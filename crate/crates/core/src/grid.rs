//! Uniform spatial grids over a single chart box.
//!
//! Nodes are the interior points of the box: along an axis with extent
//! `[a, b]` and `N` points the spacing is `(b - a) / (N + 1)` and node `k`
//! sits at `a + (k + 1) h`. The walls carry homogeneous Dirichlet data.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("spatial dimension must be 1, 2 or 3, got {0}")]
    Dimension(usize),
    #[error("axis {axis}: need at least 4 grid points, got {points}")]
    TooCoarse { axis: usize, points: usize },
    #[error("axis {axis}: extent [{lo}, {hi}] has no positive length")]
    Extent { axis: usize, lo: f64, hi: f64 },
    #[error("finite-difference order must be one of 2, 4, 6, 8, got {0}")]
    Order(usize),
    #[error("time step must be positive, got {0}")]
    TimeStep(f64),
    #[error("expected {expected} per-axis entries, got {found}")]
    AxisCount { expected: usize, found: usize },
}

/// Per-axis sampling of a chart.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    dims: [usize; 3],
    lower: [f64; 3],
    spacing: [f64; 3],
    order: usize,
}

impl Grid {
    pub fn new(extent: &[(f64, f64)], points: &[usize], order: usize) -> Result<Grid, GridError> {
        let n = extent.len();
        if !(1..=3).contains(&n) {
            return Err(GridError::Dimension(n));
        }
        if points.len() != n {
            return Err(GridError::AxisCount {
                expected: n,
                found: points.len(),
            });
        }
        if ![2, 4, 6, 8].contains(&order) {
            return Err(GridError::Order(order));
        }
        let mut dims = [1; 3];
        let mut lower = [0.0; 3];
        let mut spacing = [1.0; 3];
        for (axis, (&(lo, hi), &pts)) in extent.iter().zip(points).enumerate() {
            if pts < 4 {
                return Err(GridError::TooCoarse { axis, points: pts });
            }
            if !(hi > lo) {
                return Err(GridError::Extent { axis, lo, hi });
            }
            let h = (hi - lo) / (pts + 1) as f64;
            dims[axis] = pts;
            lower[axis] = lo + h;
            spacing[axis] = h;
        }
        Ok(Grid {
            n,
            dims,
            lower,
            spacing,
            order,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.n]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn with_order(&self, order: usize) -> Result<Grid, GridError> {
        if ![2, 4, 6, 8].contains(&order) {
            return Err(GridError::Order(order));
        }
        Ok(Grid {
            order,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.n].iter().product()
    }

    /// Flat index stride of an axis (axis 0 is contiguous).
    pub fn stride(&self, axis: usize) -> usize {
        self.dims[..axis].iter().product()
    }

    /// Coordinate of node `k` along `axis`; `k` may be negative or past the
    /// last node to address wall and ghost positions.
    pub fn axis_coord(&self, axis: usize, k: f64) -> f64 {
        self.lower[axis] + k * self.spacing[axis]
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        [
            idx % self.dims[0],
            (idx / self.dims[0]) % self.dims[1],
            idx / (self.dims[0] * self.dims[1]),
        ]
    }

    pub fn flat_index(&self, m: [usize; 3]) -> usize {
        m[0] + self.dims[0] * (m[1] + self.dims[1] * m[2])
    }

    /// Position of a node, padded with zeros beyond `n`.
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 3];
        for (axis, xa) in x.iter_mut().enumerate().take(self.n) {
            *xa = self.axis_coord(axis, m[axis] as f64);
        }
        x
    }

    /// Neighbour `offset` steps along `axis`, or `None` past a wall.
    pub fn neighbour(&self, idx: usize, axis: usize, offset: isize) -> Option<usize> {
        let m = self.multi_index(idx);
        let k = m[axis] as isize + offset;
        if k < 0 || k >= self.dims[axis] as isize {
            return None;
        }
        Some((idx as isize + offset * self.stride(axis) as isize) as usize)
    }

    /// Distance in cells from a node to the nearest wall.
    pub fn wall_distance(&self, idx: usize) -> usize {
        let m = self.multi_index(idx);
        (0..self.n)
            .map(|a| m[a].min(self.dims[a] - 1 - m[a]))
            .min()
            .unwrap_or(0)
    }
}

/// Real scalar samples on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: &Grid) -> GridField {
        GridField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    /// Maximum of `|value - target|` over nodes at least `margin` cells from
    /// the walls.
    pub fn max_deviation_interior(&self, target: f64, margin: usize) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.wall_distance(*i) >= margin)
            .map(|(_, v)| (v - target).abs())
            .fold(0.0, f64::max)
    }
}

/// Second-order derivative along `axis` of grid samples: central inside,
/// one-sided at the walls.
pub fn fd_derivative(grid: &Grid, values: &[f64], axis: usize) -> Vec<f64> {
    let h = grid.spacing(axis);
    let n = grid.dims()[axis];
    (0..values.len())
        .map(|idx| {
            let k = grid.multi_index(idx)[axis];
            let at = |off: isize| values[grid.neighbour(idx, axis, off).expect("in range")];
            if k == 0 {
                (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
            } else if k == n - 1 {
                (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
            } else {
                (at(1) - at(-1)) / (2.0 * h)
            }
        })
        .collect()
}
