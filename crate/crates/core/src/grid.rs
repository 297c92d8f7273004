//! Piecewise-linear functions on a grid of nodes.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 2 nodes, got {0}")]
    EmptyGrid(usize),
    #[error("interval [{a}, {b}] is empty")]
    BadInterval { a: f64, b: f64 },
    #[error("node coordinates must be strictly increasing (index {0})")]
    Unsorted(usize),
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("nodes and values differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// A continuous piecewise-linear function given by its nodal values.
///
/// Built on a uniform grid, but nodes may be inserted later (chord
/// replacement, clipping), so the node spacing is not assumed constant.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

/// Nodes `a + i (b - a) / (n - 1)`, with both endpoints exact.
pub fn uniform_nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / (n - 1) as f64;
    let mut xs: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
    xs[n - 1] = b;
    xs
}

impl GridFunction {
    pub fn uniform(a: f64, b: f64, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() < 2 {
            return Err(GridError::EmptyGrid(values.len()));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(GridError::BadInterval { a, b });
        }
        let xs = uniform_nodes(a, b, values.len());
        Self::from_nodes(xs, values)
    }

    /// Sample `f` at `n` uniform nodes on `[a, b]`.
    pub fn sample(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        if n < 2 {
            return Err(GridError::EmptyGrid(n));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(GridError::BadInterval { a, b });
        }
        let xs = uniform_nodes(a, b, n);
        let ys = xs.iter().map(|&x| f(x)).collect();
        Self::from_nodes(xs, ys)
    }

    pub fn from_nodes(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, GridError> {
        if xs.len() != ys.len() {
            return Err(GridError::LengthMismatch(xs.len(), ys.len()));
        }
        if xs.len() < 2 {
            return Err(GridError::EmptyGrid(xs.len()));
        }
        for i in 1..xs.len() {
            if !(xs[i] > xs[i - 1]) {
                return Err(GridError::Unsorted(i));
            }
        }
        if let Some(i) = xs
            .iter()
            .zip(&ys)
            .position(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(GridError::NonFinite(i));
        }
        Ok(GridFunction { xs, ys })
    }

    pub fn a(&self) -> f64 {
        self.xs[0]
    }

    pub fn b(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.ys
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.xs, self.ys)
    }

    pub fn cells(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn cell_width(&self, i: usize) -> f64 {
        self.xs[i + 1] - self.xs[i]
    }

    pub fn cell_slope(&self, i: usize) -> f64 {
        (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
    }

    pub fn cell_midpoint(&self, i: usize) -> f64 {
        0.5 * (self.xs[i] + self.xs[i + 1])
    }

    /// Index of the cell containing `x` (clamped to the domain).
    pub fn locate(&self, x: f64) -> usize {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0;
        }
        if x >= self.xs[n - 1] {
            return n - 2;
        }
        // first node strictly greater than x
        let j = self.xs.partition_point(|&xi| xi <= x);
        j - 1
    }

    /// Piecewise-linear interpolation, clamped outside `[a, b]`.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.locate(x);
        if x == self.xs[i] {
            return self.ys[i];
        }
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
    }

    /// Cell slopes `(u_{i+1} - u_i) / (x_{i+1} - x_i)`.
    pub fn slopes(&self) -> Vec<f64> {
        (0..self.cells()).map(|i| self.cell_slope(i)).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.ys.iter().fold(0.0, |m, y| m.max(y.abs()))
    }

    /// Insert a node at `x` (no-op if it already is a node, or lies within
    /// `tol` of one). Returns the node index.
    pub fn insert_node(&mut self, x: f64, tol: f64) -> usize {
        let i = self.locate(x);
        if (x - self.xs[i]).abs() <= tol {
            return i;
        }
        if (x - self.xs[i + 1]).abs() <= tol {
            return i + 1;
        }
        let y = self.eval(x);
        self.xs.insert(i + 1, x);
        self.ys.insert(i + 1, y);
        i + 1
    }

    /// Discrete `L²` norm of the derivative, exact for the interpolant.
    pub fn derivative_l2(&self) -> f64 {
        (0..self.cells())
            .map(|i| {
                let s = self.cell_slope(i);
                s * s * self.cell_width(i)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Sup-norm distance between two functions, evaluated at the nodes of both.
    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        let d1 = self
            .xs
            .iter()
            .zip(&self.ys)
            .fold(0.0f64, |m, (&x, &y)| m.max((y - other.eval(x)).abs()));
        other
            .xs
            .iter()
            .zip(&other.ys)
            .fold(d1, |m, (&x, &y)| m.max((y - self.eval(x)).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            GridFunction::uniform(0.0, 1.0, vec![1.0]).unwrap_err(),
            GridError::EmptyGrid(1)
        );
        assert!(matches!(
            GridFunction::uniform(1.0, 1.0, vec![0.0, 0.0]),
            Err(GridError::BadInterval { .. })
        ));
        assert_eq!(
            GridFunction::uniform(0.0, 1.0, vec![0.0, f64::NAN]).unwrap_err(),
            GridError::NonFinite(1)
        );
        assert_eq!(
            GridFunction::from_nodes(vec![0.0, 0.5, 0.5], vec![0.0; 3]).unwrap_err(),
            GridError::Unsorted(2)
        );
    }

    #[test]
    fn interpolates_and_inserts() {
        let mut g = GridFunction::sample(0.0, 1.0, 3, |x| x * x).unwrap();
        assert_eq!(g.eval(0.25), 0.125);
        assert_eq!(g.eval(-1.0), 0.0);
        assert_eq!(g.eval(2.0), 1.0);
        let i = g.insert_node(0.75, 1e-12);
        assert_eq!(i, 2);
        assert_eq!(g.nodes(), &[0.0, 0.5, 0.75, 1.0]);
        assert_eq!(g.values()[3], 1.0);
        assert_eq!(g.values()[2], 0.625);
        assert_eq!(g.insert_node(0.5, 1e-12), 1);
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn slopes_of_quadratic_are_midpoint_derivatives() {
        let g = GridFunction::sample(0.0, 1.0, 11, |x| x * x).unwrap();
        for (i, s) in g.slopes().into_iter().enumerate() {
            assert!((s - 2.0 * g.cell_midpoint(i)).abs() < 1e-12);
        }
    }
}
