//! Dense rectangular grids for verification sweeps.

use crate::scalar::Scalar;

/// Cartesian product grid over named axes.
#[derive(Debug, Clone)]
pub struct Grid<T: Scalar> {
    pub axes: Vec<(String, Vec<T>)>,
}

impl<T: Scalar> Grid<T> {
    pub fn new() -> Self {
        Self { axes: Vec::new() }
    }

    pub fn axis(mut self, name: &str, values: Vec<T>) -> Self {
        self.axes.push((name.to_string(), values));
        self
    }

    /// Uniformly spaced axis including both endpoints.
    pub fn linear_axis(self, name: &str, lo: T, hi: T, n: usize) -> Self {
        self.axis(name, linspace(lo, hi, n))
    }

    /// Geometrically spaced axis, `lo` and `hi` positive.
    pub fn geometric_axis(self, name: &str, lo: T, hi: T, n: usize) -> Self {
        let vals = linspace(lo.ln(), hi.ln(), n)
            .into_iter()
            .map(|v| v.exp())
            .collect();
        self.axis(name, vals)
    }

    pub fn names(&self) -> Vec<&str> {
        self.axes.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Iterate all points in row-major order (last axis fastest).
    pub fn points(&self) -> GridIter<'_, T> {
        GridIter {
            grid: self,
            index: 0,
            total: self.len(),
        }
    }
}

impl<T: Scalar> Default for Grid<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub struct GridIter<'a, T: Scalar> {
    grid: &'a Grid<T>,
    index: usize,
    total: usize,
}

impl<'a, T: Scalar> Iterator for GridIter<'a, T> {
    type Item = Vec<T>;

    fn next(&mut self) -> Option<Vec<T>> {
        if self.index >= self.total {
            return None;
        }
        let mut rem = self.index;
        let mut point = vec![T::zero(); self.grid.axes.len()];
        for (slot, (_, vals)) in point.iter_mut().zip(&self.grid.axes).rev() {
            *slot = vals[rem % vals.len()];
            rem /= vals.len();
        }
        self.index += 1;
        Some(point)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total - self.index;
        (left, Some(left))
    }
}

pub fn linspace<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![(lo + hi) / T::from_f(2.0)];
    }
    let step = (hi - lo) / T::from_f((n - 1) as f64);
    (0..n).map(|i| lo + step * T::from_f(i as f64)).collect()
}
