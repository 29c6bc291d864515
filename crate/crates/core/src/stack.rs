//! Single-look complex stack container.
//!
//! Storage is acquisition-major: `data[(n, r, c)]` is acquisition `n` at
//! pixel `(r, c)`. Window extraction clips at raster borders and keeps
//! track of where the reference pixel landed inside the clipped window.

use ndarray::Array3;
use num_complex::Complex;

use crate::linalg::CVec;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct SlcStack<T: Real> {
    /// (n_acquisitions, rows, cols)
    pub data: Array3<Complex<T>>,
}

/// Pixel positions of one extracted window, row-major within the clipped
/// rectangle.
#[derive(Debug, Clone)]
pub struct WindowLayout {
    pub rows: usize,
    pub cols: usize,
    /// Raster coordinates of the window's top-left pixel.
    pub origin: (usize, usize),
    /// Index of the reference pixel within the window (row-major).
    pub ref_index: usize,
}

impl WindowLayout {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (row, col) within the window for a linear index.
    #[inline]
    pub fn local(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    #[inline]
    pub fn index(&self, local_row: usize, local_col: usize) -> usize {
        local_row * self.cols + local_col
    }
}

impl<T: Real> SlcStack<T> {
    pub fn new(data: Array3<Complex<T>>) -> Self {
        Self { data }
    }

    pub fn zeros(n_acquisitions: usize, rows: usize, cols: usize) -> Self {
        Self {
            data: Array3::zeros((n_acquisitions, rows, cols)),
        }
    }

    pub fn n_acquisitions(&self) -> usize {
        self.data.dim().0
    }

    pub fn rows(&self) -> usize {
        self.data.dim().1
    }

    pub fn cols(&self) -> usize {
        self.data.dim().2
    }

    /// The N-vector of one pixel across acquisitions.
    pub fn pixel_vector(&self, row: usize, col: usize) -> CVec<T> {
        let n = self.n_acquisitions();
        CVec::from_iter((0..n).map(|a| self.data[(a, row, col)]))
    }

    /// Side-`side` window centered at (row, col), clipped at the borders.
    /// Returns the per-pixel vectors (row-major over the clipped window)
    /// and the layout locating them in the raster.
    pub fn window(&self, row: usize, col: usize, side: usize) -> (Vec<CVec<T>>, WindowLayout) {
        assert!(side >= 1, "window side must be at least 1");
        assert!(row < self.rows() && col < self.cols(), "center out of raster");
        let h = side / 2;
        let r0 = row.saturating_sub(h);
        let r1 = (row + h + 1).min(self.rows());
        let c0 = col.saturating_sub(h);
        let c1 = (col + h + 1).min(self.cols());
        let layout = WindowLayout {
            rows: r1 - r0,
            cols: c1 - c0,
            origin: (r0, c0),
            ref_index: (row - r0) * (c1 - c0) + (col - c0),
        };
        let mut vectors = Vec::with_capacity(layout.len());
        for r in r0..r1 {
            for c in c0..c1 {
                vectors.push(self.pixel_vector(r, c));
            }
        }
        (vectors, layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_stack() -> SlcStack<f64> {
        // value encodes (acq, row, col) so extraction can be checked exactly
        let mut s = SlcStack::<f64>::zeros(3, 5, 4);
        for a in 0..3 {
            for r in 0..5 {
                for c in 0..4 {
                    s.data[(a, r, c)] = Complex::new((a * 100 + r * 10 + c) as f64, 0.0);
                }
            }
        }
        s
    }

    #[test]
    fn window_is_centered_in_the_interior() {
        let s = toy_stack();
        let (v, layout) = s.window(2, 2, 3);
        assert_eq!(layout.rows, 3);
        assert_eq!(layout.cols, 3);
        assert_eq!(layout.origin, (1, 1));
        assert_eq!(layout.ref_index, 4); // center of a 3x3
        assert_eq!(v.len(), 9);
        assert_eq!(v[layout.ref_index][1].re, 122.0); // acq 1, (2,2)
    }

    #[test]
    fn window_clips_at_corners_and_keeps_ref() {
        let s = toy_stack();
        let (v, layout) = s.window(0, 0, 5);
        assert_eq!((layout.rows, layout.cols), (3, 3));
        assert_eq!(layout.origin, (0, 0));
        assert_eq!(layout.ref_index, 0);
        assert_eq!(v.len(), 9);

        let (v, layout) = s.window(4, 3, 5);
        assert_eq!((layout.rows, layout.cols), (3, 3));
        assert_eq!(layout.origin, (2, 1));
        assert_eq!(layout.ref_index, layout.len() - 1);
        assert_eq!(v[layout.ref_index][0].re, 43.0);
    }

    #[test]
    fn single_pixel_raster() {
        let mut s = SlcStack::<f64>::zeros(2, 1, 1);
        s.data[(0, 0, 0)] = Complex::new(1.0, 2.0);
        let (v, layout) = s.window(0, 0, 7);
        assert_eq!(v.len(), 1);
        assert_eq!(layout.ref_index, 0);
    }
}
