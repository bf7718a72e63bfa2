//! Dense row-major per-pixel storage shared by depth maps, flows and masks.

use std::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pixel coordinates of a flat index.
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_map<U, V>(&self, other: &Grid<U>, mut f: impl FnMut(&T, &U) -> V) -> Grid<V> {
        assert!(self.same_shape(other), "grid shape mismatch");
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

impl<T> Index<usize> for Grid<T> {
    type Output = T;
    #[inline]
    fn index(&self, idx: usize) -> &T {
        &self.data[idx]
    }
}

impl<T> IndexMut<usize> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, idx: usize) -> &mut T {
        &mut self.data[idx]
    }
}

/// Bilinear sampling weights for a continuous location.
///
/// Returns the top-left integer corner and the fractional offsets, or `None`
/// when any of the four neighbors falls outside the grid.
#[inline]
pub fn bilinear_support(width: usize, height: usize, u: f64, v: f64) -> Option<(usize, usize, f64, f64)> {
    if !(u.is_finite() && v.is_finite()) || u < 0.0 || v < 0.0 {
        return None;
    }
    let x0 = u.floor();
    let y0 = v.floor();
    let (mut x, mut y) = (x0 as usize, y0 as usize);
    let (mut fx, mut fy) = (u - x0, v - y0);
    // Samples exactly on the last row/column use the previous cell.
    if x + 1 >= width {
        if x + 1 == width && fx == 0.0 && width >= 2 {
            x -= 1;
            fx = 1.0;
        } else {
            return None;
        }
    }
    if y + 1 >= height {
        if y + 1 == height && fy == 0.0 && height >= 2 {
            y -= 1;
            fy = 1.0;
        } else {
            return None;
        }
    }
    Some((x, y, fx, fy))
}

impl Grid<f64> {
    /// Bilinear interpolation; `None` when the support leaves the grid.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f64> {
        let (x, y, fx, fy) = bilinear_support(self.width, self.height, u, v)?;
        let a = *self.get(x, y);
        let b = *self.get(x + 1, y);
        let c = *self.get(x, y + 1);
        let d = *self.get(x + 1, y + 1);
        Some((1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d))
    }
}

impl Grid<bool> {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
