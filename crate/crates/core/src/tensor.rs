//! Dense rank-3 tensors indexed by (frequency bin, slot, user).
//!
//! Indices are zero-based in code. File formats and user-facing reports
//! use one-based indices, matching the usual scheduling notation; the
//! conversion happens at those boundaries only.

use std::ops::{Index, IndexMut};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    dims: (usize, usize, usize),
    data: Vec<T>,
}

impl<T: Copy> Tensor3<T> {
    pub fn filled(m: usize, n: usize, k: usize, value: T) -> Self {
        Tensor3 {
            dims: (m, n, k),
            data: vec![value; m * n * k],
        }
    }

    pub fn from_fn(m: usize, n: usize, k: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(m * n * k);
        for im in 0..m {
            for in_ in 0..n {
                for ik in 0..k {
                    data.push(f(im, in_, ik));
                }
            }
        }
        Tensor3 { dims: (m, n, k), data }
    }
}

impl<T: Copy + Default> Tensor3<T> {
    pub fn zeros(m: usize, n: usize, k: usize) -> Self {
        Tensor3::filled(m, n, k, T::default())
    }
}

impl<T> Tensor3<T> {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    fn offset(&self, m: usize, n: usize, k: usize) -> usize {
        debug_assert!(m < self.dims.0 && n < self.dims.1 && k < self.dims.2);
        (m * self.dims.1 + n) * self.dims.2 + k
    }

    pub fn iter_indexed(&self) -> impl Iterator<Item = ((usize, usize, usize), &T)> {
        let (_, n, k) = self.dims;
        self.data.iter().enumerate().map(move |(i, v)| {
            let ik = i % k;
            let in_ = (i / k) % n;
            let im = i / (k * n);
            ((im, in_, ik), v)
        })
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

impl<T> Index<(usize, usize, usize)> for Tensor3<T> {
    type Output = T;
    #[inline]
    fn index(&self, (m, n, k): (usize, usize, usize)) -> &T {
        &self.data[self.offset(m, n, k)]
    }
}

impl<T> IndexMut<(usize, usize, usize)> for Tensor3<T> {
    #[inline]
    fn index_mut(&mut self, (m, n, k): (usize, usize, usize)) -> &mut T {
        let off = self.offset(m, n, k);
        &mut self.data[off]
    }
}
