use crate::Real;

/// Symmetric positive definite band matrix stored as its lower band.
#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    bw: usize,
    data: Vec<T>,
}

impl<T: Real> BandMatrix<T> {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        let bw = half_bandwidth.min(n.saturating_sub(1));
        Self {
            n,
            bw,
            data: vec![T::zero(); n * (bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Entry `(i, j)` of the symmetric matrix; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            T::zero()
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside band {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Replaces row and column `i` by the unit vector.
    pub fn pin(&mut self, i: usize) {
        for j in i.saturating_sub(self.bw)..i {
            let k = self.idx(i, j);
            self.data[k] = T::zero();
        }
        for r in i + 1..(i + self.bw + 1).min(self.n) {
            let k = self.idx(r, i);
            self.data[k] = T::zero();
        }
        let k = self.idx(i, i);
        self.data[k] = T::one();
    }

    pub fn diagonal(&self, i: usize) -> T {
        self.data[self.idx(i, i)]
    }

    pub fn add_diagonal(&mut self, i: usize, v: T) {
        let k = self.idx(i, i);
        self.data[k] += v;
    }

    /// In-place Cholesky factorization `A = L Lᵀ`. Returns `None` if the
    /// matrix is not numerically positive definite.
    pub fn cholesky(mut self) -> Option<BandCholesky<T>> {
        let scale = (0..self.n)
            .map(|i| self.diagonal(i).abs())
            .fold(T::zero(), |a, b| if b > a { b } else { a });
        let tiny = T::epsilon() * T::lit(1e4) * (scale + T::min_positive_value());
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let mut s = self.data[self.idx(i, j)];
                for k in lo.max(j.saturating_sub(self.bw))..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                let d = self.idx(i, j);
                if i == j {
                    if !(s > tiny) {
                        return None;
                    }
                    self.data[d] = s.sqrt();
                } else {
                    self.data[d] = s / self.data[self.idx(j, j)];
                }
            }
        }
        Some(BandCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky<T> {
    l: BandMatrix<T>,
}

impl<T: Real> BandCholesky<T> {
    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let l = &self.l;
        let n = l.n;
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(l.bw)..i {
                s -= l.data[l.idx(i, k)] * y[k];
            }
            y[i] = s / l.data[l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for r in i + 1..(i + l.bw + 1).min(n) {
                s -= l.data[l.idx(r, i)] * y[r];
            }
            y[i] = s / l.data[l.idx(i, i)];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] → x = [1 1 1]
        let mut a = BandMatrix::<f64>::zeros(3, 1);
        for i in 0..3 {
            a.add(i, i, 2.0);
        }
        a.add(1, 0, -1.0);
        a.add(2, 1, -1.0);
        let x = a.cholesky().unwrap().solve(&[1.0, 0.0, 1.0]);
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn pinned_row_is_identity() {
        let mut a = BandMatrix::<f64>::zeros(3, 2);
        for i in 0..3 {
            a.add(i, i, 4.0);
        }
        a.add(1, 0, 1.0);
        a.add(2, 0, 1.0);
        a.pin(0);
        assert_eq!(a.get(0, 2), 0.0);
        assert_eq!(a.get(0, 0), 1.0);
        let x = a.cholesky().unwrap().solve(&[0.0, 4.0, 8.0]);
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 1.0).abs() < 1e-14 && (x[2] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_rejected() {
        let mut a = BandMatrix::<f64>::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, 1.0);
        assert!(a.cholesky().is_none());
    }
}
