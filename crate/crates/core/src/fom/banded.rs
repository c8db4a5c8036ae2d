//! Banded matrices for 5-point finite-volume stencils with a direct
//! (non-pivoting) LU. The systems assembled here are diagonally dominant or
//! symmetric positive definite, so pivoting is not needed.

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Breakdown {
    pub row: usize,
    pub pivot: f64,
}

impl BandedMatrix {
    pub fn new(n: usize, bandwidth: usize) -> Self {
        let bw = bandwidth.min(n.saturating_sub(1));
        Self { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw, "({i},{j}) outside band {}", self.bw);
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.bw);
                let hi = (i + self.bw).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU factorization (Doolittle, no pivoting).
    pub fn factor(mut self) -> Result<BandedLu, Breakdown> {
        let (n, bw) = (self.n, self.bw);
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            if !(pivot.abs() > 1e-14 * scale) {
                return Err(Breakdown { row: k, pivot });
            }
            let hi = (k + bw).min(n - 1);
            for i in (k + 1)..=hi {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in (k + 1)..=hi {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(BandedLu { m: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
}

impl BandedLu {
    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw) = (self.m.n, self.m.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = b[i];
            for j in lo..i {
                s -= self.m.data[self.m.idx(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = b[i];
            for j in (i + 1)..=hi {
                s -= self.m.data[self.m.idx(i, j)] * b[j];
            }
            b[i] = s / self.m.data[self.m.idx(i, i)];
        }
    }
}
