//! Summation and Monte-Carlo accumulators.

use nalgebra::DMatrix;

use crate::qcore::{C64, ZERO};

/// Neumaier-compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ComplexSum {
    re: CompensatedSum,
    im: CompensatedSum,
}

impl ComplexSum {
    pub fn add(&mut self, z: C64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn merge(&mut self, other: &ComplexSum) {
        self.re.merge(&other.re);
        self.im.merge(&other.im);
    }

    pub fn value(&self) -> C64 {
        C64::new(self.re.value(), self.im.value())
    }
}

/// Entrywise Monte-Carlo estimate of a matrix mean.
#[derive(Clone, Debug)]
pub struct MatrixEstimate {
    pub mean: DMatrix<C64>,
    /// Standard error of the real part of each entry.
    pub se_re: DMatrix<f64>,
    /// Standard error of the imaginary part of each entry.
    pub se_im: DMatrix<f64>,
    pub samples: usize,
}

impl MatrixEstimate {
    /// Average of the real and imaginary standard errors over all entries.
    pub fn mean_standard_error(&self) -> f64 {
        let total: f64 = self.se_re.iter().chain(self.se_im.iter()).sum();
        total / (2 * self.se_re.len()) as f64
    }

    /// Largest `|estimate - reference| / se` over real and imaginary parts.
    /// Deviations below `abs_floor` count as zero, so entries whose estimate
    /// has no variance only need to match to within the floor.
    pub fn max_z_score(&self, reference: &DMatrix<C64>, abs_floor: f64) -> f64 {
        let mut worst = 0.0f64;
        for ((m, r), (sr, si)) in self.mean.iter().zip(reference.iter()).zip(self.se_re.iter().zip(self.se_im.iter())) {
            let d = m - r;
            for (dev, se) in [(d.re.abs(), *sr), (d.im.abs(), *si)] {
                if dev <= abs_floor {
                    continue;
                }
                worst = worst.max(if se > 0.0 { dev / se } else { f64::INFINITY });
            }
        }
        worst
    }
}

/// Welford accumulator over matrices, mergeable across workers.
#[derive(Clone, Debug)]
pub struct MatrixAccumulator {
    count: usize,
    mean: DMatrix<C64>,
    m2_re: DMatrix<f64>,
    m2_im: DMatrix<f64>,
}

impl MatrixAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DMatrix::from_element(dim, dim, ZERO),
            m2_re: DMatrix::zeros(dim, dim),
            m2_im: DMatrix::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, x: &DMatrix<C64>) {
        self.count += 1;
        let k = self.count as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / k;
            let delta2 = x[i] - self.mean[i];
            self.m2_re[i] += delta.re * delta2.re;
            self.m2_im[i] += delta.im * delta2.im;
        }
    }

    pub fn merge(&mut self, other: &MatrixAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * (nb / n);
            self.m2_re[i] += other.m2_re[i] + delta.re * delta.re * na * nb / n;
            self.m2_im[i] += other.m2_im[i] + delta.im * delta.im * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(self) -> MatrixEstimate {
        let n = self.count as f64;
        let se = |m2: &DMatrix<f64>| {
            if self.count < 2 {
                DMatrix::zeros(m2.nrows(), m2.ncols())
            } else {
                m2.map(|v| (v.max(0.0) / (n - 1.0) / n).sqrt())
            }
        };
        MatrixEstimate { se_re: se(&self.m2_re), se_im: se(&self.m2_im), mean: self.mean, samples: self.count }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-16);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-15).abs() < 1e-30);
    }

    #[test]
    fn welford_merge_matches_single_pass() {
        let xs: Vec<DMatrix<C64>> = (0..20)
            .map(|k| DMatrix::from_fn(2, 2, |r, c| C64::new((k * (r + 1)) as f64, (k % 3 + c) as f64)))
            .collect();
        let mut all = MatrixAccumulator::new(2);
        xs.iter().for_each(|x| all.push(x));
        let mut a = MatrixAccumulator::new(2);
        let mut b = MatrixAccumulator::new(2);
        xs[..7].iter().for_each(|x| a.push(x));
        xs[7..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        let (e1, e2) = (all.finish(), a.finish());
        assert!((e1.mean - e2.mean).iter().all(|d| d.norm() < 1e-12));
        assert!((e1.se_re - e2.se_re).iter().all(|d| d.abs() < 1e-12));
        assert!((e1.se_im - e2.se_im).iter().all(|d| d.abs() < 1e-12));
    }
}
