//! Extremal eigenpairs of the small symmetric tridiagonal matrices produced
//! by the Lanczos recurrence: Sturm-count bisection for the eigenvalue, then
//! inverse iteration with a pivoted tridiagonal LU for the eigenvector.

pub(crate) struct Tridiagonal<'a> {
    pub diag: &'a [f64],
    /// `off[i]` couples rows `i` and `i + 1`.
    pub off: &'a [f64],
}

impl Tridiagonal<'_> {
    fn len(&self) -> usize {
        self.diag.len()
    }

    fn pivmin(&self) -> f64 {
        let m = self.off.iter().map(|b| b * b).fold(1.0f64, f64::max);
        f64::MIN_POSITIVE * m
    }

    fn gershgorin(&self) -> (f64, f64) {
        let k = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..k {
            let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
            let right = if i + 1 < k { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - left - right);
            hi = hi.max(self.diag[i] + left + right);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below `x`.
    fn count_below(&self, x: f64) -> usize {
        let pivmin = self.pivmin();
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.len() {
            q = self.diag[i]
                - x
                - if i > 0 {
                    self.off[i - 1] * self.off[i - 1] / q
                } else {
                    0.0
                };
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn bisect(&self, mut below: impl FnMut(usize) -> bool) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let pivmin = self.pivmin();
        for _ in 0..256 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) + pivmin {
                break;
            }
            if below(self.count_below(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        let k = self.len();
        self.bisect(|count| count < k)
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        self.bisect(|count| count == 0)
    }

    /// Unit eigenvector for an eigenvalue `lambda` computed to full accuracy.
    pub fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let k = self.len();
        if k == 1 {
            return vec![1.0];
        }
        let scale = self
            .diag
            .iter()
            .chain(self.off)
            .map(|x| x.abs())
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let lu = PivotedLu::factor(self, lambda, f64::EPSILON * scale);
        let mut y = vec![1.0 / (k as f64).sqrt(); k];
        for _ in 0..3 {
            lu.solve(&mut y);
            let norm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                break;
            }
            y.iter_mut().for_each(|x| *x /= norm);
        }
        y
    }
}

/// LU factorization of `T - shift I` with partial pivoting (the banded
/// layout of LAPACK's `gttrf`).
struct PivotedLu {
    d: Vec<f64>,
    dl: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl PivotedLu {
    fn factor(t: &Tridiagonal<'_>, shift: f64, tiny: f64) -> Self {
        let k = t.len();
        let mut d: Vec<f64> = t.diag.iter().map(|x| x - shift).collect();
        let mut dl = t.off.to_vec();
        let mut du = t.off.to_vec();
        let mut du2 = vec![0.0; k.saturating_sub(2)];
        let mut swapped = vec![false; k.saturating_sub(1)];
        for i in 0..k - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < k {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        if d[k - 1] == 0.0 {
            d[k - 1] = tiny;
        }
        Self {
            d,
            dl,
            du,
            du2,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let k = self.d.len();
        for i in 0..k - 1 {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            b[i + 1] -= self.dl[i] * b[i];
        }
        b[k - 1] /= self.d[k - 1];
        if k >= 2 {
            b[k - 2] = (b[k - 2] - self.du[k - 2] * b[k - 1]) / self.d[k - 2];
        }
        for i in (0..k.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}
