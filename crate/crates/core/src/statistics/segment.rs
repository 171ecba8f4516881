use nalgebra::DMatrix;

use super::label_buckets;
use crate::glm::solve_centered_ridge;

/// Sufficient statistics of one block of rows, on data centered by the
/// overall means.
#[derive(Clone)]
struct Moments {
    count: usize,
    sz: Vec<f64>,
    sy: f64,
    szz: DMatrix<f64>,
    szy: Vec<f64>,
}

impl Moments {
    fn zero(d: usize) -> Self {
        Self {
            count: 0,
            sz: vec![0.0; d],
            sy: 0.0,
            szz: DMatrix::zeros(d, d),
            szy: vec![0.0; d],
        }
    }

    fn add(&mut self, other: &Moments) {
        self.count += other.count;
        self.sy += other.sy;
        self.szz += &other.szz;
        for j in 0..self.sz.len() {
            self.sz[j] += other.sz[j];
            self.szy[j] += other.szy[j];
        }
    }

    /// Ridge fit on this block: `(intercept, slopes)` in centered
    /// coordinates.
    fn fit(&self, ridge: f64) -> Option<(f64, Vec<f64>)> {
        let c = self.count as f64;
        let d = self.sz.len();
        let mean: Vec<f64> = self.sz.iter().map(|s| s / c).collect();
        let mean_y = self.sy / c;
        let mut cov = self.szz.clone();
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] -= c * mean[a] * mean[b];
            }
        }
        let cross: Vec<f64> = (0..d).map(|j| self.szy[j] - c * mean[j] * mean_y).collect();
        solve_centered_ridge(&mean, mean_y, &cov, &cross, ridge).ok()
    }
}

/// Divergence profile of segment-wise ridge refits of `y` on `design`.
///
/// For each `tau`, fits `y ~ design` with penalty `ridge` on rows with
/// `labels <= tau` and on the rest, then averages the squared difference of
/// the two fitted predictors over all rows. Splits with a side smaller than
/// `min_segment`, or an unsolvable fit, get `-inf`.
pub fn ridge_profile(design: &DMatrix<f64>, y: &[f64], labels: &[u32], t_max: u32, ridge: f64, min_segment: usize) -> Vec<f64> {
    let n = design.nrows();
    let d = design.ncols();
    let nf = n as f64;
    let data = design.as_slice();
    let mean: Vec<f64> = (0..d).map(|j| data[j * n..(j + 1) * n].iter().sum::<f64>() / nf).collect();
    let mean_y = y.iter().sum::<f64>() / nf;
    let z = DMatrix::from_fn(n, d, |i, j| design[(i, j)] - mean[j]);
    let yc: Vec<f64> = y.iter().map(|v| v - mean_y).collect();
    let second = z.tr_mul(&z) / nf;

    let buckets: Vec<Moments> = label_buckets(labels, t_max)
        .into_iter()
        .map(|rows| {
            let mut m = Moments::zero(d);
            m.count = rows.len();
            if rows.is_empty() {
                return m;
            }
            let zb = crate::dataset::select_rows(&z, &rows);
            m.szz = zb.tr_mul(&zb);
            for (k, &i) in rows.iter().enumerate() {
                m.sy += yc[i];
                for j in 0..d {
                    let v = zb[(k, j)];
                    m.sz[j] += v;
                    m.szy[j] += v * yc[i];
                }
            }
            m
        })
        .collect();

    let t = t_max as usize;
    let mut prefix = Vec::with_capacity(t - 1);
    let mut acc = Moments::zero(d);
    for b in &buckets[..t - 1] {
        acc.add(b);
        prefix.push(acc.clone());
    }
    let mut suffix = vec![Moments::zero(d); t - 1];
    let mut acc = Moments::zero(d);
    for k in (1..t).rev() {
        acc.add(&buckets[k]);
        suffix[k - 1] = acc.clone();
    }

    prefix
        .iter()
        .zip(&suffix)
        .map(|(pre, post)| {
            if pre.count < min_segment || post.count < min_segment {
                return f64::NEG_INFINITY;
            }
            let (Some((a0, a)), Some((b0, b))) = (pre.fit(ridge), post.fit(ridge)) else {
                return f64::NEG_INFINITY;
            };
            let dc = a0 - b0;
            let db: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
            let mut quad = 0.0;
            for p in 0..d {
                for q in 0..d {
                    quad += db[p] * second[(p, q)] * db[q];
                }
            }
            (dc * dc + quad).max(0.0)
        })
        .collect()
}
