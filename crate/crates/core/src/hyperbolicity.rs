//! Gromov δ-hyperbolicity of finite metric spaces.
//!
//! The four-point brute force is `O(n⁴)`; [`delta_maxmin`] computes the
//! fixed-base value through one `(max, min)` matrix product in `O(n³)`.

use rand::seq::index;
use rand::Rng;

use crate::poincare::{self, BallConfig, PoincareError};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum HyperbolicityError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("point {index}: {source}")]
    Poincare { index: usize, source: PoincareError },
    #[error("distance matrix must be square with {n}² = {expected} entries, got {got}")]
    BadLength {
        n: usize,
        expected: usize,
        got: usize,
    },
    #[error("d({i},{j}) is invalid: {reason}")]
    InvalidEntry {
        i: usize,
        j: usize,
        reason: &'static str,
    },
    #[error("triangle inequality fails: d({i},{k}) > d({i},{j}) + d({j},{k})")]
    Triangle { i: usize, j: usize, k: usize },
    #[error("index {index} out of range for {n} points")]
    IndexOutOfRange { index: usize, n: usize },
}

type Result<T> = std::result::Result<T, HyperbolicityError>;

const SYMMETRY_TOL: f64 = 1e-12;
const TRIANGLE_SLACK: f64 = 1e-9;
const DEGENERATE_DIAMETER: f64 = 1e-12;

/// Default number of points sampled for [`delta_rel`].
pub const DEFAULT_SAMPLE_SIZE: usize = 256;

/// Validated `n×n` metric.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a matrix from row-major data, checking finiteness,
    /// non-negativity, a zero diagonal, symmetry and the triangle inequality.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(HyperbolicityError::BadLength {
                n,
                expected: n * n,
                got: data.len(),
            });
        }
        let d = |i: usize, j: usize| data[i * n + j];
        for i in 0..n {
            if d(i, i) != 0.0 {
                return Err(HyperbolicityError::InvalidEntry {
                    i,
                    j: i,
                    reason: "non-zero diagonal",
                });
            }
            for j in 0..n {
                let v = d(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(HyperbolicityError::InvalidEntry {
                        i,
                        j,
                        reason: "negative or non-finite",
                    });
                }
                if (v - d(j, i)).abs() > SYMMETRY_TOL * v.abs().max(1.0) {
                    return Err(HyperbolicityError::InvalidEntry {
                        i,
                        j,
                        reason: "asymmetric",
                    });
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let dij = d(i, j);
                for k in 0..n {
                    if d(i, k) > dij + d(j, k) + TRIANGLE_SLACK {
                        return Err(HyperbolicityError::Triangle { i, j, k });
                    }
                }
            }
        }
        Ok(Self { n, data })
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            data.extend_from_slice(r.as_ref());
        }
        Self::new(n, data)
    }

    /// Skips validation for matrices that are metric by construction.
    pub(crate) fn from_trusted(n: usize, data: Vec<f64>) -> Self {
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn diameter(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Multiplies every distance by `alpha > 0`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self::from_trusted(self.n, self.data.iter().map(|v| v * alpha).collect())
    }

    /// The sub-metric on `indices`, in the given order.
    pub fn submatrix(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(HyperbolicityError::IndexOutOfRange {
                index: bad,
                n: self.n,
            });
        }
        let m = indices.len();
        let mut data = Vec::with_capacity(m * m);
        for &i in indices {
            data.extend(indices.iter().map(|&j| self.get(i, j)));
        }
        Ok(Self::from_trusted(m, data))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Poincare { config: BallConfig },
}

/// All pairwise distances between `points` under `metric`.
pub fn pairwise_dist<R: AsRef<[f64]>>(points: &[R], metric: Metric) -> Result<DistanceMatrix> {
    let n = points.len();
    if n == 0 {
        return Err(HyperbolicityError::TooFewPoints { needed: 1, got: 0 });
    }
    let dim = points[0].as_ref().len();
    for (index, p) in points.iter().enumerate() {
        let got = p.as_ref().len();
        if got != dim {
            return Err(HyperbolicityError::DimensionMismatch {
                index,
                expected: dim,
                got,
            });
        }
    }
    if let Metric::Poincare { config } = metric {
        for (index, p) in points.iter().enumerate() {
            poincare::BallPoint::new(p.as_ref().to_vec(), config)
                .map_err(|source| HyperbolicityError::Poincare { index, source })?;
        }
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (points[i].as_ref(), points[j].as_ref());
            let d = match metric {
                Metric::Euclidean => a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
                Metric::Poincare { config } => poincare::dist_raw(a, b, config.c()),
            };
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix::new(n, data)
}

/// `(i|j)_r = ½(d(i,r) + d(r,j) − d(i,j))`.
pub fn gromov_product(d: &DistanceMatrix, i: usize, j: usize, r: usize) -> Result<f64> {
    if let Some(&bad) = [i, j, r].iter().find(|&&x| x >= d.n) {
        return Err(HyperbolicityError::IndexOutOfRange { index: bad, n: d.n });
    }
    Ok(0.5 * (d.get(i, r) + d.get(r, j) - d.get(i, j)))
}

/// Half the gap between the largest and second-largest pairing sum of a
/// quadruple.
fn fourpoint(d: &DistanceMatrix, x: usize, y: usize, z: usize, w: usize) -> f64 {
    let mut s = [
        d.get(x, y) + d.get(z, w),
        d.get(x, z) + d.get(y, w),
        d.get(x, w) + d.get(y, z),
    ];
    s.sort_by(|a, b| b.total_cmp(a));
    0.5 * (s[0] - s[1])
}

/// Four-point δ over all quadruples of distinct points; `O(n⁴)`.
pub fn delta_fourpoint_bruteforce(d: &DistanceMatrix) -> f64 {
    let n = d.n;
    let mut best = 0.0f64;
    for x in 0..n {
        for y in x + 1..n {
            for z in y + 1..n {
                for w in z + 1..n {
                    best = best.max(fourpoint(d, x, y, z, w));
                }
            }
        }
    }
    best
}

/// Fixed-base δ_r by direct enumeration:
/// `max_{x,y,z} min((x|z)_r, (z|y)_r) − (x|y)_r`.
pub fn delta_fixed_base_bruteforce(d: &DistanceMatrix, r: usize) -> Result<f64> {
    let n = d.n;
    if r >= n {
        return Err(HyperbolicityError::IndexOutOfRange { index: r, n });
    }
    let a = gromov_matrix(d, r);
    let mut best = f64::NEG_INFINITY;
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                best = best.max(a[x * n + z].min(a[z * n + y]) - a[x * n + y]);
            }
        }
    }
    Ok(best)
}

fn gromov_matrix(d: &DistanceMatrix, r: usize) -> Vec<f64> {
    let n = d.n;
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (d.get(i, r) + d.get(r, j) - d.get(i, j));
        }
    }
    a
}

/// `δ_r = max((A ⊗ A) − A)` with `A[i][j] = (i|j)_r` and
/// `(A ⊗ A)[i][j] = max_k min(A[i][k], A[k][j])`.
pub fn delta_maxmin(d: &DistanceMatrix, r: usize) -> Result<f64> {
    let n = d.n;
    if r >= n {
        return Err(HyperbolicityError::IndexOutOfRange { index: r, n });
    }
    let a = gromov_matrix(d, r);
    // Column-major copy so the inner loop walks both operands contiguously.
    let mut at = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            at[j * n + i] = a[i * n + j];
        }
    }
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        for j in 0..n {
            let col = &at[j * n..(j + 1) * n];
            let prod = row
                .iter()
                .zip(col)
                .map(|(x, y)| x.min(*y))
                .fold(f64::NEG_INFINITY, f64::max);
            best = best.max(prod - row[j]);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HyperbolicityReport {
    pub delta: f64,
    pub diameter: f64,
    pub delta_rel: f64,
    /// Index of the base point in the original point list.
    pub base_index: Option<usize>,
    pub sample_size: usize,
    /// Set when the sample's diameter is below `1e−12`; `delta_rel` is 0.
    pub degenerate: bool,
}

/// δ_rel of a distance matrix on a random subsample of `m` points (all
/// points when `m ≥ n`). The first sampled point is the max-min base.
pub fn delta_rel_matrix(
    d: &DistanceMatrix,
    m: usize,
    rng: &mut impl Rng,
) -> Result<HyperbolicityReport> {
    let n = d.len();
    let m = m.min(n);
    if m < 2 {
        return Err(HyperbolicityError::TooFewPoints { needed: 2, got: m });
    }
    let sample = index::sample(rng, n, m).into_vec();
    let sub = d.submatrix(&sample)?;
    Ok(report(&sub, sample[0], m))
}

fn report(sub: &DistanceMatrix, base_index: usize, sample_size: usize) -> HyperbolicityReport {
    let diameter = sub.diameter();
    let delta = delta_maxmin(sub, 0).expect("base 0 exists").max(0.0);
    let degenerate = diameter < DEGENERATE_DIAMETER;
    HyperbolicityReport {
        delta,
        diameter,
        delta_rel: if degenerate {
            0.0
        } else {
            2.0 * delta / diameter
        },
        base_index: Some(base_index),
        sample_size,
        degenerate,
    }
}

/// δ_rel of a point set under `metric`, on a random subsample of `m` points.
pub fn delta_rel<R: AsRef<[f64]>>(
    points: &[R],
    metric: Metric,
    m: usize,
    rng: &mut impl Rng,
) -> Result<HyperbolicityReport> {
    let n = points.len();
    let m = m.min(n);
    if m < 2 {
        return Err(HyperbolicityError::TooFewPoints { needed: 2, got: m });
    }
    let sample = index::sample(rng, n, m).into_vec();
    let chosen: Vec<&[f64]> = sample.iter().map(|&i| points[i].as_ref()).collect();
    let sub = pairwise_dist(&chosen, metric)?;
    Ok(report(&sub, sample[0], m))
}
