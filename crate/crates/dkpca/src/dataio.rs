//! Synthetic dataset generators, CSV ingestion, and deterministic splitting.
//!
//! All generators are pure functions of their arguments: the same seed yields
//! bitwise-identical matrices on every platform (ChaCha8 streams, one stream
//! per purpose).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

use crate::error::{Error, Result};

/// N x d matrix of samples; each row is one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("data matrix must be at least 1x1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("data matrix contains non-finite entries"));
        }
        Ok(DataMatrix { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("no rows"));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("ragged rows"));
        }
        let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        DataMatrix::new(m)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// Returns a copy with column means subtracted, plus the means themselves.
    pub fn centered(&self) -> (DataMatrix, DVector<f64>) {
        let n = self.nrows() as f64;
        let means = DVector::from_fn(self.ncols(), |j, _| self.values.column(j).sum() / n);
        let mut m = self.values.clone();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                m[(i, j)] -= means[j];
            }
        }
        (DataMatrix { values: m }, means)
    }

    pub fn select_rows(&self, idx: &[usize]) -> DataMatrix {
        let m = DMatrix::from_fn(idx.len(), self.ncols(), |i, j| self.values[(idx[i], j)]);
        DataMatrix { values: m }
    }
}

/// Train/validation/test fractions plus the split seed.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for f in [self.train_frac, self.val_frac, self.test_frac] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid("split fractions must lie in (0,1)"));
            }
        }
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

// Stream ids keep the per-purpose RNG sequences independent of each other.
const STREAM_SQUARE: u64 = 1;
const STREAM_COMPLEX: u64 = 2;
const STREAM_GAUSS_COV: u64 = 3;
const STREAM_GAUSS_SAMPLES: u64 = 4;
const STREAM_SPLIT: u64 = 5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Maps an arc-length parameter t in [0, 8) onto the perimeter of the square
/// [-1,1]^2, starting at the corner (-1,-1) and walking counter-clockwise.
fn square_perimeter_point(t: f64) -> (f64, f64) {
    debug_assert!((0.0..8.0).contains(&t));
    if t < 2.0 {
        (-1.0 + t, -1.0)
    } else if t < 4.0 {
        (1.0, -1.0 + (t - 2.0))
    } else if t < 6.0 {
        (1.0 - (t - 4.0), 1.0)
    } else {
        (-1.0, 1.0 - (t - 6.0))
    }
}

fn square_points(n: usize, noise_std: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let step = 8.0 / n as f64;
    (0..n)
        .map(|i| {
            // Half-step offset keeps the points off the corners for small n.
            let (x, y) = square_perimeter_point((i as f64 + 0.5) * step);
            let nx: f64 = StandardNormal.sample(rng);
            let ny: f64 = StandardNormal.sample(rng);
            [x + noise_std * nx, y + noise_std * ny]
        })
        .collect()
}

/// n points placed arc-length-uniformly on the perimeter of the square
/// [-1,1]^2, perturbed by isotropic Gaussian noise of standard deviation
/// `noise_std`.
pub fn gen_synth_square(n: usize, noise_std: f64, seed: u64) -> Result<DataMatrix> {
    if n < 4 {
        return Err(Error::invalid("square dataset needs n >= 4"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::invalid("noise_std must be >= 0"));
    }
    let mut rng = rng_for(seed, STREAM_SQUARE);
    let pts = square_points(n, noise_std, &mut rng);
    let m = DMatrix::from_fn(n, 2, |i, j| pts[i][j]);
    DataMatrix::new(m)
}

/// Ring radius used by [`gen_synth_complex`].
pub const COMPLEX_RING_RADIUS: f64 = 1.5;
/// Gaussian noise std used by [`gen_synth_complex`].
pub const COMPLEX_NOISE_STD: f64 = 0.05;
/// Archimedean spiral r = SPIRAL_R0 + SPIRAL_SLOPE * theta, theta in [0, 4*pi].
pub const SPIRAL_R0: f64 = 0.1;
pub const SPIRAL_SLOPE: f64 = 0.3;

/// 2-D mixture of one square perimeter, two spirals of opposite chirality,
/// and one ring; n points split equally with the remainder going to the
/// first groups.
pub fn gen_synth_complex(n: usize, seed: u64) -> Result<DataMatrix> {
    if n < 8 {
        return Err(Error::invalid("complex dataset needs n >= 8"));
    }
    let mut rng = rng_for(seed, STREAM_COMPLEX);
    let base = n / 4;
    let rem = n % 4;
    let sizes = [
        base + usize::from(rem > 0),
        base + usize::from(rem > 1),
        base + usize::from(rem > 2),
        base,
    ];
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
    pts.extend(square_points(sizes[0], COMPLEX_NOISE_STD, &mut rng));
    for (group, &m) in sizes[1..3].iter().enumerate() {
        let chirality = if group == 0 { 1.0 } else { -1.0 };
        for i in 0..m {
            let theta = if m == 1 {
                0.0
            } else {
                4.0 * std::f64::consts::PI * i as f64 / (m - 1) as f64
            };
            let r = SPIRAL_R0 + SPIRAL_SLOPE * theta;
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            pts.push([
                r * theta.cos() + COMPLEX_NOISE_STD * nx,
                chirality * r * theta.sin() + COMPLEX_NOISE_STD * ny,
            ]);
        }
    }
    for i in 0..sizes[3] {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / sizes[3] as f64;
        let nx: f64 = StandardNormal.sample(&mut rng);
        let ny: f64 = StandardNormal.sample(&mut rng);
        pts.push([
            COMPLEX_RING_RADIUS * theta.cos() + COMPLEX_NOISE_STD * nx,
            COMPLEX_RING_RADIUS * theta.sin() + COMPLEX_NOISE_STD * ny,
        ]);
    }
    let m = DMatrix::from_fn(n, 2, |i, j| pts[i][j]);
    DataMatrix::new(m)
}

/// Group sizes used by [`gen_synth_complex`] (square, spiral+, spiral-, ring).
pub fn complex_group_sizes(n: usize) -> [usize; 4] {
    let base = n / 4;
    let rem = n % 4;
    [
        base + usize::from(rem > 0),
        base + usize::from(rem > 1),
        base + usize::from(rem > 2),
        base,
    ]
}

/// The seeded SPD covariance used by [`gen_synth_gaussian`]:
/// Sigma = A^T A / d + 0.1 I with A a seeded standard-normal d x d matrix.
pub fn gaussian_covariance(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, STREAM_GAUSS_COV);
    let a = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let mut sigma = a.transpose() * &a / d as f64;
    for i in 0..d {
        sigma[(i, i)] += 0.1;
    }
    sigma
}

/// n samples from N(0, Sigma) with Sigma from [`gaussian_covariance`].
/// Sampling is stream-stable: with the same seed, the first min(n1, n2) rows
/// of two calls coincide.
pub fn gen_synth_gaussian(n: usize, d: usize, seed: u64) -> Result<DataMatrix> {
    if n < 1 || d < 1 {
        return Err(Error::invalid("gaussian dataset needs n >= 1 and d >= 1"));
    }
    let sigma = gaussian_covariance(d, seed);
    let chol = nalgebra::Cholesky::new(sigma)
        .ok_or_else(|| Error::NumericalFailure("covariance not SPD".into()))?;
    let l = chol.l();
    let mut rng = rng_for(seed, STREAM_GAUSS_SAMPLES);
    let mut m = DMatrix::zeros(n, d);
    let mut z = DVector::zeros(d);
    for i in 0..n {
        for k in 0..d {
            z[k] = StandardNormal.sample(&mut rng);
        }
        let x = &l * &z;
        for j in 0..d {
            m[(i, j)] = x[j];
        }
    }
    DataMatrix::new(m)
}

/// Parses a numeric CSV file ('.' decimal separator, UTF-8, comma-separated).
/// `skip_header` drops the first record before parsing.
pub fn load_csv(path: impl AsRef<Path>, skip_header: bool) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(|e| Error::invalid(format!("cannot open CSV: {e}")))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (ri, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: ri + 1,
            col: 0,
            msg: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(record.len());
        for (ci, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row: ri + 1,
                col: ci + 1,
                msg: format!("not a number: {field:?}"),
            })?;
            row.push(v);
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::Parse {
                    row: ri + 1,
                    col: row.len(),
                    msg: format!("ragged row: expected {w} fields, got {}", row.len()),
                });
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    DataMatrix::from_rows(&rows)
}

/// Writes a matrix as a plain numeric CSV (no header).
pub fn write_csv(path: impl AsRef<Path>, data: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path.as_ref())
        .map_err(|e| Error::invalid(format!("cannot write CSV: {e}")))?;
    for i in 0..data.nrows() {
        let row: Vec<String> = (0..data.ncols()).map(|j| format!("{:?}", data[(i, j)])).collect();
        w.write_record(&row)
            .map_err(|e| Error::invalid(format!("CSV write failed: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Seeded permutation partition of the row indices. Sizes are floor(frac * N)
/// with the remainder assigned to train, then validation.
pub fn split(
    data: &DataMatrix,
    spec: &SplitSpec,
) -> Result<(DataMatrix, DataMatrix, DataMatrix)> {
    let (train_idx, val_idx, test_idx) = split_indices(data.nrows(), spec)?;
    Ok((
        data.select_rows(&train_idx),
        data.select_rows(&val_idx),
        data.select_rows(&test_idx),
    ))
}

/// Index-level variant of [`split`]; useful when labels must be split in sync.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(spec.seed, STREAM_SPLIT);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let mut n_train = (spec.train_frac * n as f64).floor() as usize;
    let mut n_val = (spec.val_frac * n as f64).floor() as usize;
    let n_test = (spec.test_frac * n as f64).floor() as usize;
    let mut rem = n - n_train - n_val - n_test;
    while rem > 0 {
        if rem > 0 {
            n_train += 1;
            rem -= 1;
        }
        if rem > 0 {
            n_val += 1;
            rem -= 1;
        }
    }
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    Ok((train, val, test))
}
