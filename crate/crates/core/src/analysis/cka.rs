use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssdn_engine::{Real, Tensor};

use crate::error::{contract, Error, Result};

/// Probe samples by flattened features.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    values: DMatrix<f64>,
    centered: bool,
}

impl ActivationMatrix {
    /// Row-major `rows × cols` values.
    pub fn new(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if rows < 2 {
            return Err(contract(format!("activation matrix needs at least 2 rows, got {rows}")));
        }
        if data.len() != rows * cols || cols == 0 {
            return Err(contract(format!("activation matrix {rows}×{cols} from {} values", data.len())));
        }
        Ok(ActivationMatrix { values: DMatrix::from_row_slice(rows, cols, data), centered: false })
    }

    /// Flattens `[N, ...]` into `N` rows.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let rows = *t.shape().first().ok_or_else(|| contract("activation tensor has no batch axis"))?;
        let cols = t.numel() / rows.max(1);
        Self::new(rows, cols, &t.to_f64_vec())
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Subtracts each column mean.
    pub fn centered(mut self) -> Self {
        if !self.centered {
            for mut col in self.values.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
            self.centered = true;
        }
        self
    }

    /// Keeps at most `max` columns, chosen by `seed` and kept in order. The
    /// choice depends only on `(cols, max, seed)`, so two matrices of equal
    /// width keep the same columns.
    pub fn subsample_columns(self, max: usize, seed: u64) -> Self {
        if self.cols() <= max {
            return self;
        }
        let mut keep = sample(&mut ChaCha8Rng::seed_from_u64(seed), self.cols(), max).into_vec();
        keep.sort_unstable();
        ActivationMatrix { values: self.values.select_columns(keep.iter()), centered: self.centered }
    }
}

/// Linear CKA, `‖YᵀX‖²_F / (‖XᵀX‖_F · ‖YᵀY‖_F)`, on column-centered
/// copies. Evaluated through the `n×n` Gram matrices, which give the same
/// value and are smaller when features outnumber samples.
pub fn linear_cka(x: &ActivationMatrix, y: &ActivationMatrix) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(contract(format!("CKA: {} rows vs {}", x.rows(), y.rows())));
    }
    let x = x.clone().centered();
    let y = y.clone().centered();
    let (xv, yv) = (&x.values, &y.values);
    let n = x.rows();
    let (cross, xx, yy) = if x.cols() * y.cols() <= n * n {
        let c = yv.transpose() * xv;
        let a = xv.transpose() * xv;
        let b = yv.transpose() * yv;
        (c.dot(&c), a.dot(&a), b.dot(&b))
    } else {
        let k = xv * xv.transpose();
        let l = yv * yv.transpose();
        (k.dot(&l), k.dot(&k), l.dot(&l))
    };
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::Degenerate("CKA of a matrix with zero centered variance".into()));
    }
    Ok(cross / (xx * yy).sqrt())
}
