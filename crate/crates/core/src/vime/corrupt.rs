use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::nn::{Matrix, RowSource};
use crate::rng::Rng;

use super::VimeError;

/// Where replacement values for masked entries come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionScope {
    /// Another row of the same batch.
    #[default]
    Batch,
    /// Any row of the full training pool.
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub p_m: f64,
    pub scope: CorruptionScope,
}

impl CorruptionSpec {
    pub fn new(p_m: f64) -> Self {
        Self {
            p_m,
            scope: CorruptionScope::Batch,
        }
    }

    pub fn validate(&self) -> Result<(), VimeError> {
        if (0.0..=1.0).contains(&self.p_m) {
            Ok(())
        } else {
            Err(VimeError::Config(format!(
                "mask probability {} outside [0, 1]",
                self.p_m
            )))
        }
    }
}

/// Masks each entry with probability `p_m` and replaces masked entries by
/// the same column of a uniformly chosen other row of `x`. Returns the
/// corrupted matrix and the 0/1 mask.
pub fn corrupt(x: &Matrix, p_m: f64, rng: &mut Rng) -> Result<(Matrix, Matrix), VimeError> {
    CorruptionSpec::new(p_m).validate()?;
    let (b, d) = x.shape();
    if p_m == 0.0 {
        return Ok((x.clone(), Matrix::zeros(b, d)));
    }
    if b < 2 {
        return Err(VimeError::Config(format!(
            "corruption needs at least 2 rows in a batch, got {b}"
        )));
    }
    let mut out = x.clone();
    let mut mask = Matrix::zeros(b, d);
    for i in 0..b {
        for j in 0..d {
            if rng.random::<f64>() < p_m {
                // Uniform over the b - 1 other rows.
                let mut k = rng.random_range(0..b - 1);
                if k >= i {
                    k += 1;
                }
                out.set(i, j, x.get(k, j));
                mask.set(i, j, 1.0);
            }
        }
    }
    Ok((out, mask))
}

/// Like [`corrupt`], drawing replacement values from any row of `pool`.
pub fn corrupt_from_pool<S: RowSource + ?Sized>(
    x: &Matrix,
    pool: &S,
    p_m: f64,
    rng: &mut Rng,
) -> Result<(Matrix, Matrix), VimeError> {
    CorruptionSpec::new(p_m).validate()?;
    let (b, d) = x.shape();
    if pool.width() != d {
        return Err(VimeError::Config(format!(
            "pool width {} differs from batch width {d}",
            pool.width()
        )));
    }
    if p_m == 0.0 {
        return Ok((x.clone(), Matrix::zeros(b, d)));
    }
    if pool.n_rows() < 2 {
        return Err(VimeError::Config("corruption pool needs at least 2 rows".into()));
    }
    let mut out = x.clone();
    let mut mask = Matrix::zeros(b, d);
    let mut picks = Vec::new();
    for i in 0..b {
        for j in 0..d {
            if rng.random::<f64>() < p_m {
                picks.push((i, j, rng.random_range(0..pool.n_rows())));
            }
        }
    }
    let donors: Vec<usize> = picks.iter().map(|p| p.2).collect();
    let rows = pool.gather(&donors);
    for (n, &(i, j, _)) in picks.iter().enumerate() {
        out.set(i, j, rows.get(n, j));
        mask.set(i, j, 1.0);
    }
    Ok((out, mask))
}
