use serde::{Deserialize, Serialize};

use super::{NnError, Tensor2};

/// How a `T × d` block of hidden states is reduced to one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Column-wise mean over all positions.
    #[default]
    Mean,
    /// Hidden state at the final position.
    Eos,
}

impl PoolMode {
    pub fn as_byte(self) -> u8 {
        match self {
            PoolMode::Mean => 0,
            PoolMode::Eos => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(PoolMode::Mean),
            1 => Some(PoolMode::Eos),
            _ => None,
        }
    }
}

pub fn pool(states: &Tensor2, mode: PoolMode) -> Result<Vec<f64>, NnError> {
    let t = states.rows();
    if t == 0 {
        return Err(NnError::EmptySequence);
    }
    Ok(match mode {
        PoolMode::Eos => states.row(t - 1).to_vec(),
        PoolMode::Mean => {
            let mut out = vec![0.0; states.cols()];
            states.sum_rows_into(&mut out);
            out.iter_mut().for_each(|v| *v /= t as f64);
            out
        }
    })
}

/// Gradient of [`pool`] with respect to its `rows × dv.len()` input.
pub fn pool_backward(rows: usize, dv: &[f64], mode: PoolMode) -> Tensor2 {
    let mut dx = Tensor2::zeros(rows, dv.len());
    match mode {
        PoolMode::Eos => dx.row_mut(rows - 1).copy_from_slice(dv),
        PoolMode::Mean => {
            let inv = 1.0 / rows as f64;
            for r in 0..rows {
                for (o, g) in dx.row_mut(r).iter_mut().zip(dv) {
                    *o = g * inv;
                }
            }
        }
    }
    dx
}
