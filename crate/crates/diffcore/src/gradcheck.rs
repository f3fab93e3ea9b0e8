use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which coordinates of the parameter tensor to probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinates {
    All,
    /// A seeded random subset of at most this many coordinates.
    Sample {
        count: usize,
        seed: u64,
    },
}

/// Compares the tape gradient of `f` at `theta` with central differences.
///
/// Returns the worst per-coordinate relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)` where the floor
/// is `1e-3` times the largest analytic gradient entry. Central differences
/// carry rounding noise of order `eps * |f| / step` on every coordinate, so
/// entries far below the gradient's scale are compared against that scale
/// instead of against themselves.
pub fn grad_check<T, F>(f: F, theta: &Tensor<T>, step: T, coords: Coordinates) -> Result<T>
where
    T: Scalar,
    F: for<'t> Fn(&Var<'t, T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(theta.clone());
    let loss = f(&leaf)?;
    tape.backward(&loss)?;
    let analytic = tape.grad(&leaf).unwrap_or_else(|| Tensor::zeros_like(theta));

    let probe = |shifted: Tensor<T>| -> Result<T> {
        let tape = Tape::inference();
        let v = tape.constant(shifted);
        f(&v)?.value().item()
    };

    let indices: Vec<usize> = match coords {
        Coordinates::All => (0..theta.len()).collect(),
        Coordinates::Sample { count, seed } if count < theta.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, theta.len(), count).into_vec();
            idx.sort_unstable();
            idx
        }
        Coordinates::Sample { .. } => (0..theta.len()).collect(),
    };

    let floor = (analytic.max_abs() * T::from_f64c(1e-3)).max(T::min_positive_value());
    let two = T::from_f64c(2.0);
    let mut worst = T::zero();
    for i in indices {
        let mut plus = theta.clone();
        plus.data_mut()[i] += step;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= step;
        let numeric = (probe(plus)? - probe(minus)?) / (two * step);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
