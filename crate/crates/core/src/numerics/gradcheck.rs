use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{ParamStore, Tape, Var};

/// Compares tape gradients of a scalar function against central differences.
///
/// Returns the maximum over checked coordinates of
/// `|analytic − numeric| / max(1, |analytic|)`. With `max_coords = Some(k)`
/// at most `k` coordinates per parameter are sampled (seeded); otherwise
/// every coordinate is checked. Parameter values are restored afterwards and
/// gradients are left zeroed.
pub fn grad_check<F>(
    store: &mut ParamStore,
    f: F,
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        tape.scalar_value(loss)
    };

    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<_> = store.iter().map(|p| p.gradient.clone()).collect();
    store.zero_grad();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let mut coords: Vec<usize> = (0..n).collect();
        if let Some(k) = max_coords {
            coords.shuffle(&mut rng);
            coords.truncate(k);
        }
        for c in coords {
            let orig = store.value(id).data()[c];
            store.get_mut(id).value.data_mut()[c] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.index()].data()[c];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        let id = store.add("w", DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let err = grad_check(
            &mut store,
            |tape, store| {
                let _ = tape.param(store, id);
                Ok(tape.constant(DenseMatrix::scalar(4.2)))
            },
            1e-5,
            None,
            0,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn linear_function_is_exact() {
        let mut store = ParamStore::new();
        let id = store.add("w", DenseMatrix::from_rows(&[vec![0.3, -1.2, 2.5]]).unwrap());
        let err = grad_check(
            &mut store,
            |tape, store| {
                let w = tape.param(store, id);
                let s = tape.affine(w, 3.0, 1.0);
                Ok(tape.sum(s))
            },
            1e-5,
            None,
            0,
        )
        .unwrap();
        assert!(err <= 1e-8, "{err}");
    }
}
