//! Dense two-dimensional tensors with tape-based reverse-mode differentiation.
//!
//! The engine covers exactly what the estimator needs: matrix products,
//! concatenation, elementwise arithmetic, ReLU, per-segment softmax with a
//! temperature, segment sums and means for neighbourhood aggregation and
//! pooling, layer normalization, and L1/L2 reductions. Graph sparsity is
//! expressed through explicit row-index lists rather than sparse matrices.
//!
//! ```
//! use substation_gnn::tensor::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Matrix::from_vec(1, 2, vec![2.0, -1.0]).unwrap()).unwrap();
//! let x = tape.constant(Matrix::from_vec(2, 1, vec![3.0, 4.0]).unwrap()).unwrap();
//! let y = tape.matmul(w, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[3.0, 4.0]);
//! ```

mod matrix;
mod tape;

use thiserror::Error;

pub use matrix::Matrix;
pub use tape::{Gradients, Index, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: index {index} out of range for {len} rows")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("softmax temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalar((usize, usize)),
    #[error("tape already consumed by a previous backward pass")]
    Consumed,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Central-difference oracle: perturbs each entry of each input and
    /// re-evaluates `f` from scratch, independent of the tape's backward pass.
    fn check_grad(inputs: &[Matrix], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone()).unwrap()).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out).unwrap();

        let eps = 1e-5;
        let eval = |ins: &[Matrix]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ins.iter().map(|m| t.constant(m.clone()).unwrap()).collect();
            let o = f(&mut t, &vs);
            t.value(o).item()
        };
        for (k, m) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()));
            for idx in 0..m.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[idx] += eps;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[idx] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = analytic.data()[idx];
                let scale = a.abs().max(numeric.abs()).max(1e-5);
                assert!(
                    (a - numeric).abs() / scale < 1e-4,
                    "input {k} entry {idx}: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::row_vector(&[-3.0, 2.0])).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn segment_sum_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[1.0, 2.0, 3.0])).unwrap();
        let y = tape.segment_sum(x, Arc::from(vec![0, 0, 1]), 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 3.0]);
    }

    #[test]
    fn singleton_softmax_is_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[-7.3, 0.4, 1.2])).unwrap();
        let y = tape.segment_softmax(x, Arc::from(vec![0, 1, 1]), 2, 0.5).unwrap();
        assert_eq!(tape.value(y).data()[0], 1.0);
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[1.0])).unwrap();
        for tau in [0.0, -1.0] {
            assert_eq!(
                tape.segment_softmax(x, Arc::from(vec![0]), 1, tau).unwrap_err(),
                TensorError::Temperature(tau)
            );
        }
    }

    #[test]
    fn linear_map_gradient_is_input_per_row() {
        let mut tape = Tape::new();
        let w = tape.param(Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap()).unwrap();
        let x = tape.constant(Matrix::column(&[1.0, -2.0, 0.5])).unwrap();
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
    }

    #[test]
    fn second_backward_fails() {
        let mut tape = Tape::new();
        let w = tape.param(Matrix::scalar(2.0)).unwrap();
        let y = tape.mul(w, w).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.backward(y).unwrap_err(), TensorError::Consumed);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::new();
        let w = tape.param(Matrix::zeros(2, 1)).unwrap();
        assert!(matches!(tape.backward(w), Err(TensorError::NonScalar((2, 1)))));
    }

    #[test]
    fn nan_is_rejected() {
        let mut tape = Tape::new();
        assert!(tape.constant(Matrix::scalar(f64::NAN)).is_err());
        let big = tape.constant(Matrix::scalar(1e200)).unwrap();
        assert_eq!(tape.mul(big, big).unwrap_err(), TensorError::NonFinite { op: "mul" });
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Matrix::zeros(2, 2)).unwrap();
        let b = tape.constant(Matrix::zeros(3, 2)).unwrap();
        let err = tape.add(a, b).unwrap_err();
        assert_eq!(err.to_string(), "add: shape mismatch (2, 2) vs (3, 2)");
    }

    #[test]
    fn layer_norm_gradcheck_on_four_vector() {
        let x = Matrix::row_vector(&[0.3, -1.2, 2.5, 0.7]);
        let w = Matrix::row_vector(&[0.9, -0.4, 1.3, 0.2]);
        check_grad(&[x, w], |t, v| {
            let n = t.layer_norm(v[0], 1e-5).unwrap();
            let p = t.mul(n, v[1]).unwrap();
            t.sum(p).unwrap()
        });
    }

    #[test]
    fn composite_gradcheck_random_points() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random(&mut rng, 5, 4);
            let w = random(&mut rng, 9, 3);
            let z = random(&mut rng, 6, 1);
            let row = random(&mut rng, 1, 3);
            let col = random(&mut rng, 6, 1);
            let src: Index = Arc::from(vec![0, 1, 2, 3, 4, 0]);
            let dst: Index = Arc::from(vec![1, 0, 3, 2, 2, 4]);
            check_grad(&[h, w, z, row, col], move |t, v| {
                let hs = t.gather(v[0], src.clone()).unwrap();
                let hd = t.gather(v[0], dst.clone()).unwrap();
                let cat = t.concat(&[hs, hd, v[2]]).unwrap();
                let m = t.matmul(cat, v[1]).unwrap();
                let m = t.mul_row(m, v[3]).unwrap();
                let m = t.relu(m).unwrap();
                let alpha = t.segment_softmax(v[4], dst.clone(), 5, 0.7).unwrap();
                let m = t.mul_col(m, alpha).unwrap();
                let agg = t.segment_sum(m, dst.clone(), 5).unwrap();
                let pooled = t.segment_mean(agg, Arc::from(vec![0, 0, 1, 1, 1]), 2).unwrap();
                let pooled = t.add_row(pooled, v[3]).unwrap();
                let n = t.layer_norm(pooled, 1e-5).unwrap();
                let sq = t.sum_squares(n).unwrap();
                let a = t.abs(agg).unwrap();
                let l1 = t.mean(a).unwrap();
                let s = t.add(sq, l1).unwrap();
                let s2 = t.scale(s, 0.5).unwrap();
                t.sub(s2, l1).unwrap()
            });
        }
    }

    #[test]
    fn concat_rows_gradcheck() {
        let a = Matrix::from_vec(2, 2, vec![0.5, -0.3, 1.1, 0.2]).unwrap();
        let b = Matrix::row_vector(&[0.7, -0.9]);
        let w = Matrix::column(&[1.5, -0.5]);
        check_grad(&[a, b, w], |t, v| {
            let c = t.concat_rows(&[v[0], v[1]]).unwrap();
            let y = t.matmul(c, v[2]).unwrap();
            let y = t.mul(y, y).unwrap();
            t.sum(y).unwrap()
        });
    }

    #[test]
    fn softmax_shift_invariance_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = random(&mut rng, 7, 1);
        let seg: Index = Arc::from(vec![0, 0, 1, 1, 1, 2, 2]);
        let mut shifted = logits.clone();
        for (e, s) in seg.iter().enumerate() {
            shifted.data_mut()[e] += [10.0, -4.0, 0.25][*s];
        }
        let mut tape = Tape::new();
        let a = tape.constant(logits).unwrap();
        let b = tape.constant(shifted).unwrap();
        let ya = tape.segment_softmax(a, seg.clone(), 3, 1.3).unwrap();
        let yb = tape.segment_softmax(b, seg.clone(), 3, 1.3).unwrap();
        let mut sums = [0.0; 3];
        for (e, s) in seg.iter().enumerate() {
            sums[*s] += tape.value(ya).data()[e];
            assert!((tape.value(ya).data()[e] - tape.value(yb).data()[e]).abs() < 1e-12);
        }
        for s in sums {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
