//! Plain sequential LSTM, computed without the tape.
//!
//! This is the equivalence oracle for the tree cell: on a single-child
//! chain the Child-Sum recurrence degenerates to exactly this recurrence,
//! so the two implementations must agree state for state. Keeping this
//! version tape-free makes the check independent of the autodiff path.

use crate::error::{Error, Result};
use crate::model::TreeLstmCell;
use crate::tensor::{sigmoid, Scalar, Tensor};

/// Gate weights for the sequential reference cell: the same matrix and
/// bias layout as the tree cell, held as plain tensors.
#[derive(Clone, Debug)]
pub struct SeqLstmWeights<T> {
    pub w_input: Tensor<T>,
    pub u_input: Tensor<T>,
    pub b_input: Tensor<T>,
    pub w_forget: Tensor<T>,
    pub u_forget: Tensor<T>,
    pub b_forget: Tensor<T>,
    pub w_output: Tensor<T>,
    pub u_output: Tensor<T>,
    pub b_output: Tensor<T>,
    pub w_update: Tensor<T>,
    pub u_update: Tensor<T>,
    pub b_update: Tensor<T>,
}

impl<T: Scalar> SeqLstmWeights<T> {
    /// Copies the tree cell's weights into a sequential instance.
    pub fn from_cell(cell: &TreeLstmCell<T>) -> Self {
        SeqLstmWeights {
            w_input: cell.input.w.value(),
            u_input: cell.input.u.value(),
            b_input: cell.input.b.value(),
            w_forget: cell.forget.w.value(),
            u_forget: cell.forget.u.value(),
            b_forget: cell.forget.b.value(),
            w_output: cell.output.w.value(),
            u_output: cell.output.u.value(),
            b_output: cell.output.b.value(),
            w_update: cell.update.w.value(),
            u_update: cell.update.u.value(),
            b_update: cell.update.b.value(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_input.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_input.cols()
    }
}

/// Hidden and cell vectors after one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqState<T> {
    pub hidden: Vec<T>,
    pub cell: Vec<T>,
}

/// Runs the LSTM recurrence over `inputs` from zero initial state,
/// returning one state per time step.
pub fn seq_forward<T: Scalar>(
    weights: &SeqLstmWeights<T>,
    inputs: &[Vec<T>],
) -> Result<Vec<SeqState<T>>> {
    let hidden_size = weights.hidden_size();
    let input_size = weights.input_size();
    let mut states = Vec::with_capacity(inputs.len());
    let mut h = vec![T::zero(); hidden_size];
    let mut c = vec![T::zero(); hidden_size];

    for x in inputs {
        if x.len() != input_size {
            return Err(Error::Shape {
                context: "seq_forward input".into(),
                left: vec![input_size],
                right: vec![x.len()],
            });
        }
        let i = gate(&weights.w_input, x, &weights.u_input, &h, &weights.b_input, sigmoid);
        let f = gate(&weights.w_forget, x, &weights.u_forget, &h, &weights.b_forget, sigmoid);
        let o = gate(&weights.w_output, x, &weights.u_output, &h, &weights.b_output, sigmoid);
        let u = gate(&weights.w_update, x, &weights.u_update, &h, &weights.b_update, |v| {
            v.tanh()
        });

        let mut c_new = vec![T::zero(); hidden_size];
        for k in 0..hidden_size {
            c_new[k] = i[k] * u[k] + f[k] * c[k];
        }
        let mut h_new = vec![T::zero(); hidden_size];
        for k in 0..hidden_size {
            h_new[k] = o[k] * c_new[k].tanh();
        }
        c = c_new;
        h = h_new;
        states.push(SeqState {
            hidden: h.clone(),
            cell: c.clone(),
        });
    }
    Ok(states)
}

/// `activation((W x + U h) + b)`, accumulated in the same order as the
/// tape's matrix-vector product so chains agree to the last bit.
fn gate<T: Scalar>(
    w: &Tensor<T>,
    x: &[T],
    u: &Tensor<T>,
    h: &[T],
    b: &Tensor<T>,
    activation: impl Fn(T) -> T,
) -> Vec<T> {
    let rows = w.rows();
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let wx = dot(&w.data()[r * w.cols()..(r + 1) * w.cols()], x);
        let uh = dot(&u.data()[r * u.cols()..(r + 1) * u.cols()], h);
        out.push(activation((wx + uh) + b.data()[r]));
    }
    out
}

fn dot<T: Scalar>(row: &[T], v: &[T]) -> T {
    let mut acc = T::zero();
    for (a, b) in row.iter().zip(v) {
        acc = acc + *a * *b;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_weights(hidden: usize, input: usize) -> SeqLstmWeights<f64> {
        SeqLstmWeights {
            w_input: Tensor::zeros(&[hidden, input]),
            u_input: Tensor::zeros(&[hidden, hidden]),
            b_input: Tensor::zeros(&[hidden]),
            w_forget: Tensor::zeros(&[hidden, input]),
            u_forget: Tensor::zeros(&[hidden, hidden]),
            b_forget: Tensor::zeros(&[hidden]),
            w_output: Tensor::zeros(&[hidden, input]),
            u_output: Tensor::zeros(&[hidden, hidden]),
            b_output: Tensor::zeros(&[hidden]),
            w_update: Tensor::zeros(&[hidden, input]),
            u_update: Tensor::zeros(&[hidden, hidden]),
            b_update: Tensor::zeros(&[hidden]),
        }
    }

    #[test]
    fn zero_weights_give_zero_hidden_states() {
        let w = zero_weights(3, 2);
        let inputs = vec![vec![1.0, -1.0], vec![2.0, 0.5], vec![0.0, 0.0]];
        let states = seq_forward(&w, &inputs).unwrap();
        for s in &states {
            assert!(s.hidden.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_state_per_input() {
        let w = zero_weights(2, 2);
        for n in 1..6 {
            let inputs = vec![vec![0.5, 0.5]; n];
            assert_eq!(seq_forward(&w, &inputs).unwrap().len(), n);
        }
    }

    #[test]
    fn input_size_mismatch_is_reported() {
        let w = zero_weights(2, 3);
        let inputs = vec![vec![1.0, 2.0]];
        assert!(matches!(
            seq_forward(&w, &inputs),
            Err(Error::Shape { .. })
        ));
    }
}
