use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;

use crate::autodiff::{NodeId, Tape};
use crate::diffusion::Conditioning;
use crate::error::{ensure, Result};
use crate::nn::{forward_mlp, mlp_on_tape, xavier_init, Activation, BoundParams, MlpArch, ParamSet};
use crate::optim::{sgd_step, OptState};
use crate::tensor::Tensor;

use super::losses::PROB_CLAMP;

/// Two-way classifier over the concatenated pair `(first, second)`.
/// Class 0 means the teacher output sits in the first slot, class 1 means
/// the student output does.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub arch: MlpArch,
    pub params: ParamSet,
    pub data_dim: usize,
    pub cond: Conditioning,
}

impl Discriminator {
    pub fn new(data_dim: usize, cond: Conditioning, hidden: &[usize], seed: u64) -> Result<Self> {
        let arch = MlpArch::new(2 * data_dim + cond.width(), hidden, 2, Activation::Silu);
        let params = xavier_init(&arch.layer_dims(), seed)?;
        Ok(Self { arch, params, data_dim, cond })
    }

    fn cond_matrix(&self, steps: &[usize], labels: &[Option<usize>]) -> Result<Tensor> {
        self.cond.matrix(steps, labels)
    }

    /// Clamped probability of class 1 for each row, on a tape.
    pub fn student_prob_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        first: NodeId,
        second: NodeId,
        steps: &[usize],
        labels: &[Option<usize>],
    ) -> Result<NodeId> {
        let pair = tape.concat_cols(first, second)?;
        let input = if self.cond.width() > 0 {
            let c = tape.leaf(self.cond_matrix(steps, labels)?);
            tape.concat_cols(pair, c)?
        } else {
            pair
        };
        let logits = mlp_on_tape(tape, &self.arch, bound, input)?;
        let probs = tape.softmax_rows(logits);
        let p = tape.select_col(probs, 1)?;
        Ok(tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP))
    }

    /// Unclamped class probabilities, `n x 2`.
    pub fn probs(&self, first: &Tensor, second: &Tensor, steps: &[usize], labels: &[Option<usize>]) -> Result<Tensor> {
        ensure!(first.dims2() == second.dims2(), "pair shapes differ");
        let mut input = first.concat_cols(second)?;
        if self.cond.width() > 0 {
            input = input.concat_cols(&self.cond_matrix(steps, labels)?)?;
        }
        let logits = forward_mlp(&self.params, &input, &self.arch)?;
        let (n, _) = logits.dims2();
        let mut data = Vec::with_capacity(2 * n);
        for i in 0..n {
            let (a, b) = (logits.get(i, 0), logits.get(i, 1));
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            data.push(ea / (ea + eb));
            data.push(eb / (ea + eb));
        }
        Tensor::matrix(n, 2, data)
    }
}

/// Cross-entropy of the discriminator over both orderings of each pair:
/// `(teacher, student)` labeled class 0 and `(student, teacher)` class 1.
/// Returns the loss node (scalar mean over `2n` classifications).
fn objective_on_tape(
    disc: &Discriminator,
    tape: &mut Tape,
    bound: &BoundParams,
    x_teacher: &Tensor,
    x_student: &Tensor,
    steps: &[usize],
    labels: &[Option<usize>],
) -> Result<NodeId> {
    ensure!(x_teacher.dims2() == x_student.dims2(), "teacher and student batches differ in shape");
    let t = tape.leaf(x_teacher.clone());
    let s = tape.leaf(x_student.clone());
    let p_ts = disc.student_prob_on_tape(tape, bound, t, s, steps, labels)?;
    let p_st = disc.student_prob_on_tape(tape, bound, s, t, steps, labels)?;
    let not_ts = tape.affine(p_ts, -1.0, 1.0);
    let ll_ts = tape.ln(not_ts);
    let ll_st = tape.ln(p_st);
    let both = tape.add(ll_ts, ll_st)?;
    let mean = tape.mean_all(both);
    Ok(tape.scale(mean, -0.5))
}

/// Discriminator training loss and its parameter gradient.
pub fn discriminator_objective(
    disc: &Discriminator,
    x_teacher: &Tensor,
    x_student: &Tensor,
    steps: &[usize],
    labels: &[Option<usize>],
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = disc.params.bind(&mut tape);
    let loss = objective_on_tape(disc, &mut tape, &bound, x_teacher, x_student, steps, labels)?;
    let value = tape.value(loss).data()[0];
    Ok((value, bound.gradient(&tape, loss)?))
}

/// One plain SGD step on the discriminator (it is never released, so no noise).
pub fn discriminator_update(
    disc: &Discriminator,
    x_teacher: &Tensor,
    x_student: &Tensor,
    steps: &[usize],
    labels: &[Option<usize>],
    state: &mut OptState,
) -> Result<(Discriminator, f64)> {
    let (loss, grad) = discriminator_objective(disc, x_teacher, x_student, steps, labels)?;
    let params = sgd_step(&disc.params, &grad, state)?;
    Ok((Discriminator { params, ..disc.clone() }, loss))
}

/// Fraction of correct calls over both orderings.
pub fn discriminator_accuracy(
    disc: &Discriminator,
    x_teacher: &Tensor,
    x_student: &Tensor,
    steps: &[usize],
    labels: &[Option<usize>],
) -> Result<f64> {
    let ts = disc.probs(x_teacher, x_student, steps, labels)?;
    let st = disc.probs(x_student, x_teacher, steps, labels)?;
    let n = ts.rows();
    let correct = (0..n).filter(|&i| ts.get(i, 1) < 0.5).count() + (0..n).filter(|&i| st.get(i, 1) > 0.5).count();
    Ok(correct as f64 / (2 * n) as f64)
}
