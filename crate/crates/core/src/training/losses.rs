//! Distillation and adversarial losses for one diffusion step.

use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;

use crate::autodiff::{NodeId, Tape};
use crate::diffusion::{posterior_mean_coefs, NoiseSchedule};
use crate::error::{ensure, Result};
use crate::nn::BoundParams;
use crate::tensor::Tensor;

use super::{Discriminator, ModelTriple};

/// Discriminator probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Weights of the per-step student objective
/// `teacher_mse * MSE(teacher, student) + data_mse * MSE(data, student) + adv * log(1 - D)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub teacher_mse: f64,
    pub data_mse: f64,
    pub adv: f64,
}

fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    ensure!(a.dims2() == b.dims2(), "shape mismatch {:?} vs {:?}", a.shape(), b.shape());
    ensure!(!a.is_empty(), "empty input");
    Ok(a.zip_map(b, |x, y| (x - y) * (x - y))?.sum() / a.len() as f64)
}

/// `MSE(teacher, student) + MSE(data, student)`.
pub fn dis_loss(x_teacher: &Tensor, x_student: &Tensor, x_true_prev: &Tensor) -> Result<f64> {
    Ok(mse(x_teacher, x_student)? + mse(x_true_prev, x_student)?)
}

/// `dis + lambda * adv`.
pub fn combined_loss(dis: f64, adv: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    dis + lambda * adv
}

fn adv_on_tape(
    disc: &Discriminator,
    x_teacher: &Tensor,
    x_student: &Tensor,
    steps: &[usize],
    labels: &[Option<usize>],
) -> Result<(Tape, NodeId, NodeId)> {
    ensure!(x_teacher.dims2() == x_student.dims2(), "teacher and student batches differ in shape");
    let mut tape = Tape::new();
    let bound = disc.params.bind(&mut tape);
    let t = tape.leaf(x_teacher.clone());
    let s = tape.leaf(x_student.clone());
    let p = disc.student_prob_on_tape(&mut tape, &bound, t, s, steps, labels)?;
    let not_p = tape.affine(p, -1.0, 1.0);
    let l = tape.ln(not_p);
    let mean = tape.mean_all(l);
    Ok((tape, mean, s))
}

/// Batch mean of `log(1 - D(concat(teacher, student)))`, the quantity the
/// discriminator is scored on.
pub fn adv_loss_discriminator(
    disc: &Discriminator,
    x_teacher: &Tensor,
    x_student: &Tensor,
    steps: &[usize],
    labels: &[Option<usize>],
) -> Result<f64> {
    let (tape, loss, _) = adv_on_tape(disc, x_teacher, x_student, steps, labels)?;
    Ok(tape.value(loss).data()[0])
}

/// Student-side adversarial loss; same value, gradient taken in the student slot.
pub fn adv_loss_student(
    disc: &Discriminator,
    x_student: &Tensor,
    x_teacher: &Tensor,
    steps: &[usize],
    labels: &[Option<usize>],
) -> Result<f64> {
    adv_loss_discriminator(disc, x_teacher, x_student, steps, labels)
}

/// Gradient of [`adv_loss_student`] with respect to the student outputs.
pub fn adv_loss_student_grad(
    disc: &Discriminator,
    x_student: &Tensor,
    x_teacher: &Tensor,
    steps: &[usize],
    labels: &[Option<usize>],
) -> Result<Tensor> {
    let (tape, loss, s) = adv_on_tape(disc, x_teacher, x_student, steps, labels)?;
    tape.grad_wrt_intermediate(loss, s)
}

/// A student loss recorded on its own tape.
#[derive(Debug, Clone)]
pub struct ExampleLoss {
    pub tape: Tape,
    pub student_params: BoundParams,
    /// Scalar: mean over rows of the per-row objective.
    pub loss: NodeId,
    /// The student's next-step prediction, the point where gradients are clipped.
    pub x_student: NodeId,
    pub dis: f64,
    pub adv: f64,
    pub disc_evaluated: bool,
}

impl ExampleLoss {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).data()[0]
    }
}

/// Record the student objective at step `r` for rows of `x_r`.
/// `x_teacher` and `x_true_prev` are constants.
#[allow(clippy::too_many_arguments)]
pub fn example_loss_on_tape(
    models: &ModelTriple,
    schedule: &NoiseSchedule,
    x_r: &Tensor,
    r: usize,
    labels: &[usize],
    x_teacher: &Tensor,
    x_true_prev: &Tensor,
    weights: LossWeights,
) -> Result<ExampleLoss> {
    let (n, d) = x_r.dims2();
    ensure!(labels.len() == n, "need one label per row");
    ensure!(x_teacher.dims2() == (n, d) && x_true_prev.dims2() == (n, d), "target shapes differ from x_r");
    ensure!(r >= 1 && r <= schedule.steps(), "step {} outside 1..={}", r, schedule.steps());
    let steps: Vec<usize> = alloc::vec![r; n];
    let student_labels: Vec<Option<usize>> =
        labels.iter().map(|&y| (models.student.cond.num_classes > 0).then_some(y)).collect();
    let disc_labels: Vec<Option<usize>> = labels.iter().map(|&y| Some(y)).collect();

    let mut tape = Tape::new();
    let bound = models.student.params.bind(&mut tape);
    let xr = tape.leaf(x_r.clone());
    let eps = models.student.noise_on_tape(&mut tape, &bound, xr, &steps, &student_labels)?;
    let (cx, ce) = posterior_mean_coefs(schedule, r);
    let a = tape.scale(xr, cx);
    let b = tape.scale(eps, ce);
    let x_student = tape.add(a, b)?;

    let xt = tape.leaf(x_teacher.clone());
    let per_row_mse = |tape: &mut Tape, target: NodeId| -> Result<NodeId> {
        let diff = tape.sub(x_student, target)?;
        let sq = tape.square(diff);
        let s = tape.sum_cols(sq);
        Ok(tape.scale(s, 1.0 / d as f64))
    };
    let mse_teacher = per_row_mse(&mut tape, xt)?;
    let dis_value_teacher = tape.value(mse_teacher).sum() / n as f64;
    let mut total = tape.scale(mse_teacher, weights.teacher_mse);
    let mut dis = dis_value_teacher;
    if weights.data_mse != 0.0 {
        let xd = tape.leaf(x_true_prev.clone());
        let m = per_row_mse(&mut tape, xd)?;
        dis += tape.value(m).sum() / n as f64;
        let w = tape.scale(m, weights.data_mse);
        total = tape.add(total, w)?;
    }
    let mut adv = 0.0;
    let disc_evaluated = weights.adv != 0.0;
    if disc_evaluated {
        let disc_bound = models.disc.params.bind(&mut tape);
        let p = models.disc.student_prob_on_tape(&mut tape, &disc_bound, xt, x_student, &steps, &disc_labels)?;
        let not_p = tape.affine(p, -1.0, 1.0);
        let l = tape.ln(not_p);
        adv = tape.value(l).sum() / n as f64;
        let w = tape.scale(l, weights.adv);
        total = tape.add(total, w)?;
    }
    let loss = tape.mean_all(total);
    Ok(ExampleLoss { tape, student_params: bound, loss, x_student, dis, adv, disc_evaluated })
}
