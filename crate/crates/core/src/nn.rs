//! Multilayer perceptrons, named parameter sets and per-example gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{ensure, invalid, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(invalid(format!("unknown activation '{other}'"))),
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Silu => v / (1.0 + (-v).exp()),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    fn on_tape(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Silu => tape.silu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// Fully connected network shape. The activation is applied after every
/// hidden layer; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpArch {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        Self { input_dim, hidden: hidden.to_vec(), output_dim, activation }
    }

    /// `(fan_in, fan_out)` for each layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Compact textual form, e.g. `mlp:4-64-64-2:silu`.
    pub fn describe(&self) -> String {
        let mut s = format!("mlp:{}", self.input_dim);
        for h in &self.hidden {
            s.push_str(&format!("-{h}"));
        }
        s.push_str(&format!("-{}:{}", self.output_dim, self.activation.name()));
        s
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let (Some("mlp"), Some(widths), Some(act), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(invalid(format!("malformed architecture '{s}'")));
        };
        let widths = widths
            .split('-')
            .map(|w| w.parse::<usize>().map_err(|_| invalid(format!("bad width '{w}'"))))
            .collect::<Result<Vec<_>>>()?;
        ensure!(widths.len() >= 2, "architecture needs input and output widths");
        ensure!(widths.iter().all(|&w| w > 0), "architecture widths must be positive");
        Ok(Self {
            input_dim: widths[0],
            hidden: widths[1..widths.len() - 1].to_vec(),
            output_dim: widths[widths.len() - 1],
            activation: Activation::from_name(act)?,
        })
    }
}

/// Named parameter tensors of one network, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        ensure!(!entries.is_empty(), "parameter set is empty");
        for (i, (name, _)) in entries.iter().enumerate() {
            ensure!(
                entries[..i].iter().all(|(n, _)| n != name),
                "duplicate parameter name '{}'",
                name
            );
        }
        let set = Self { entries };
        ensure!(!set.is_empty(), "parameter set has no scalars");
        Ok(set)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    /// Same layout, new values.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        ensure!(flat.len() == self.len(), "expected {} values, got {}", self.len(), flat.len());
        let mut off = 0;
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| {
                let v = flat[off..off + t.len()].to_vec();
                off += t.len();
                (n.clone(), Tensor::new(t.shape().to_vec(), v).unwrap())
            })
            .collect();
        Ok(ParamSet { entries })
    }

    /// Record every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams { ids: self.entries.iter().map(|(_, t)| tape.leaf(t.clone())).collect() }
    }
}

/// Tape nodes holding a [`ParamSet`], in the same order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    ids: Vec<NodeId>,
}

impl BoundParams {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Concatenated gradient of `output` over all bound parameters.
    pub fn gradient(&self, tape: &Tape, output: NodeId) -> Result<Vec<f64>> {
        let grads = tape.backward(output)?;
        let mut out = Vec::new();
        for &id in &self.ids {
            out.extend_from_slice(grads.get_or_zeros(id, tape.value(id)).data());
        }
        Ok(out)
    }
}

fn layer_names(i: usize) -> (String, String) {
    (format!("layer{i}.weight"), format!("layer{i}.bias"))
}

/// Xavier-uniform weights, zero biases.
pub fn xavier_init(layer_dims: &[(usize, usize)], seed: u64) -> Result<ParamSet> {
    ensure!(!layer_dims.is_empty(), "no layers");
    ensure!(
        layer_dims.iter().all(|&(i, o)| i > 0 && o > 0),
        "layer dimensions must be positive"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(2 * layer_dims.len());
    for (i, &(fan_in, fan_out)) in layer_dims.iter().enumerate() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        let (wn, bn) = layer_names(i);
        entries.push((wn, Tensor::matrix(fan_out, fan_in, w)?));
        entries.push((bn, Tensor::zeros(&[1, fan_out])));
    }
    ParamSet::new(entries)
}

fn check_layout(params: &ParamSet, arch: &MlpArch) -> Result<()> {
    let dims = arch.layer_dims();
    ensure!(
        params.entries.len() == 2 * dims.len(),
        "parameter set has {} tensors, architecture needs {}",
        params.entries.len(),
        2 * dims.len()
    );
    for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let w = &params.entries[2 * i].1;
        let b = &params.entries[2 * i + 1].1;
        ensure!(w.dims2() == (fan_out, fan_in), "layer {} weight shape {:?}", i, w.shape());
        ensure!(b.dims2() == (1, fan_out), "layer {} bias shape {:?}", i, b.shape());
    }
    Ok(())
}

/// Plain forward pass over a batch (one example per row).
pub fn forward_mlp(params: &ParamSet, input: &Tensor, arch: &MlpArch) -> Result<Tensor> {
    check_layout(params, arch)?;
    let (n, d) = input.dims2();
    ensure!(d == arch.input_dim, "input has {} features, network expects {}", d, arch.input_dim);
    let dims = arch.layer_dims();
    let mut h = input.data().to_vec();
    for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let w = params.entries[2 * i].1.data();
        let b = params.entries[2 * i + 1].1.data();
        let last = i + 1 == dims.len();
        let mut next = vec![0.0; n * fan_out];
        for s in 0..n {
            let x = &h[s * fan_in..(s + 1) * fan_in];
            for o in 0..fan_out {
                let wr = &w[o * fan_in..(o + 1) * fan_in];
                let z = x.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>() + b[o];
                next[s * fan_out + o] = if last { z } else { arch.activation.apply(z) };
            }
        }
        h = next;
    }
    Tensor::matrix(n, arch.output_dim, h)
}

/// Forward pass recorded on a tape.
pub fn mlp_on_tape(tape: &mut Tape, arch: &MlpArch, params: &BoundParams, input: NodeId) -> Result<NodeId> {
    let layers = arch.layer_dims().len();
    ensure!(params.ids.len() == 2 * layers, "bound parameters do not match architecture");
    ensure!(
        tape.value(input).cols() == arch.input_dim,
        "input has {} features, network expects {}",
        tape.value(input).cols(),
        arch.input_dim
    );
    let mut h = input;
    for i in 0..layers {
        h = tape.linear(h, params.ids[2 * i], Some(params.ids[2 * i + 1]))?;
        if i + 1 < layers {
            h = arch.activation.on_tape(tape, h);
        }
    }
    Ok(h)
}

/// One gradient row per example, columns in [`ParamSet::flatten`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleGrads {
    batch: usize,
    params: usize,
    data: Vec<f64>,
}

impl PerExampleGrads {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        ensure!(!rows.is_empty(), "no gradient rows");
        let params = rows[0].len();
        ensure!(rows.iter().all(|r| r.len() == params), "ragged gradient rows");
        Ok(Self { batch: rows.len(), params, data: rows.concat() })
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn param_count(&self) -> usize {
        self.params
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.params..(i + 1) * self.params]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.params)
    }

    pub fn sum_rows(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.params];
        for r in self.rows() {
            s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        s
    }

    pub fn mean_rows(&self) -> Vec<f64> {
        self.sum_rows().into_iter().map(|v| v / self.batch as f64).collect()
    }
}

/// Replays the backward pass once per example. `loss_fn` receives a fresh
/// tape, the bound parameters and the example (a `1 x d` leaf) and must
/// return a scalar node.
pub fn per_example_gradients<F>(params: &ParamSet, batch: &Tensor, loss_fn: F) -> Result<PerExampleGrads>
where
    F: Fn(&mut Tape, &BoundParams, NodeId) -> Result<NodeId>,
{
    ensure!(batch.rows() > 0, "empty batch");
    let rows = (0..batch.rows())
        .map(|i| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let x = tape.leaf(batch.row_tensor(i));
            let loss = loss_fn(&mut tape, &bound, x)?;
            bound.gradient(&tape, loss)
        })
        .collect::<Result<Vec<_>>>()?;
    PerExampleGrads::from_rows(rows)
}
