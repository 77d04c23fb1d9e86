//! Feed-forward and vanilla recurrent ReLU networks.
//!
//! Layers are indexed from 0 (the first hidden layer); the input layer is
//! not a layer of its own. Memory units store post-activation values, so for
//! ReLU layers every memory value is non-negative.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("empty input sequence")]
    EmptySequence,
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NetworkError> {
        if data.len() != rows * cols {
            return Err(NetworkError::Dimension(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from rows; `cols` is required so that empty
    /// matrices keep their shape.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self, NetworkError> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(NetworkError::Dimension(format!(
                    "row {r} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn column_is_zero(&self, c: usize) -> bool {
        (0..self.rows).all(|r| self.get(r, c) == 0.0)
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// `out += self * x`
    pub fn mul_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (w, xv) in self.row(r).iter().zip(x) {
                acc += w * xv;
            }
            *o += acc;
        }
    }

    /// Keeps only the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(self.rows, cols.len());
        for r in 0..self.rows {
            for (k, &c) in cols.iter().enumerate() {
                m.set(r, k, self.get(r, c));
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::Identity => write!(f, "identity"),
        }
    }
}

/// Reference to a neuron (or its memory unit) by layer and index, both
/// 0-based. Layer 0 is the first hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitRef {
    pub layer: usize,
    pub unit: usize,
}

impl UnitRef {
    pub fn new(layer: usize, unit: usize) -> Self {
        Self { layer, unit }
    }
}

impl fmt::Display for UnitRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.unit)
    }
}

/// Weights of one RNN layer: `v^t = act(W v^t_prev + H m^t + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub weights: Matrix,
    /// Square memory-to-neuron matrix; all-zero for memory-free layers.
    pub memory: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl LayerWeights {
    pub fn new(weights: Matrix, memory: Option<Matrix>, bias: Vec<f64>, activation: Activation) -> Result<Self, NetworkError> {
        let size = weights.rows();
        let memory = memory.unwrap_or_else(|| Matrix::zeros(size, size));
        if memory.rows() != size || memory.cols() != size {
            return Err(NetworkError::Dimension(format!(
                "memory matrix must be {size}x{size}, got {}x{}",
                memory.rows(),
                memory.cols()
            )));
        }
        if bias.len() != size {
            return Err(NetworkError::Dimension(format!("bias has {} entries, expected {size}", bias.len())));
        }
        Ok(Self { weights, memory, bias, activation })
    }

    pub fn size(&self) -> usize {
        self.weights.rows()
    }

    /// Units whose memory feeds at least one neuron.
    pub fn memory_units(&self) -> Vec<usize> {
        (0..self.size()).filter(|&j| !self.memory.column_is_zero(j)).collect()
    }
}

/// A vanilla recurrent network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnNetwork {
    input_dim: usize,
    layers: Vec<LayerWeights>,
}

impl RnnNetwork {
    pub fn new(input_dim: usize, layers: Vec<LayerWeights>) -> Result<Self, NetworkError> {
        if input_dim == 0 {
            return Err(NetworkError::Invalid("input dimension must be positive".into()));
        }
        if layers.len() < 2 {
            return Err(NetworkError::Invalid("an RNN needs at least one hidden layer and an output layer".into()));
        }
        let mut prev = input_dim;
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            if layer.size() == 0 {
                return Err(NetworkError::Invalid(format!("layer {i} is empty")));
            }
            if layer.weights.cols() != prev {
                return Err(NetworkError::Dimension(format!(
                    "layer {i} expects {} inputs but its predecessor has {prev}",
                    layer.weights.cols()
                )));
            }
            if i != last && layer.activation == Activation::Identity {
                return Err(NetworkError::Invalid(format!("hidden layer {i} must use ReLU")));
            }
            prev = layer.size();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerWeights {
        &self.layers[i]
    }

    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.output_layer()].size()
    }

    pub fn memory_units(&self) -> Vec<UnitRef> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.memory_units().into_iter().map(move |j| UnitRef::new(i, j)))
            .collect()
    }

    /// Layers that carry at least one memory unit, ascending.
    pub fn memory_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| !self.layers[i].memory_units().is_empty()).collect()
    }

    /// Inputs, neurons and memory units.
    pub fn neuron_count(&self) -> usize {
        self.input_dim + self.layers.iter().map(|l| l.size()).sum::<usize>() + self.memory_units().len()
    }

    /// Runs the network over an input sequence with memory initialised to 0.
    pub fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<RnnTrace, NetworkError> {
        if inputs.is_empty() {
            return Err(NetworkError::EmptySequence);
        }
        let mut steps: Vec<TraceStep> = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            if x.len() != self.input_dim {
                return Err(NetworkError::Dimension(format!(
                    "input at step {} has {} entries, expected {}",
                    t + 1,
                    x.len(),
                    self.input_dim
                )));
            }
            let memory: Vec<Vec<f64>> = match steps.last() {
                Some(prev) => prev.layers.clone(),
                None => self.layers.iter().map(|l| vec![0.0; l.size()]).collect(),
            };
            let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
            for (i, layer) in self.layers.iter().enumerate() {
                let src = if i == 0 { x.as_slice() } else { values[i - 1].as_slice() };
                let mut z = layer.bias.clone();
                layer.weights.mul_acc(src, &mut z);
                layer.memory.mul_acc(&memory[i], &mut z);
                for v in z.iter_mut() {
                    *v = layer.activation.apply(*v);
                }
                values.push(z);
            }
            steps.push(TraceStep { inputs: x.clone(), layers: values, memory });
        }
        Ok(RnnTrace { steps })
    }
}

/// Values of one evaluation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub inputs: Vec<f64>,
    /// Post-activation values per layer.
    pub layers: Vec<Vec<f64>>,
    /// Memory contents (per layer, per unit) read during this step.
    pub memory: Vec<Vec<f64>>,
}

/// Full assignment of an RNN run, one entry per time step `t = 1..T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnTrace {
    pub steps: Vec<TraceStep>,
}

impl RnnTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step `t`, 1-based.
    pub fn at(&self, t: usize) -> &TraceStep {
        &self.steps[t - 1]
    }

    pub fn outputs(&self, t: usize) -> &[f64] {
        self.at(t).layers.last().expect("network has layers")
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.inputs.clone()).collect()
    }
}

/// Where a block of incoming weights reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Input,
    Layer(usize),
}

/// Dense weights from a contiguous slice `offset..offset+cols` of a source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub source: Source,
    pub offset: usize,
    pub weights: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfLayer {
    pub blocks: Vec<Block>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl FfLayer {
    pub fn size(&self) -> usize {
        self.bias.len()
    }
}

/// Feed-forward network over a DAG of layers. A layer may read any earlier
/// layer or any slice of the input, which covers both skip connections from
/// snapshot memory inputs and the inter-copy edges of unrolled networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfnnNetwork {
    input_dim: usize,
    layers: Vec<FfLayer>,
}

/// A neuron of a feed-forward network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    Input(usize),
    Neuron { layer: usize, unit: usize },
}

impl Node {
    pub fn neuron(layer: usize, unit: usize) -> Self {
        Node::Neuron { layer, unit }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Input(k) => write!(f, "x{k}"),
            Node::Neuron { layer, unit } => write!(f, "n{layer}_{unit}"),
        }
    }
}

/// Assignment produced by evaluating a feed-forward network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfnnValues {
    pub inputs: Vec<f64>,
    pub layers: Vec<Vec<f64>>,
}

impl FfnnValues {
    pub fn node(&self, n: Node) -> f64 {
        match n {
            Node::Input(k) => self.inputs[k],
            Node::Neuron { layer, unit } => self.layers[layer][unit],
        }
    }

    pub fn output(&self) -> &[f64] {
        self.layers.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

impl FfnnNetwork {
    pub fn new(input_dim: usize, layers: Vec<FfLayer>) -> Result<Self, NetworkError> {
        for (i, layer) in layers.iter().enumerate() {
            let size = layer.size();
            for b in &layer.blocks {
                let src_size = match b.source {
                    Source::Input => input_dim,
                    Source::Layer(j) if j < i => layers[j].size(),
                    Source::Layer(j) => {
                        return Err(NetworkError::Invalid(format!("layer {i} reads from non-preceding layer {j}")))
                    }
                };
                if b.weights.rows() != size {
                    return Err(NetworkError::Dimension(format!(
                        "block of layer {i} has {} rows, expected {size}",
                        b.weights.rows()
                    )));
                }
                if b.offset + b.weights.cols() > src_size {
                    return Err(NetworkError::Dimension(format!(
                        "block of layer {i} reads columns {}..{} of a source with {src_size}",
                        b.offset,
                        b.offset + b.weights.cols()
                    )));
                }
            }
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[FfLayer] {
        &self.layers
    }

    pub fn neuron_count(&self) -> usize {
        self.input_dim + self.layers.iter().map(|l| l.size()).sum::<usize>()
    }

    pub fn relu_count(&self) -> usize {
        self.layers.iter().filter(|l| l.activation == Activation::Relu).map(|l| l.size()).sum()
    }

    pub fn contains(&self, n: Node) -> bool {
        match n {
            Node::Input(k) => k < self.input_dim,
            Node::Neuron { layer, unit } => layer < self.layers.len() && unit < self.layers[layer].size(),
        }
    }

    /// Evaluates layer by layer, neuron index ascending.
    pub fn evaluate(&self, input: &[f64]) -> Result<FfnnValues, NetworkError> {
        if input.len() != self.input_dim {
            return Err(NetworkError::Dimension(format!(
                "input has {} entries, expected {}",
                input.len(),
                self.input_dim
            )));
        }
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut z = layer.bias.clone();
            for b in &layer.blocks {
                let src = match b.source {
                    Source::Input => input,
                    Source::Layer(j) => values[j].as_slice(),
                };
                b.weights.mul_acc(&src[b.offset..b.offset + b.weights.cols()], &mut z);
            }
            for v in z.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            values.push(z);
        }
        Ok(FfnnValues { inputs: input.to_vec(), layers: values })
    }
}

/// An RNN unrolled into `copies` feed-forward copies.
///
/// Layer `c * n + i` of the FFNN is layer `i` of copy `c` (both 0-based), and
/// input `c * d + k` is input `k` at time step `c + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Unrolled {
    pub ffnn: FfnnNetwork,
    pub copies: usize,
    layers_per_copy: usize,
    input_dim: usize,
}

impl Unrolled {
    pub fn input(&self, copy: usize, k: usize) -> Node {
        Node::Input(copy * self.input_dim + k)
    }

    pub fn neuron(&self, copy: usize, unit: UnitRef) -> Node {
        Node::neuron(copy * self.layers_per_copy + unit.layer, unit.unit)
    }

    /// Splits a flat FFNN input into per-step input vectors.
    pub fn split_inputs(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        flat.chunks(self.input_dim).map(|c| c.to_vec()).collect()
    }

    /// Number of memory edges turned into inter-copy edges (non-zero weights).
    pub fn inter_copy_edges(&self) -> usize {
        let n = self.layers_per_copy;
        self.ffnn
            .layers()
            .iter()
            .enumerate()
            .flat_map(|(idx, l)| {
                l.blocks.iter().filter(move |b| matches!(b.source, Source::Layer(j) if j + n == idx))
            })
            .map(|b| b.weights.nonzero_count())
            .sum()
    }
}

/// Duplicates the RNN `t_max` times; memory edges become edges from copy
/// `c - 1` to copy `c`, and copy 0 sees zero memory.
pub fn unroll(net: &RnnNetwork, t_max: usize) -> Result<Unrolled, NetworkError> {
    if t_max == 0 {
        return Err(NetworkError::Invalid("unrolling needs t_max >= 1".into()));
    }
    let n = net.layers.len();
    let d = net.input_dim;
    let mut layers = Vec::with_capacity(n * t_max);
    for c in 0..t_max {
        for (i, lw) in net.layers.iter().enumerate() {
            let mut blocks = Vec::with_capacity(2);
            if i == 0 {
                blocks.push(Block { source: Source::Input, offset: c * d, weights: lw.weights.clone() });
            } else {
                blocks.push(Block { source: Source::Layer(c * n + i - 1), offset: 0, weights: lw.weights.clone() });
            }
            if c > 0 && !lw.memory.is_zero() {
                blocks.push(Block { source: Source::Layer((c - 1) * n + i), offset: 0, weights: lw.memory.clone() });
            }
            layers.push(FfLayer { blocks, bias: lw.bias.clone(), activation: lw.activation });
        }
    }
    Ok(Unrolled { ffnn: FfnnNetwork::new(d * t_max, layers)?, copies: t_max, layers_per_copy: n, input_dim: d })
}

/// Feed-forward over-approximation of one time step.
///
/// Inputs are laid out as: the original inputs, then the time neuron `t`,
/// then one neuron per memory unit (layer ascending, unit ascending).
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotNetwork {
    pub ffnn: FfnnNetwork,
    pub original_inputs: usize,
    pub time_input: usize,
    pub memory_inputs: Vec<(UnitRef, usize)>,
}

impl SnapshotNetwork {
    pub fn time_node(&self) -> Node {
        Node::Input(self.time_input)
    }

    pub fn memory_node(&self, unit: UnitRef) -> Option<Node> {
        self.memory_inputs.iter().find(|(u, _)| *u == unit).map(|&(_, k)| Node::Input(k))
    }
}

/// Snapshot of the whole network.
pub fn snapshot(net: &RnnNetwork) -> SnapshotNetwork {
    snapshot_prefix(net, net.layers.len())
}

/// Snapshot of the first `n_layers` layers only; memory units of deeper
/// layers are omitted.
pub fn snapshot_prefix(net: &RnnNetwork, n_layers: usize) -> SnapshotNetwork {
    let n_layers = n_layers.clamp(1, net.layers.len());
    let d = net.input_dim;
    let time_input = d;
    let mut next = d + 1;
    let mut memory_inputs = Vec::new();
    let mut layers = Vec::with_capacity(n_layers);
    for (i, lw) in net.layers.iter().take(n_layers).enumerate() {
        let mut blocks = Vec::with_capacity(2);
        let source = if i == 0 { Source::Input } else { Source::Layer(i - 1) };
        blocks.push(Block { source, offset: 0, weights: lw.weights.clone() });
        let units = lw.memory_units();
        if !units.is_empty() {
            blocks.push(Block { source: Source::Input, offset: next, weights: lw.memory.select_columns(&units) });
            for j in units {
                memory_inputs.push((UnitRef::new(i, j), next));
                next += 1;
            }
        }
        layers.push(FfLayer { blocks, bias: lw.bias.clone(), activation: lw.activation });
    }
    let ffnn = FfnnNetwork::new(next, layers).expect("snapshot of a valid RNN is valid");
    SnapshotNetwork { ffnn, original_inputs: d, time_input, memory_inputs }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_pair_evaluation() {
        let net = relu_pair();
        let v = net.evaluate(&[4.0]).unwrap();
        assert_eq!(v.layers[0], vec![4.0, 0.0]);
        assert_eq!(v.output(), &[4.0]);
        let v = net.evaluate(&[-10.0]).unwrap();
        assert_eq!(v.output(), &[20.0]);
        assert_eq!(net.evaluate(&[0.0]).unwrap().output(), &[0.0]);
        assert!(net.evaluate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn running_table() {
        let trace = running().evaluate(&[vec![0.5], vec![1.5], vec![-1.0], vec![-3.0]]).unwrap();
        let outs: Vec<f64> = (1..=4).map(|t| trace.outputs(t)[0]).collect();
        let mems: Vec<f64> = (1..=4).map(|t| trace.at(t).memory[0][0]).collect();
        assert_eq!(outs, vec![0.5, 2.0, 1.0, 0.0]);
        assert_eq!(mems, vec![0.0, 0.5, 2.0, 1.0]);
    }

    #[test]
    fn crossed_two_steps() {
        let trace = crossed().evaluate(&[vec![3.0], vec![3.0]]).unwrap();
        assert_eq!(trace.at(1).layers[0], vec![0.0, 6.0]);
        assert_eq!(trace.at(2).layers[0], vec![3.0, 12.0]);
        assert_eq!(trace.outputs(1), &[6.0]);
        assert_eq!(trace.outputs(2), &[15.0]);
    }

    #[test]
    fn empty_sequence_rejected() {
        assert_eq!(running().evaluate(&[]), Err(NetworkError::EmptySequence));
    }

    #[test]
    fn memory_free_rnn_matches_ffnn_per_step() {
        let layers = vec![
            LayerWeights::new(Matrix::from_rows(&[vec![1.0], vec![-1.0]], 1).unwrap(), None, vec![0.0, 0.0], Activation::Relu)
                .unwrap(),
            LayerWeights::new(Matrix::from_rows(&[vec![1.0, 2.0]], 2).unwrap(), None, vec![0.0], Activation::Identity).unwrap(),
        ];
        let rnn = RnnNetwork::new(1, layers).unwrap();
        let ff = relu_pair();
        let xs = [3.0, -2.0, 0.25];
        let trace = rnn.evaluate(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap();
        for (t, &x) in xs.iter().enumerate() {
            assert_eq!(trace.outputs(t + 1), ff.evaluate(&[x]).unwrap().output());
        }
    }

    #[test]
    fn unroll_running_shape() {
        let net = running();
        let u = unroll(&net, 5).unwrap();
        assert_eq!(u.ffnn.neuron_count(), 15);
        assert_eq!(u.inter_copy_edges(), 4);
        let single = unroll(&net, 1).unwrap();
        assert_eq!(single.ffnn.neuron_count(), 3);
        assert_eq!(single.inter_copy_edges(), 0);
        assert!(unroll(&net, 0).is_err());
    }

    #[test]
    fn snapshot_shapes() {
        let net = running();
        let s = snapshot(&net);
        assert_eq!(net.neuron_count(), 4);
        assert_eq!(s.ffnn.neuron_count(), net.neuron_count() + 1);
        assert_eq!(s.ffnn.input_dim(), 3);
        assert_eq!(s.memory_inputs, vec![(UnitRef::new(0, 0), 2)]);
        // hidden neuron reads x with weight 1 and the memory input with weight 1
        let b = &s.ffnn.layers()[0].blocks;
        assert_eq!(b[0].weights.data(), &[1.0]);
        assert_eq!((b[1].offset, b[1].weights.data()), (2, &[1.0][..]));

        let s2 = snapshot(&two_layer());
        assert_eq!(s2.ffnn.input_dim(), 4);
        assert_eq!(s2.memory_inputs.len(), 2);
        assert_eq!(s2.ffnn.neuron_count(), two_layer().neuron_count() + 1);

        // snapshot with t = anything, memory m reproduces the RNN step
        let v = s.ffnn.evaluate(&[1.5, 2.0, 0.5]).unwrap();
        assert_eq!(v.output(), &[2.0]);
    }

    #[test]
    fn snapshot_of_memory_free_net_has_no_memory_inputs() {
        let layers = vec![
            LayerWeights::new(Matrix::from_rows(&[vec![1.0]], 1).unwrap(), None, vec![0.0], Activation::Relu).unwrap(),
            LayerWeights::new(Matrix::from_rows(&[vec![1.0]], 1).unwrap(), None, vec![0.0], Activation::Identity).unwrap(),
        ];
        let net = RnnNetwork::new(1, layers).unwrap();
        let s = snapshot(&net);
        assert!(s.memory_inputs.is_empty());
        assert_eq!(s.ffnn.neuron_count(), net.neuron_count() + 1);
    }

    #[test]
    fn identity_hidden_layer_rejected() {
        let l = scalar_layer(1.0, 0.0, Activation::Identity);
        assert!(RnnNetwork::new(1, vec![l.clone(), l]).is_err());
    }

    pub(crate) fn random_rnn(rng: &mut ChaCha8Rng) -> RnnNetwork {
        let d = rng.random_range(1..=3);
        let depth = rng.random_range(2..=4);
        let mut prev = d;
        let mut layers = Vec::new();
        for i in 0..depth {
            let last = i + 1 == depth;
            let size = if last { rng.random_range(1..=2) } else { rng.random_range(1..=3) };
            let w: Vec<f64> = (0..size * prev).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..size * size)
                .map(|_| if rng.random_bool(0.5) { rng.random_range(-1.0..1.0) } else { 0.0 })
                .collect();
            let b: Vec<f64> = (0..size).map(|_| rng.random_range(-0.5..0.5)).collect();
            let act = if last { Activation::Identity } else { Activation::Relu };
            layers.push(
                LayerWeights::new(
                    Matrix::from_row_major(size, prev, w).unwrap(),
                    Some(Matrix::from_row_major(size, size, h).unwrap()),
                    b,
                    act,
                )
                .unwrap(),
            );
            prev = size;
        }
        RnnNetwork::new(d, layers).unwrap()
    }

    #[test]
    fn unrolled_equivalence_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let net = random_rnn(&mut rng);
            let t_max = rng.random_range(1..=6);
            let inputs: Vec<Vec<f64>> =
                (0..t_max).map(|_| (0..net.input_dim()).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let trace = net.evaluate(&inputs).unwrap();
            let u = unroll(&net, t_max).unwrap();
            let flat: Vec<f64> = inputs.concat();
            let vals = u.ffnn.evaluate(&flat).unwrap();
            for c in 0..t_max {
                for (j, &expected) in trace.outputs(c + 1).iter().enumerate() {
                    let got = vals.node(u.neuron(c, UnitRef::new(net.output_layer(), j)));
                    assert!((got - expected).abs() <= 1e-9);
                }
            }
            // vanilla update rule and ReLU non-negativity
            for t in 2..=t_max {
                assert_eq!(trace.at(t).memory, trace.at(t - 1).layers);
            }
            for step in &trace.steps {
                for (i, vals) in step.layers.iter().enumerate() {
                    if net.layer(i).activation == Activation::Relu {
                        assert!(vals.iter().all(|&v| v >= 0.0));
                    }
                }
            }
            assert_eq!(snapshot(&net).ffnn.neuron_count(), net.neuron_count() + 1);
        }
    }
}
