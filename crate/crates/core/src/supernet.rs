//! Desk-scale differentiable supernet.
//!
//! ```text
//! x (2) -> stem: tanh(Ws x + bs) -> s (F)
//! normal cell (s, s)        -> n (F)
//! reduce cell (s, n)        -> r (F)
//! classifier: Wc r + bc     -> logits (C)
//! ```
//!
//! A cell has two input nodes and `N` intermediate nodes. Node `j` sums the
//! mixed operation of every edge `(i, j)`, `i < j`, where the mixed operation
//! is the softmax(alpha)-weighted sum of all candidate ops. The cell output is
//! a linear projection of the concatenated intermediate nodes back to width F.
//! Both cells have independent weights and independent alpha.
//!
//! Gradients for weights and alpha are computed by a hand-written reverse
//! pass over per-sample caches.

use std::fmt;
use std::str::FromStr;

use crate::arch::{softmax, ArchLayout, ArchParams};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Zero,
    Skip,
    Linear,
    ReluLinear,
    TanhLinear,
}

impl OpKind {
    pub const ALL: [OpKind; 5] = [
        OpKind::Zero,
        OpKind::Skip,
        OpKind::Linear,
        OpKind::ReluLinear,
        OpKind::TanhLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Zero => "zero",
            OpKind::Skip => "skip",
            OpKind::Linear => "linear",
            OpKind::ReluLinear => "relu_linear",
            OpKind::TanhLinear => "tanh_linear",
        }
    }

    pub fn is_parameter_free(self) -> bool {
        matches!(self, OpKind::Zero | OpKind::Skip)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown operation {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupernetConfig {
    pub num_nodes: usize,
    pub ops: Vec<OpKind>,
    pub width: usize,
    pub num_classes: usize,
    /// Half-width of the uniform init of the stem weights.
    pub stem_scale: f64,
    /// Dense weights start uniform with variance `init_gain^2 / fan_in`.
    pub init_gain: f64,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        Self {
            num_nodes: 2,
            ops: OpKind::ALL.to_vec(),
            width: 16,
            num_classes: 3,
            stem_scale: 4.0,
            init_gain: 1.0,
        }
    }
}

impl SupernetConfig {
    pub fn layout(&self) -> Result<ArchLayout> {
        ArchLayout::cells(
            self.num_nodes,
            self.ops.iter().map(|o| o.name().to_string()).collect(),
        )
    }
}

const INPUT_DIM: usize = 2;

/// Offsets of every parameter block inside the flat weight vector.
#[derive(Debug, Clone, PartialEq)]
struct ParamIndex {
    stem_w: usize,
    stem_b: usize,
    /// `[cell][edge][op]`: offset of W (F x F) followed by b (F), for
    /// parameterized ops only.
    op_params: Vec<Vec<Vec<Option<usize>>>>,
    proj_w: [usize; 2],
    proj_b: [usize; 2],
    cls_w: usize,
    cls_b: usize,
    total: usize,
}

impl ParamIndex {
    fn build(edges: usize, ops: &[OpKind], width: usize, nodes: usize, classes: usize) -> Self {
        let mut next = 0usize;
        let mut take = |n: usize| {
            let o = next;
            next += n;
            o
        };
        let stem_w = take(width * INPUT_DIM);
        let stem_b = take(width);
        let mut op_params = Vec::new();
        let mut proj_w = [0; 2];
        let mut proj_b = [0; 2];
        for cell in 0..2 {
            let cell_params = (0..edges)
                .map(|_| {
                    ops.iter()
                        .map(|op| (!op.is_parameter_free()).then(|| take(width * width + width)))
                        .collect()
                })
                .collect();
            op_params.push(cell_params);
            proj_w[cell] = take(width * nodes * width);
            proj_b[cell] = take(width);
        }
        let cls_w = take(classes * width);
        let cls_b = take(classes);
        Self {
            stem_w,
            stem_b,
            op_params,
            proj_w,
            proj_b,
            cls_w,
            cls_b,
            total: next,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupernetState {
    layout: ArchLayout,
    ops: Vec<OpKind>,
    width: usize,
    num_classes: usize,
    weights: Vec<f64>,
    index: ParamIndex,
}

/// Loss with gradients for both parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Forward intermediates of one cell for one sample.
#[derive(Debug, Clone)]
pub struct CellTrace {
    /// Input nodes followed by intermediate nodes.
    pub nodes: Vec<Vec<f64>>,
    /// Per edge, per op: op output.
    op_out: Vec<Vec<Vec<f64>>>,
    pub output: Vec<f64>,
}

/// Forward intermediates of the whole network for one sample.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub stem: Vec<f64>,
    pub cells: [CellTrace; 2],
    pub logits: Vec<f64>,
}

fn matvec_add(w: &[f64], b: &[f64], x: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = x.len();
    (0..out_dim)
        .map(|o| {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Accumulates `dW += dy x^T`, `db += dy`, `dx += W^T dy`.
fn linear_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let in_dim = x.len();
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[o] += g;
        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
        for (r, xi) in row.iter_mut().zip(x) {
            *r += g * xi;
        }
    }
    if let Some(dx) = dx {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * in_dim..(o + 1) * in_dim];
            for (d, wi) in dx.iter_mut().zip(row) {
                *d += g * wi;
            }
        }
    }
}

/// Mean cross-entropy of row-wise logits via log-sum-exp.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum();
    Ok(total / logits.len() as f64)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Fraction of rows whose argmax (first maximum) equals the label.
pub fn accuracy_from_logits(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let correct = logits
        .iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best == y
        })
        .count();
    Ok(correct as f64 / logits.len() as f64)
}

impl SupernetState {
    pub fn new(config: &SupernetConfig, rng: &mut RandomStream) -> Result<Self> {
        if config.width == 0 || config.num_classes < 2 {
            return Err(Error::InvalidParameter(
                "supernet needs width >= 1 and at least 2 classes".into(),
            ));
        }
        for (name, v) in [
            ("stem_scale", config.stem_scale),
            ("init_gain", config.init_gain),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        let layout = config.layout()?;
        let index = ParamIndex::build(
            layout.edges_per_cell(),
            &config.ops,
            config.width,
            config.num_nodes,
            config.num_classes,
        );
        let mut state = Self {
            layout,
            ops: config.ops.clone(),
            width: config.width,
            num_classes: config.num_classes,
            weights: vec![0.0; index.total],
            index,
        };
        state.initialize(config.stem_scale, config.init_gain, rng);
        Ok(state)
    }

    fn initialize(&mut self, stem_scale: f64, gain: f64, rng: &mut RandomStream) {
        let f = self.width;
        let idx = self.index.clone();
        let fill = |w: &mut [f64], rng: &mut RandomStream, scale: f64| {
            w.iter_mut().for_each(|v| *v = rng.uniform(-scale, scale));
        };
        fill(
            &mut self.weights[idx.stem_w..idx.stem_w + f * INPUT_DIM],
            rng,
            stem_scale,
        );
        fill(&mut self.weights[idx.stem_b..idx.stem_b + f], rng, 1.0);
        let op_scale = gain * (3.0 / f as f64).sqrt();
        let nodes = self.layout.num_nodes().unwrap_or(1);
        for cell in 0..2 {
            for edge in &idx.op_params[cell] {
                for off in edge.iter().flatten() {
                    fill(&mut self.weights[*off..*off + f * f], rng, op_scale);
                }
            }
            let proj_scale = gain * (3.0 / (nodes * f) as f64).sqrt();
            let pw = idx.proj_w[cell];
            fill(&mut self.weights[pw..pw + f * nodes * f], rng, proj_scale);
        }
        fill(
            &mut self.weights[idx.cls_w..idx.cls_w + self.num_classes * f],
            rng,
            op_scale,
        );
    }

    pub fn layout(&self) -> &ArchLayout {
        &self.layout
    }

    pub fn ops(&self) -> &[OpKind] {
        &self.ops
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    fn check_alpha(&self, alpha: &ArchParams) -> Result<()> {
        if alpha.len() != self.layout.dimension()
            || alpha.num_cells() != 2
            || alpha.num_ops() != self.ops.len()
        {
            return Err(Error::DimensionMismatch {
                expected: self.layout.dimension(),
                found: alpha.len(),
            });
        }
        if !alpha.is_finite() {
            return Err(Error::NonFinite("alpha"));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[Sample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(s) = batch.iter().find(|s| s.label >= self.num_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {} out of range for {} classes",
                s.label, self.num_classes
            )));
        }
        Ok(())
    }

    /// Softmax weights of every edge, `[cell][edge][op]`.
    fn mixing_weights(&self, alpha: &ArchParams) -> Vec<Vec<Vec<f64>>> {
        (0..2)
            .map(|c| {
                (0..self.layout.edges_per_cell())
                    .map(|e| softmax(alpha.edge(c, e)))
                    .collect()
            })
            .collect()
    }

    fn cell_forward(
        &self,
        cell: usize,
        a: &[f64],
        b: &[f64],
        mix: &[Vec<f64>],
        keep_ops: bool,
    ) -> CellTrace {
        let f = self.width;
        let n_nodes = self.layout.num_nodes().unwrap_or(1);
        let sources = self.layout.edge_sources();
        let mut nodes = vec![a.to_vec(), b.to_vec()];
        let mut op_out = Vec::with_capacity(sources.len());
        let mut edge = 0;
        for k in 0..n_nodes {
            let mut acc = vec![0.0; f];
            for _ in 0..k + 2 {
                let input = &nodes[sources[edge]];
                let mut outs = Vec::with_capacity(self.ops.len());
                for (o, op) in self.ops.iter().enumerate() {
                    let p = mix[edge][o];
                    let y = match op {
                        OpKind::Zero => {
                            if keep_ops {
                                outs.push(vec![0.0; f]);
                            }
                            continue;
                        }
                        OpKind::Skip => {
                            for (a, v) in acc.iter_mut().zip(input) {
                                *a += p * v;
                            }
                            if keep_ops {
                                outs.push(input.clone());
                            }
                            continue;
                        }
                        _ => {
                            let off = self.index.op_params[cell][edge][o].expect("param op");
                            let pre = matvec_add(
                                &self.weights[off..off + f * f],
                                &self.weights[off + f * f..off + f * f + f],
                                input,
                                f,
                            );
                            match op {
                                OpKind::Linear => pre,
                                OpKind::ReluLinear => pre.into_iter().map(|v| v.max(0.0)).collect(),
                                _ => pre.into_iter().map(f64::tanh).collect(),
                            }
                        }
                    };
                    for (a, v) in acc.iter_mut().zip(&y) {
                        *a += p * v;
                    }
                    if keep_ops {
                        outs.push(y);
                    }
                }
                op_out.push(outs);
                edge += 1;
            }
            nodes.push(acc);
        }
        let concat: Vec<f64> = nodes[2..].iter().flatten().copied().collect();
        let pw = self.index.proj_w[cell];
        let pb = self.index.proj_b[cell];
        let output = matvec_add(
            &self.weights[pw..pw + f * concat.len()],
            &self.weights[pb..pb + f],
            &concat,
            f,
        );
        CellTrace {
            nodes,
            op_out,
            output,
        }
    }

    fn trace_with(&self, mix: &[Vec<Vec<f64>>], sample: &Sample, keep_ops: bool) -> SampleTrace {
        let f = self.width;
        let idx = &self.index;
        let stem = matvec_add(
            &self.weights[idx.stem_w..idx.stem_w + f * INPUT_DIM],
            &self.weights[idx.stem_b..idx.stem_b + f],
            &sample.features,
            f,
        )
        .into_iter()
        .map(f64::tanh)
        .collect::<Vec<_>>();
        let normal = self.cell_forward(0, &stem, &stem, &mix[0], keep_ops);
        let reduce = self.cell_forward(1, &stem, &normal.output, &mix[1], keep_ops);
        let logits = matvec_add(
            &self.weights[idx.cls_w..idx.cls_w + self.num_classes * f],
            &self.weights[idx.cls_b..idx.cls_b + self.num_classes],
            &reduce.output,
            self.num_classes,
        );
        SampleTrace {
            stem,
            cells: [normal, reduce],
            logits,
        }
    }

    /// Full forward intermediates for one sample.
    pub fn trace(&self, alpha: &ArchParams, sample: &Sample) -> Result<SampleTrace> {
        self.check_alpha(alpha)?;
        self.check_batch(std::slice::from_ref(sample))?;
        Ok(self.trace_with(&self.mixing_weights(alpha), sample, true))
    }

    /// Smallest |pre-activation| over every relu unit for one sample, or
    /// infinity when no relu op is present.
    pub fn relu_margin(&self, alpha: &ArchParams, sample: &Sample) -> Result<f64> {
        let Some(o) = self.ops.iter().position(|op| *op == OpKind::ReluLinear) else {
            return Ok(f64::INFINITY);
        };
        let t = self.trace(alpha, sample)?;
        let f = self.width;
        let mut margin = f64::INFINITY;
        for (cell, ct) in t.cells.iter().enumerate() {
            for (edge, &src) in self.layout.edge_sources().iter().enumerate() {
                let off = self.index.op_params[cell][edge][o].expect("param op");
                let pre = matvec_add(
                    &self.weights[off..off + f * f],
                    &self.weights[off + f * f..off + f * f + f],
                    &ct.nodes[src],
                    f,
                );
                margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
            }
        }
        Ok(margin)
    }

    pub fn forward(&self, alpha: &ArchParams, batch: &[Sample]) -> Result<Vec<Vec<f64>>> {
        self.check_alpha(alpha)?;
        self.check_batch(batch)?;
        let mix = self.mixing_weights(alpha);
        Ok(batch
            .iter()
            .map(|s| self.trace_with(&mix, s, false).logits)
            .collect())
    }

    pub fn loss(&self, alpha: &ArchParams, batch: &[Sample]) -> Result<f64> {
        let logits = self.forward(alpha, batch)?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        cross_entropy(&logits, &labels)
    }

    pub fn validation_accuracy(&self, alpha: &ArchParams, split: &[Sample]) -> Result<f64> {
        let logits = self.forward(alpha, split)?;
        let labels: Vec<usize> = split.iter().map(|s| s.label).collect();
        accuracy_from_logits(&logits, &labels)
    }

    pub fn grad_weights(&self, alpha: &ArchParams, batch: &[Sample]) -> Result<Vec<f64>> {
        Ok(self.loss_and_grads(alpha, batch)?.weights)
    }

    pub fn grad_alpha(&self, alpha: &ArchParams, batch: &[Sample]) -> Result<Vec<f64>> {
        Ok(self.loss_and_grads(alpha, batch)?.alpha)
    }

    /// Mean cross-entropy and its exact gradients w.r.t. weights and alpha.
    pub fn loss_and_grads(&self, alpha: &ArchParams, batch: &[Sample]) -> Result<Gradients> {
        self.check_alpha(alpha)?;
        self.check_batch(batch)?;
        let mix = self.mixing_weights(alpha);
        let f = self.width;
        let c = self.num_classes;
        let idx = &self.index;
        let scale = 1.0 / batch.len() as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut ga = vec![0.0; alpha.len()];
        let mut loss = 0.0;

        for sample in batch {
            let t = self.trace_with(&mix, sample, true);
            let lse = log_sum_exp(&t.logits);
            loss += lse - t.logits[sample.label];
            let dlogits: Vec<f64> = t
                .logits
                .iter()
                .enumerate()
                .map(|(k, &z)| {
                    scale * ((z - lse).exp() - if k == sample.label { 1.0 } else { 0.0 })
                })
                .collect();

            let mut d_reduce = vec![0.0; f];
            {
                let (head, tail) = gw.split_at_mut(idx.cls_b);
                linear_backward(
                    &self.weights[idx.cls_w..idx.cls_w + c * f],
                    &t.cells[1].output,
                    &dlogits,
                    &mut head[idx.cls_w..idx.cls_w + c * f],
                    &mut tail[..c],
                    Some(&mut d_reduce),
                );
            }
            let (d_stem_r, d_normal) =
                self.cell_backward(1, &t.cells[1], &mix[1], &d_reduce, &mut gw, &mut ga);
            let (d_a, d_b) =
                self.cell_backward(0, &t.cells[0], &mix[0], &d_normal, &mut gw, &mut ga);

            let d_pre: Vec<f64> = (0..f)
                .map(|i| (d_stem_r[i] + d_a[i] + d_b[i]) * (1.0 - t.stem[i] * t.stem[i]))
                .collect();
            let (head, tail) = gw.split_at_mut(idx.stem_b);
            linear_backward(
                &self.weights[idx.stem_w..idx.stem_w + f * INPUT_DIM],
                &sample.features,
                &d_pre,
                &mut head[idx.stem_w..idx.stem_w + f * INPUT_DIM],
                &mut tail[..f],
                None,
            );
        }
        Ok(Gradients {
            loss: loss * scale,
            weights: gw,
            alpha: ga,
        })
    }

    /// Reverse pass through one cell. Returns gradients w.r.t. its two inputs.
    fn cell_backward(
        &self,
        cell: usize,
        trace: &CellTrace,
        mix: &[Vec<f64>],
        d_out: &[f64],
        gw: &mut [f64],
        ga: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let f = self.width;
        let n_ops = self.ops.len();
        let n_nodes = trace.nodes.len() - 2;
        let sources = self.layout.edge_sources();
        let edges = sources.len();

        let concat: Vec<f64> = trace.nodes[2..].iter().flatten().copied().collect();
        let mut d_concat = vec![0.0; concat.len()];
        let pw = self.index.proj_w[cell];
        let pb = self.index.proj_b[cell];
        {
            let (head, tail) = gw.split_at_mut(pb);
            linear_backward(
                &self.weights[pw..pw + f * concat.len()],
                &concat,
                d_out,
                &mut head[pw..pw + f * concat.len()],
                &mut tail[..f],
                Some(&mut d_concat),
            );
        }
        let mut d_nodes = vec![vec![0.0; f]; n_nodes + 2];
        for k in 0..n_nodes {
            d_nodes[k + 2].copy_from_slice(&d_concat[k * f..(k + 1) * f]);
        }

        // Edges into node j are contiguous and ordered by node, so walking
        // edges in reverse finishes every node's gradient before its own
        // incoming edges are visited.
        for edge in (0..edges).rev() {
            let target = self.edge_target(edge);
            let src = sources[edge];
            let d_node = d_nodes[target].clone();
            let p = &mix[edge];
            let outs = &trace.op_out[edge];

            let g: Vec<f64> = outs
                .iter()
                .map(|y| y.iter().zip(&d_node).map(|(a, b)| a * b).sum())
                .collect();
            let mean_g: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
            let a_off = (cell * edges + edge) * n_ops;
            for o in 0..n_ops {
                ga[a_off + o] += p[o] * (g[o] - mean_g);
            }

            let input = trace.nodes[src].clone();
            let mut d_input = vec![0.0; f];
            for (o, op) in self.ops.iter().enumerate() {
                let dy: Vec<f64> = d_node.iter().map(|v| p[o] * v).collect();
                match op {
                    OpKind::Zero => {}
                    OpKind::Skip => {
                        for (d, v) in d_input.iter_mut().zip(&dy) {
                            *d += v;
                        }
                    }
                    _ => {
                        let y = &outs[o];
                        let d_pre: Vec<f64> = match op {
                            OpKind::Linear => dy,
                            OpKind::ReluLinear => dy
                                .iter()
                                .zip(y)
                                .map(|(d, &v)| if v > 0.0 { *d } else { 0.0 })
                                .collect(),
                            _ => dy.iter().zip(y).map(|(d, v)| d * (1.0 - v * v)).collect(),
                        };
                        let off = self.index.op_params[cell][edge][o].expect("param op");
                        let (head, tail) = gw.split_at_mut(off + f * f);
                        linear_backward(
                            &self.weights[off..off + f * f],
                            &input,
                            &d_pre,
                            &mut head[off..],
                            &mut tail[..f],
                            Some(&mut d_input),
                        );
                    }
                }
            }
            for (d, v) in d_nodes[src].iter_mut().zip(&d_input) {
                *d += v;
            }
        }
        let d_b = d_nodes[1].clone();
        let d_a = std::mem::take(&mut d_nodes[0]);
        (d_a, d_b)
    }

    fn edge_target(&self, edge: usize) -> usize {
        let mut remaining = edge;
        let mut k = 0;
        while remaining >= k + 2 {
            remaining -= k + 2;
            k += 1;
        }
        k + 2
    }

    /// `w <- w - eta * grad`.
    pub fn sgd_step_weights(&mut self, grads: &[f64], eta: f64) -> Result<()> {
        if grads.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: grads.len(),
            });
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::InvalidParameter(format!("learning rate {eta}")));
        }
        for (w, g) in self.weights.iter_mut().zip(grads) {
            *w -= eta * g;
        }
        Ok(())
    }
}
