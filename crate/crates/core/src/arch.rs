//! Architecture encoding: cell layout, continuous architecture parameters,
//! and discrete genotypes.
//!
//! Flattening order of a parameter vector is cell-major (normal cell first,
//! then reduce), then edge, then operation. Within a cell, edges are listed
//! intermediate-node-major: node `k` (0-based) owns edges from predecessors
//! `0..k+2`, where predecessors 0 and 1 are the cell inputs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Number of edges in a cell with `num_nodes` intermediate nodes.
pub fn edges_per_cell(num_nodes: usize) -> usize {
    (0..num_nodes).map(|i| i + 2).sum()
}

/// Search-space dimension for a two-cell layout: `2 * K * |O|`.
pub fn param_dimension(num_nodes: usize, num_ops: usize) -> Result<usize> {
    if num_nodes == 0 || num_ops == 0 {
        return Err(Error::InvalidParameter(format!(
            "param_dimension needs N >= 1 and |O| >= 1, got N={num_nodes}, |O|={num_ops}"
        )));
    }
    Ok(2 * edges_per_cell(num_nodes) * num_ops)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchLayout {
    num_cells: usize,
    num_nodes: Option<usize>,
    edges_per_cell: usize,
    ops: Vec<String>,
}

impl ArchLayout {
    /// Two-cell (normal + reduce) layout with `num_nodes` intermediate nodes.
    pub fn cells(num_nodes: usize, ops: Vec<String>) -> Result<Self> {
        param_dimension(num_nodes, ops.len())?;
        Self::check_ops(&ops)?;
        Ok(Self {
            num_cells: 2,
            num_nodes: Some(num_nodes),
            edges_per_cell: edges_per_cell(num_nodes),
            ops,
        })
    }

    /// One cell with a fixed edge count, as used by tabular spaces.
    pub fn single_cell(edges: usize, ops: Vec<String>) -> Result<Self> {
        if edges == 0 || ops.is_empty() {
            return Err(Error::InvalidParameter(
                "a tabular layout needs at least one edge and one op".into(),
            ));
        }
        Self::check_ops(&ops)?;
        Ok(Self {
            num_cells: 1,
            num_nodes: None,
            edges_per_cell: edges,
            ops,
        })
    }

    fn check_ops(ops: &[String]) -> Result<()> {
        for (i, op) in ops.iter().enumerate() {
            if op.is_empty() || op.contains([',', '\n', '-', '=']) || op.trim() != op {
                return Err(Error::InvalidParameter(format!("bad op name {op:?}")));
            }
            if ops[..i].contains(op) {
                return Err(Error::InvalidParameter(format!("duplicate op name {op:?}")));
            }
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_nodes(&self) -> Option<usize> {
        self.num_nodes
    }

    pub fn edges_per_cell(&self) -> usize {
        self.edges_per_cell
    }

    pub fn total_edges(&self) -> usize {
        self.num_cells * self.edges_per_cell
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn ops(&self) -> &[String] {
        &self.ops
    }

    pub fn op_index(&self, name: &str) -> Option<usize> {
        self.ops.iter().position(|o| o == name)
    }

    pub fn dimension(&self) -> usize {
        self.total_edges() * self.num_ops()
    }

    /// `(cell, edge, op)` of a flat position index.
    pub fn coordinate(&self, index: usize) -> (usize, usize, usize) {
        let per_cell = self.edges_per_cell * self.num_ops();
        let cell = index / per_cell;
        let rem = index % per_cell;
        (cell, rem / self.num_ops(), rem % self.num_ops())
    }

    /// Predecessor node of each edge in a cell, in edge order.
    pub fn edge_sources(&self) -> Vec<usize> {
        match self.num_nodes {
            Some(n) => (0..n).flat_map(|k| 0..k + 2).collect(),
            None => (0..self.edges_per_cell).collect(),
        }
    }
}

/// Continuous architecture parameters in flattened form.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchParams {
    values: Vec<f64>,
    num_cells: usize,
    edges_per_cell: usize,
    num_ops: usize,
}

impl ArchParams {
    pub fn zeros(layout: &ArchLayout) -> Self {
        Self {
            values: vec![0.0; layout.dimension()],
            num_cells: layout.num_cells(),
            edges_per_cell: layout.edges_per_cell(),
            num_ops: layout.num_ops(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn edges_per_cell(&self) -> usize {
        self.edges_per_cell
    }

    pub fn num_ops(&self) -> usize {
        self.num_ops
    }

    fn edge_offset(&self, cell: usize, edge: usize) -> usize {
        (cell * self.edges_per_cell + edge) * self.num_ops
    }

    pub fn edge(&self, cell: usize, edge: usize) -> &[f64] {
        let o = self.edge_offset(cell, edge);
        &self.values[o..o + self.num_ops]
    }

    pub fn edge_mut(&mut self, cell: usize, edge: usize) -> &mut [f64] {
        let o = self.edge_offset(cell, edge);
        &mut self.values[o..o + self.num_ops]
    }

    /// Scores of one cell as a row-major `K x |O|` block.
    pub fn cell(&self, cell: usize) -> &[f64] {
        let o = self.edge_offset(cell, 0);
        &self.values[o..o + self.edges_per_cell * self.num_ops]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Euclidean distance to another parameter set of the same shape.
    pub fn distance(&self, other: &ArchParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Flattens architecture parameters into a search-space position.
pub fn encode_alpha(alpha: &ArchParams) -> Vec<f64> {
    alpha.values.clone()
}

/// Inverse of [`encode_alpha`].
pub fn decode_alpha(position: &[f64], layout: &ArchLayout) -> Result<ArchParams> {
    if position.len() != layout.dimension() {
        return Err(Error::DimensionMismatch {
            expected: layout.dimension(),
            found: position.len(),
        });
    }
    let mut alpha = ArchParams::zeros(layout);
    alpha.values.copy_from_slice(position);
    Ok(alpha)
}

/// Softmax over one edge's operation scores, max-subtracted.
pub fn edge_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter("edge has no operations".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("edge scores"));
    }
    Ok(softmax(scores))
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Discrete architecture: one operation index per edge per cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype {
    pub cells: Vec<Vec<usize>>,
}

impl Genotype {
    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().flatten().copied()
    }

    pub fn validate(&self, layout: &ArchLayout) -> Result<()> {
        if self.cells.len() != layout.num_cells()
            || self
                .cells
                .iter()
                .any(|c| c.len() != layout.edges_per_cell())
        {
            return Err(Error::GenotypeFormat(format!(
                "expected {} cells of {} edges",
                layout.num_cells(),
                layout.edges_per_cell()
            )));
        }
        if let Some(bad) = self.edges().find(|&o| o >= layout.num_ops()) {
            return Err(Error::GenotypeFormat(format!(
                "op index {bad} out of range for {} ops",
                layout.num_ops()
            )));
        }
        Ok(())
    }

    /// Text form: one line per cell, comma-separated op names in edge order.
    pub fn to_text(&self, layout: &ArchLayout) -> String {
        let mut out = String::new();
        for cell in &self.cells {
            let names: Vec<&str> = cell.iter().map(|&o| layout.ops()[o].as_str()).collect();
            writeln!(out, "{}", names.join(",")).expect("write to String");
        }
        out
    }

    pub fn parse_text(text: &str, layout: &ArchLayout) -> Result<Self> {
        let mut cells = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let cell = line
                .split(',')
                .map(|name| {
                    layout.op_index(name).ok_or_else(|| {
                        Error::GenotypeFormat(format!("line {}: unknown op {name:?}", n + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(cell);
        }
        let g = Genotype { cells };
        g.validate(layout)?;
        Ok(g)
    }
}

/// Per-edge argmax; ties go to the lowest operation index.
pub fn discretize(alpha: &ArchParams) -> Genotype {
    let cells = (0..alpha.num_cells())
        .map(|c| {
            (0..alpha.edges_per_cell())
                .map(|e| first_argmax(alpha.edge(c, e)))
                .collect()
        })
        .collect();
    Genotype { cells }
}

fn first_argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Fraction of all edge selections (over every cell) that pick each op.
pub fn op_frequencies(genotype: &Genotype, num_ops: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_ops];
    let mut total = 0usize;
    for o in genotype.edges() {
        counts[o] += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|c| c as f64 / total.max(1) as f64)
        .collect()
}

pub fn export_genotype(genotype: &Genotype, layout: &ArchLayout, path: &Path) -> Result<()> {
    std::fs::write(path, genotype.to_text(layout)).map_err(|e| Error::io(path, e))
}

pub fn load_genotype(path: &Path, layout: &ArchLayout) -> Result<Genotype> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Genotype::parse_text(&text, layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(ops: &[&str]) -> Vec<String> {
        ops.iter().map(|s| s.to_string()).collect()
    }

    fn toy() -> ArchLayout {
        ArchLayout::cells(
            2,
            names(&["zero", "skip", "linear", "relu_linear", "tanh_linear"]),
        )
        .unwrap()
    }

    #[test]
    fn dimension_formula() {
        assert_eq!(param_dimension(4, 8).unwrap(), 224);
        assert_eq!(param_dimension(1, 1).unwrap(), 4);
        assert_eq!(param_dimension(2, 5).unwrap(), 50);
        assert!(param_dimension(0, 5).is_err());
        assert!(param_dimension(2, 0).is_err());
    }

    #[test]
    fn edge_sources_match_node_fan_in() {
        assert_eq!(toy().edge_sources(), vec![0, 1, 0, 1, 2]);
    }

    #[test]
    fn softmax_examples() {
        let w = edge_weights(&[0.0; 5]).unwrap();
        assert!(w.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let w = edge_weights(&[2f64.ln(), 0.0]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(edge_weights(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn flattening_order_documented() {
        let layout = toy();
        assert_eq!(layout.coordinate(0), (0, 0, 0));
        assert_eq!(layout.coordinate(7), (0, 1, 2));
        assert_eq!(layout.coordinate(25), (1, 0, 0));
        let mut alpha = ArchParams::zeros(&layout);
        alpha.edge_mut(1, 0)[0] = 9.0;
        assert_eq!(encode_alpha(&alpha)[25], 9.0);
        assert_eq!(encode_alpha(&alpha).len(), param_dimension(2, 5).unwrap());
    }

    #[test]
    fn decode_wrong_length() {
        assert!(decode_alpha(&[0.0; 49], &toy()).is_err());
    }

    #[test]
    fn discretize_examples() {
        let layout = toy();
        let alpha = ArchParams::zeros(&layout);
        assert!(discretize(&alpha).edges().all(|o| o == 0));

        let mut alpha = ArchParams::zeros(&layout);
        for c in 0..2 {
            for e in 0..5 {
                alpha.edge_mut(c, e)[(c + e) % 5] += 10.0;
            }
        }
        let g = discretize(&alpha);
        for c in 0..2 {
            for e in 0..5 {
                assert_eq!(g.cells[c][e], (c + e) % 5);
            }
        }
    }

    #[test]
    fn frequencies_examples() {
        let g = Genotype {
            cells: vec![vec![2; 5], vec![2; 5]],
        };
        assert_eq!(op_frequencies(&g, 5), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let g = Genotype {
            cells: vec![vec![0, 1, 0, 1, 0], vec![1, 0, 1, 0, 1]],
        };
        assert_eq!(op_frequencies(&g, 5), vec![0.5, 0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn genotype_text_format() {
        let layout = toy();
        let g = Genotype {
            cells: vec![vec![0, 1, 2, 3, 4], vec![4, 4, 1, 1, 0]],
        };
        let text = g.to_text(&layout);
        assert_eq!(
            text,
            "zero,skip,linear,relu_linear,tanh_linear\ntanh_linear,tanh_linear,skip,skip,zero\n"
        );
        assert_eq!(Genotype::parse_text(&text, &layout).unwrap(), g);
        assert!(Genotype::parse_text("zero,skip\n", &layout).is_err());
        assert!(Genotype::parse_text(
            "conv,skip,skip,skip,skip\nzero,zero,zero,zero,zero\n",
            &layout
        )
        .is_err());
    }

    #[test]
    fn export_unwritable_path() {
        let g = Genotype {
            cells: vec![vec![0; 5], vec![0; 5]],
        };
        let err =
            export_genotype(&g, &toy(), Path::new("/nonexistent-dir/x/genotype.txt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x/genotype.txt"));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_shift_invariant(
            scores in prop::collection::vec(-30.0f64..30.0, 1..10),
            shift in -100.0f64..100.0,
        ) {
            let w = edge_weights(&scores).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&p| p > 0.0));
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let w2 = edge_weights(&shifted).unwrap();
            for (a, b) in w.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn encode_decode_round_trip(values in prop::collection::vec(-5.0f64..5.0, 50)) {
            let layout = toy();
            let alpha = decode_alpha(&values, &layout).unwrap();
            prop_assert_eq!(encode_alpha(&alpha), values.clone());
            prop_assert_eq!(decode_alpha(&encode_alpha(&alpha), &layout).unwrap(), alpha);
        }

        #[test]
        fn discretize_shift_and_scale_invariant(
            values in prop::collection::vec(-5.0f64..5.0, 50),
            shifts in prop::collection::vec(-3.0f64..3.0, 10),
            scale in 0.01f64..100.0,
        ) {
            let layout = toy();
            let alpha = decode_alpha(&values, &layout).unwrap();
            let mut shifted = alpha.clone();
            let mut scaled = alpha.clone();
            for c in 0..2 {
                for e in 0..5 {
                    let s = shifts[c * 5 + e];
                    shifted.edge_mut(c, e).iter_mut().for_each(|v| *v += s);
                    scaled.edge_mut(c, e).iter_mut().for_each(|v| *v *= scale);
                }
            }
            prop_assert_eq!(discretize(&shifted), discretize(&alpha));
            prop_assert_eq!(discretize(&scaled), discretize(&alpha));
        }

        #[test]
        fn frequencies_sum_to_one(ops in prop::collection::vec(0usize..5, 10)) {
            let g = Genotype { cells: vec![ops[..5].to_vec(), ops[5..].to_vec()] };
            let p = op_frequencies(&g, 5);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
