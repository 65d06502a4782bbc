//! Region-pair proximity predictor distilled from an external category graph.

use crate::error::{Error, Result};
use crate::knowledge::ProximityGraph;
use crate::rng::{self, SeededRng};
use crate::tensor::{Bindings, ParamId, ParamStore, Tape, Tensor, Var};

pub const HIDDEN: [usize; 3] = [128, 64, 32];
const SLOPE: f64 = 0.01;

/// Four dense layers `2C → 128 → 64 → 32 → 1` for one knowledge source.
#[derive(Debug, Clone)]
pub struct SpnParams {
    layers: Vec<(ParamId, ParamId)>,
    pub channels: usize,
}

impl SpnParams {
    pub fn init(store: &mut ParamStore, rng: &mut SeededRng, prefix: &str, channels: usize) -> Self {
        let widths = [2 * channels, HIDDEN[0], HIDDEN[1], HIDDEN[2], 1];
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = store.add(
                    format!("{prefix}.fc{i}.weight"),
                    rng::he_uniform(rng, &[w[0], w[1]], w[0]),
                );
                let bias = store.add(format!("{prefix}.fc{i}.bias"), Tensor::zeros(&[w[1]]));
                (weight, bias)
            })
            .collect();
        Self { layers, channels }
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Raw (unsymmetrized) scores for each row of `[n, 2C]` pair descriptors.
    fn raw_scores(&self, tape: &mut Tape, params: &Bindings, pairs: Var) -> Result<Var> {
        let mut x = pairs;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            x = tape.matmul(x, params.get(w))?;
            x = tape.add_row_bias(x, params.get(b))?;
            x = if i == last {
                tape.sigmoid(x)
            } else {
                tape.leaky_relu(x, SLOPE)
            };
        }
        let n = tape.shape(x)[0];
        tape.reshape(x, &[n])
    }
}

/// Stacks per-region channel means into a `[p, C]` matrix.
pub fn descriptors(tape: &mut Tape, blocks: &[Var], channels: usize) -> Result<Var> {
    if blocks.is_empty() {
        return Err(Error::invalid("no regions"));
    }
    let mut pooled = Vec::with_capacity(blocks.len());
    for &b in blocks {
        let s = tape.shape(b);
        if s.len() != 3 || s[0] != channels {
            return Err(Error::shape(format!(
                "region block {s:?}, expected {channels} channels"
            )));
        }
        pooled.push(tape.global_avg_pool(b)?);
    }
    let flat = tape.concat(&pooled, 0)?;
    tape.reshape(flat, &[blocks.len(), channels])
}

/// Symmetrized proximity of two region blocks, a `[1]` value.
pub fn spn_edge(tape: &mut Tape, params: &Bindings, spn: &SpnParams, h_i: Var, h_j: Var) -> Result<Var> {
    let d = descriptors(tape, &[h_i, h_j], spn.channels)?;
    let fwd = tape.reshape(d, &[1, 2 * spn.channels])?;
    let rev = tape.gather_rows(d, &[1, 0])?;
    let rev = tape.reshape(rev, &[1, 2 * spn.channels])?;
    let pairs = tape.concat(&[fwd, rev], 0)?;
    let raw = spn.raw_scores(tape, params, pairs)?;
    let s = tape.sum(raw);
    Ok(tape.mul_scalar(s, 0.5))
}

/// Thresholded region graph. `scores` is row-major `p × p` with unit diagonal.
#[derive(Debug, Clone)]
pub struct PredictedGraph {
    pub size: usize,
    pub scores: Vec<f64>,
    pub neighbors: Vec<Vec<usize>>,
    /// Tape handle of `scores` (flattened), differentiable off the diagonal.
    pub score_var: Var,
}

impl PredictedGraph {
    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.size + j]
    }

    /// Neighbor lists at threshold `theta`; a region always neighbors itself.
    pub fn neighbors_at(&self, theta: f64) -> Vec<Vec<usize>> {
        (0..self.size)
            .map(|i| (0..self.size).filter(|&j| j == i || self.score(i, j) > theta).collect())
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(|n| n.len() - 1).sum::<usize>() / 2
    }
}

/// Scores every ordered region pair in one batched pass and thresholds.
pub fn predict_graph(
    tape: &mut Tape,
    params: &Bindings,
    spn: &SpnParams,
    blocks: &[Var],
    theta: f64,
) -> Result<PredictedGraph> {
    let p = blocks.len();
    let c = spn.channels;
    let d = descriptors(tape, blocks, c)?;
    let left: Vec<usize> = (0..p * p).map(|k| k / p).collect();
    let right: Vec<usize> = (0..p * p).map(|k| k % p).collect();
    let a = tape.gather_rows(d, &left)?;
    let b = tape.gather_rows(d, &right)?;
    let pairs = tape.concat(&[a, b], 1)?;
    let raw = spn.raw_scores(tape, params, pairs)?;
    let transposed: Vec<usize> = (0..p * p).map(|k| (k % p) * p + k / p).collect();
    let raw_t = tape.gather(raw, &transposed)?;
    let both = tape.add(raw, raw_t)?;
    let sym = tape.mul_scalar(both, 0.5);

    let mut off = vec![1.0; p * p];
    let mut diag = vec![0.0; p * p];
    for i in 0..p {
        off[i * p + i] = 0.0;
        diag[i * p + i] = 1.0;
    }
    let off = tape.constant(&Tensor::from_vec(off));
    let diag = tape.constant(&Tensor::from_vec(diag));
    let masked = tape.mul(sym, off)?;
    let score_var = tape.add(masked, diag)?;

    let scores = tape.value(score_var).to_vec();
    let mut graph = PredictedGraph {
        size: p,
        scores,
        neighbors: Vec::new(),
        score_var,
    };
    graph.neighbors = graph.neighbors_at(theta);
    Ok(graph)
}

/// Summed squared error between predicted pair scores (`i < j`) and the
/// external graph's weights for the regions' categories.
pub fn prox_loss(tape: &mut Tape, pred: &PredictedGraph, external: &ProximityGraph, labels: &[String]) -> Result<Var> {
    let p = pred.size;
    if labels.len() != p {
        return Err(Error::invalid(format!("{} labels for {p} regions", labels.len())));
    }
    let classes = labels
        .iter()
        .map(|l| external.index_of(l))
        .collect::<Result<Vec<_>>>()?;
    if p < 2 {
        return Ok(tape.scalar(0.0));
    }
    let mut idx = Vec::new();
    let mut targets = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            idx.push(i * p + j);
            targets.push(external.weight(classes[i], classes[j]));
        }
    }
    let picked = tape.gather(pred.score_var, &idx)?;
    let targets = tape.constant(&Tensor::from_vec(targets));
    let diff = tape.sub(picked, targets)?;
    let sq = tape.square(diff);
    Ok(tape.sum(sq))
}
