//! Spatial graph attention: region blocks exchange convolved features along
//! predicted neighborhoods, with one attention distribution per head.

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::tensor::{Bindings, ParamId, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_HEADS: usize = 8;
pub const ATTENTION_SLOPE: f64 = 0.2;
pub const OUTPUT_SLOPE: f64 = 0.01;

/// Per-source filters: one `C → C` 3×3 convolution whose output channels
/// split into `heads` groups of `C / heads`, and one `[heads, 2·C/heads]`
/// attention matrix (source half first, then target half).
#[derive(Debug, Clone)]
pub struct SgatParams {
    pub kernel: ParamId,
    pub attention: ParamId,
    pub heads: usize,
    pub channels: usize,
}

impl SgatParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        prefix: &str,
        channels: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::invalid(format!(
                "{heads} heads do not divide {channels} channels"
            )));
        }
        let per = channels / heads;
        let kernel = store.add(
            format!("{prefix}.kernel"),
            rng::he_uniform(rng, &[channels, channels, 3, 3], channels * 9),
        );
        let attention = store.add(
            format!("{prefix}.attention"),
            rng::he_uniform(rng, &[heads, 2 * per], 2 * per),
        );
        Ok(Self {
            kernel,
            attention,
            heads,
            channels,
        })
    }

    pub fn head_channels(&self) -> usize {
        self.channels / self.heads
    }

    /// `[1, per]` slices of head `k`'s attention row, as column vectors.
    fn attention_halves(&self, tape: &mut Tape, params: &Bindings, k: usize) -> Result<(Var, Var)> {
        let per = self.head_channels();
        let row = tape.slice(params.get(self.attention), 0, k, 1)?;
        let src = tape.slice(row, 1, 0, per)?;
        let dst = tape.slice(row, 1, per, per)?;
        Ok((tape.reshape(src, &[per, 1])?, tape.reshape(dst, &[per, 1])?))
    }
}

/// Result of one propagation: updated `[C, d1, d2]` blocks plus each head's
/// dense `[p, p]` attention matrix (zero off the neighborhoods).
#[derive(Debug, Clone)]
pub struct SgatOutput {
    pub blocks: Vec<Var>,
    pub attention: Vec<Var>,
}

fn check_block(tape: &Tape, b: Var, shape: &[usize]) -> Result<()> {
    if tape.shape(b) != shape {
        return Err(Error::shape(format!(
            "region block {:?} does not match {shape:?}",
            tape.shape(b)
        )));
    }
    Ok(())
}

/// Unnormalized attention of region `i` towards `j` under head `k`.
pub fn attention_coeff(
    tape: &mut Tape,
    params: &Bindings,
    sgat: &SgatParams,
    head: usize,
    h_i: Var,
    h_j: Var,
) -> Result<Var> {
    if head >= sgat.heads {
        return Err(Error::invalid(format!("head {head} of {}", sgat.heads)));
    }
    let shape = tape.shape(h_i).to_vec();
    if shape.len() != 3 || shape[0] != sgat.channels {
        return Err(Error::shape(format!("region block {shape:?}")));
    }
    check_block(tape, h_j, &shape)?;
    let per = sgat.head_channels();
    let kernel = params.get(sgat.kernel);
    let mut pooled = Vec::new();
    for h in [h_i, h_j] {
        let z = tape.conv2d(h, kernel, None)?;
        let u = tape.global_avg_pool(z)?;
        let u = tape.slice(u, 0, head * per, per)?;
        pooled.push(tape.reshape(u, &[1, per])?);
    }
    let (src, dst) = sgat.attention_halves(tape, params, head)?;
    let a = tape.matmul(pooled[0], src)?;
    let b = tape.matmul(pooled[1], dst)?;
    let c = tape.add(a, b)?;
    let c = tape.reshape(c, &[1])?;
    Ok(tape.leaky_relu(c, ATTENTION_SLOPE))
}

fn validate_neighbors(neighbors: &[Vec<usize>], p: usize) -> Result<()> {
    if neighbors.len() != p {
        return Err(Error::invalid(format!(
            "{} neighbor lists for {p} regions",
            neighbors.len()
        )));
    }
    for (i, n) in neighbors.iter().enumerate() {
        if !n.contains(&i) || n.iter().any(|&j| j >= p) {
            return Err(Error::invalid(format!("neighbor list {i} is {n:?}")));
        }
    }
    Ok(())
}

/// Propagates every region block along `neighbors` (each list must hold its
/// own index).
pub fn sgat_forward(
    tape: &mut Tape,
    params: &Bindings,
    sgat: &SgatParams,
    blocks: &[Var],
    neighbors: &[Vec<usize>],
) -> Result<SgatOutput> {
    let p = blocks.len();
    if p == 0 {
        return Err(Error::invalid("no regions"));
    }
    validate_neighbors(neighbors, p)?;
    let shape = tape.shape(blocks[0]).to_vec();
    if shape.len() != 3 || shape[0] != sgat.channels {
        return Err(Error::shape(format!("region block {shape:?}")));
    }
    let c = sgat.channels;
    let per = sgat.head_channels();
    let area = shape[1] * shape[2];

    let kernel = params.get(sgat.kernel);
    let mut convolved = Vec::with_capacity(p);
    let mut pooled = Vec::with_capacity(p);
    for &b in blocks {
        check_block(tape, b, &shape)?;
        let z = tape.conv2d(b, kernel, None)?;
        pooled.push(tape.global_avg_pool(z)?);
        convolved.push(z);
    }
    let z = tape.concat(&convolved, 0)?;
    let z = tape.reshape(z, &[p, c * area])?;
    let u = tape.concat(&pooled, 0)?;
    let u = tape.reshape(u, &[p, c])?;

    // dense attention layout: position of alpha_ij in the concatenated
    // softmax outputs, or the trailing zero pad for non-neighbors
    let total: usize = neighbors.iter().map(Vec::len).sum();
    let mut layout = vec![total; p * p];
    let mut pos = 0;
    for (i, n) in neighbors.iter().enumerate() {
        for &j in n {
            layout[i * p + j] = pos;
            pos += 1;
        }
    }
    let pad = tape.constant(&Tensor::zeros(&[1]));

    let mut head_out = Vec::with_capacity(sgat.heads);
    let mut attention = Vec::with_capacity(sgat.heads);
    for k in 0..sgat.heads {
        let uk = tape.slice(u, 1, k * per, per)?;
        let (src, dst) = sgat.attention_halves(tape, params, k)?;
        let s = tape.matmul(uk, src)?;
        let s = tape.reshape(s, &[p])?;
        let t = tape.matmul(uk, dst)?;
        let t = tape.reshape(t, &[p])?;
        let mut rows = Vec::with_capacity(p + 1);
        for (i, n) in neighbors.iter().enumerate() {
            let si = tape.gather(s, &vec![i; n.len()])?;
            let tj = tape.gather(t, n)?;
            let logits = tape.add(si, tj)?;
            let logits = tape.leaky_relu(logits, ATTENTION_SLOPE);
            rows.push(tape.softmax(logits)?);
        }
        rows.push(pad);
        let flat = tape.concat(&rows, 0)?;
        let dense = tape.gather(flat, &layout)?;
        let dense = tape.reshape(dense, &[p, p])?;
        let zk = tape.slice(z, 1, k * per * area, per * area)?;
        head_out.push(tape.matmul(dense, zk)?);
        attention.push(dense);
    }
    let merged = tape.concat(&head_out, 1)?;
    let merged = tape.leaky_relu(merged, OUTPUT_SLOPE);
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        let row = tape.slice(merged, 0, i, 1)?;
        out.push(tape.reshape(row, &shape)?);
    }
    Ok(SgatOutput { blocks: out, attention })
}

/// 1×1 convolution mixing the channel-concatenated outputs of all sources
/// back to `C` channels.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub sources: usize,
    pub channels: usize,
}

impl FusionParams {
    /// Starts as the average of the sources.
    pub fn init(store: &mut ParamStore, prefix: &str, sources: usize, channels: usize) -> Self {
        let mut w = Tensor::zeros(&[channels, sources * channels, 1, 1]);
        let share = 1.0 / sources as f64;
        for o in 0..channels {
            for l in 0..sources {
                let i = w.offset(&[o, l * channels + o, 0, 0]);
                w.data_mut()[i] = share;
            }
        }
        let weight = store.add(format!("{prefix}.weight"), w);
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[channels]));
        Self {
            weight,
            bias,
            sources,
            channels,
        }
    }
}

/// Fuses per-source block sets (`sets[l][i]` is region `i` from source `l`).
pub fn fuse_updates(tape: &mut Tape, params: &Bindings, fusion: &FusionParams, sets: &[Vec<Var>]) -> Result<Vec<Var>> {
    if sets.len() != fusion.sources {
        return Err(Error::invalid(format!(
            "{} sources, fusion expects {}",
            sets.len(),
            fusion.sources
        )));
    }
    let p = sets[0].len();
    if sets.iter().any(|s| s.len() != p) {
        return Err(Error::invalid("sources disagree on region count"));
    }
    (0..p)
        .map(|i| {
            let parts: Vec<Var> = sets.iter().map(|s| s[i]).collect();
            let x = tape.concat(&parts, 0)?;
            tape.conv2d(x, params.get(fusion.weight), Some(params.get(fusion.bias)))
        })
        .collect()
}
