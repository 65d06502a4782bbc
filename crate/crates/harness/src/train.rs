use grassnet_core::head::LossWeights;
use grassnet_core::knowledge::ProximityGraph;
use grassnet_core::model::{GraSSNet, LossParts, SampleGrad, Target};
use grassnet_core::rng;
use grassnet_core::tensor::Adam;
use grassnet_core::{par, Error, Result};
use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::synth::SaliencySample;

/// Seeded train/validation split; validation takes `ceil(n·fraction)` items
/// but always leaves at least one for training.
pub fn split(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::derive(seed, 0x5EED));
    let val = ((n as f64 * val_fraction).ceil() as usize).min(n.saturating_sub(1));
    let train = idx.split_off(val);
    (train, idx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub loss: LossParts,
    pub lr: f64,
}

pub const LOSS_CSV_HEADER: &str = "iteration,loss,saliency,proximity,lr";

pub fn loss_csv(log: &[IterationLog]) -> String {
    let mut s = format!("{LOSS_CSV_HEADER}\n");
    for l in log {
        s.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9e}\n",
            l.iteration, l.loss.total, l.loss.saliency, l.loss.proximity, l.lr
        ));
    }
    s
}

fn target(s: &SaliencySample) -> Target<'_> {
    Target {
        density: &s.density,
        fixations: &s.fixations,
        labels: &s.labels,
    }
}

/// Mean loss and mean parameter gradients over a batch. Per-sample work runs
/// through the data-parallel map when `parallel` is set; the reduction is
/// always in batch order.
pub fn batch_gradient(
    model: &GraSSNet,
    batch: &[&SaliencySample],
    graphs: &[&ProximityGraph],
    weights: &LossWeights,
    parallel: bool,
) -> Result<(LossParts, Vec<Vec<f64>>)> {
    let run = |s: &&SaliencySample| model.sample_grad(&s.image, &s.boxes, target(s), graphs, weights);
    let results: Vec<Result<SampleGrad>> = if parallel {
        par::map(batch, run)
    } else {
        par::sequential_map(batch, run)
    };
    let n = batch.len() as f64;
    let mut loss = LossParts::default();
    let mut grads: Vec<Vec<f64>> = model.store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    for r in results {
        let sg = r?;
        loss.total += sg.loss.total / n;
        loss.saliency += sg.loss.saliency / n;
        loss.proximity += sg.loss.proximity / n;
        for (acc, g) in grads.iter_mut().zip(&sg.grads) {
            acc.iter_mut().zip(g).for_each(|(a, v)| *a += v / n);
        }
    }
    Ok((loss, grads))
}

/// Cycles through shuffled epochs of the training indices.
struct Batcher {
    pool: Vec<usize>,
    queue: Vec<usize>,
    seed: u64,
    epoch: u64,
}

impl Batcher {
    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.queue.is_empty() {
                self.queue = self.pool.clone();
                self.queue.shuffle(&mut rng::derive(self.seed, 1000 + self.epoch));
                self.epoch += 1;
            }
            out.push(self.queue.pop().expect("refilled above"));
        }
        out
    }
}

/// Runs `iterations` Adam steps on `model` over `train`, calling `observe`
/// after each one. Stops with [`Error::NonFinite`] on a non-finite loss or
/// gradient.
pub fn train_model(
    model: &mut GraSSNet,
    config: &RunConfig,
    train: &[&SaliencySample],
    graphs: &[&ProximityGraph],
    mut observe: impl FnMut(&IterationLog, &GraSSNet),
) -> Result<Vec<IterationLog>> {
    if train.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut adam = Adam::new(config.adam());
    let mut batcher = Batcher {
        pool: (0..train.len()).collect(),
        queue: Vec::new(),
        seed: config.seed,
        epoch: 0,
    };
    let mut log = Vec::with_capacity(config.iterations);
    for it in 1..=config.iterations {
        let picks = batcher.next(config.batch.min(train.len()));
        let batch: Vec<&SaliencySample> = picks.iter().map(|&i| train[i]).collect();
        let lr = adam.current_lr();
        let (loss, grads) = batch_gradient(model, &batch, graphs, &config.weights, true)?;
        if !loss.total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("iteration {it}: loss {}", loss.total)));
        }
        model.store.zero_grad();
        model.store.accumulate(&grads)?;
        adam.step(&mut model.store)?;
        let entry = IterationLog {
            iteration: it,
            loss,
            lr,
        };
        observe(&entry, model);
        log.push(entry);
    }
    // checkpoints hold f32; keep the in-memory model identical to a reload
    model.store.round_to_f32();
    Ok(log)
}

/// Trains only the encoder and the proximity predictors, on the proximity
/// loss alone, for `steps` Adam steps. Returns the mean batch loss per step.
pub fn train_proximity(
    model: &mut GraSSNet,
    config: &RunConfig,
    train: &[&SaliencySample],
    graphs: &[&ProximityGraph],
    steps: usize,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut adam = Adam::new(config.adam());
    let mut batcher = Batcher {
        pool: (0..train.len()).collect(),
        queue: Vec::new(),
        seed: config.seed,
        epoch: 0,
    };
    let mut losses = Vec::with_capacity(steps);
    for step in 1..=steps {
        let picks = batcher.next(config.batch.min(train.len()));
        let results = par::map(&picks, |&i| {
            let s = train[i];
            model.proximity_grad(&s.image, &s.boxes, &s.labels, graphs)
        });
        let n = picks.len() as f64;
        let mut loss = 0.0;
        let mut grads: Vec<Vec<f64>> = model.store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        for r in results {
            let sg = r?;
            loss += sg.loss.total / n;
            for (acc, g) in grads.iter_mut().zip(&sg.grads) {
                acc.iter_mut().zip(g).for_each(|(a, v)| *a += v / n);
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("step {step}: proximity loss {loss}")));
        }
        model.store.zero_grad();
        model.store.accumulate(&grads)?;
        adam.step(&mut model.store)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// External graphs for the configured knowledge sources, in source order.
pub fn load_graphs(config: &RunConfig) -> Result<Vec<ProximityGraph>> {
    config
        .model
        .knowledge
        .sources()
        .iter()
        .map(|&s| config.graph(s))
        .collect()
}

/// Training and validation samples. The split depends only on the data
/// seed, so runs that differ in model seed or knowledge share it.
pub fn split_samples<'a>(
    config: &RunConfig,
    samples: &'a [SaliencySample],
) -> (Vec<&'a SaliencySample>, Vec<&'a SaliencySample>) {
    let (t, v) = split(samples.len(), config.val_fraction, config.data_seed);
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| &samples[i]).collect();
    (pick(t), pick(v))
}

/// Trains a freshly initialized model on the training split.
pub fn train(
    config: &RunConfig,
    samples: &[SaliencySample],
    graphs: &[ProximityGraph],
) -> Result<(GraSSNet, Vec<IterationLog>)> {
    let (train, _) = split_samples(config, samples);
    let graph_refs: Vec<&ProximityGraph> = graphs.iter().collect();
    let mut model = GraSSNet::new(config.model.clone(), config.seed)?;
    let log = train_model(&mut model, config, &train, &graph_refs, |_, _| {})?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (t, v) = split(200, 0.2, 3);
        assert_eq!((t.len(), v.len()), (160, 40));
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        assert_eq!(split(200, 0.2, 3), (t, v));
        assert_eq!(split(1, 0.2, 0).0.len(), 1);
    }

    #[test]
    fn batcher_covers_epochs() {
        let mut b = Batcher {
            pool: (0..7).collect(),
            queue: Vec::new(),
            seed: 1,
            epoch: 0,
        };
        let mut seen: Vec<usize> = (0..7).flat_map(|_| b.next(1)).collect();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        assert_eq!(b.next(10).len(), 10);
    }
}
