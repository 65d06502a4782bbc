use grassnet_core::knowledge::ProximityGraph;
use grassnet_core::metrics::{self, FixationSet, MetricReport};
use grassnet_core::model::GraSSNet;
use grassnet_core::{par, Error, Result, Tensor};

use crate::synth::SaliencySample;

pub fn predict_all(model: &GraSSNet, samples: &[&SaliencySample]) -> Result<Vec<Tensor>> {
    par::map(samples, |s| model.predict(&s.image, &s.boxes))
        .into_iter()
        .collect()
}

/// All six metrics per sample. Shuffled-AUC negatives come from the other
/// samples' fixations; sample `i` uses seed `seed + i`.
pub fn score_maps(maps: &[Tensor], samples: &[&SaliencySample], seed: u64) -> Result<Vec<MetricReport>> {
    if maps.len() != samples.len() {
        return Err(Error::invalid("one map per sample is required"));
    }
    if samples.len() < 2 {
        return Err(Error::invalid("shuffled AUC needs at least two samples"));
    }
    let all: Vec<FixationSet> = samples.iter().map(|s| s.fixations.clone()).collect();
    let items: Vec<usize> = (0..samples.len()).collect();
    par::map(&items, |&i| {
        let s = samples[i];
        if maps[i].len() != s.density.len() {
            return Err(Error::shape(format!(
                "prediction {:?} does not match data {:?}",
                maps[i].shape(),
                s.density.shape()
            )));
        }
        let others: Vec<FixationSet> = all
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, f)| f.clone())
            .collect();
        metrics::evaluate(
            maps[i].data(),
            s.density.data(),
            &s.fixations,
            &others,
            seed.wrapping_add(i as u64),
        )
    })
    .into_iter()
    .collect()
}

pub fn evaluate(model: &GraSSNet, samples: &[&SaliencySample], seed: u64) -> Result<Vec<MetricReport>> {
    let maps = predict_all(model, samples)?;
    score_maps(&maps, samples, seed)
}

/// Edge agreement of predicted proximity graphs with the external graphs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EdgeCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl EdgeCounts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            return 1.0;
        }
        2.0 * self.true_pos as f64 / denom as f64
    }
}

/// Per-source counts over region pairs `i < j`: a predicted edge is a score
/// above the source threshold, a true edge an external weight above the
/// external graph's threshold.
pub fn edge_counts(
    model: &GraSSNet,
    samples: &[&SaliencySample],
    graphs: &[&ProximityGraph],
) -> Result<Vec<EdgeCounts>> {
    let sources = model.config.knowledge.sources();
    if graphs.len() != sources.len() {
        return Err(Error::invalid("one external graph per knowledge source is required"));
    }
    let per_sample = par::map(samples, |s| model.graphs(&s.image, &s.boxes))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![EdgeCounts::default(); sources.len()];
    for (s, preds) in samples.iter().zip(&per_sample) {
        for (k, (pred, ext)) in preds.iter().zip(graphs).enumerate() {
            let theta = model.config.theta(sources[k]);
            let idx = s.labels.iter().map(|l| ext.index_of(l)).collect::<Result<Vec<_>>>()?;
            for i in 0..pred.size {
                for j in i + 1..pred.size {
                    let c = &mut counts[k];
                    match (pred.score(i, j) > theta, ext.is_edge(idx[i], idx[j])) {
                        (true, true) => c.true_pos += 1,
                        (true, false) => c.false_pos += 1,
                        (false, true) => c.false_neg += 1,
                        (false, false) => c.true_neg += 1,
                    }
                }
            }
        }
    }
    Ok(counts)
}

/// Per-sample rows plus a final `mean` row, columns in benchmark order.
pub fn report_csv(reports: &[MetricReport]) -> String {
    let mut s = format!("sample,{}\n", MetricReport::HEADER);
    for (i, r) in reports.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", r.to_csv_fields()));
    }
    s.push_str(&format!("mean,{}\n", MetricReport::mean(reports).to_csv_fields()));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SceneSpec};

    #[test]
    fn ground_truth_as_prediction_is_the_upper_bound() {
        let data = generate_dataset(&SceneSpec::default_with_seed(2).unwrap(), 6).unwrap();
        let refs: Vec<&SaliencySample> = data.iter().collect();
        let maps: Vec<Tensor> = data.iter().map(|s| s.density.clone()).collect();
        let reports = score_maps(&maps, &refs, 0).unwrap();
        for r in &reports {
            assert!((r.cc - 1.0).abs() < 1e-12);
            assert!((r.sim - 1.0).abs() < 1e-12);
            assert!(r.kl.abs() < 1e-9);
        }
        let csv = report_csv(&reports);
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.starts_with("sample,CC,AUC,NSS,sAUC,KL,SIM\n"));
        assert!(score_maps(&maps[..1], &refs[..1], 0).is_err());
    }
}
