use grassnet_core::knowledge::ProximityGraph;
use grassnet_core::metrics::MetricReport;
use grassnet_core::model::{GraSSNet, Knowledge};
use grassnet_core::Result;

use crate::config::RunConfig;
use crate::evaluate;
use crate::synth::{generate_dataset, SaliencySample};
use crate::train::{split_samples, train_model};

pub const BACKBONE: &str = "conv3";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub knowledge: Knowledge,
    pub per_seed: Vec<(u64, MetricReport)>,
    pub mean: MetricReport,
}

/// Validation metrics for one knowledge selection and one seed. The data
/// split is fixed by the data seed so every cell sees the same held-out set.
pub fn run_cell(
    config: &RunConfig,
    knowledge: Knowledge,
    seed: u64,
    samples: &[SaliencySample],
) -> Result<MetricReport> {
    let (train, val) = split_samples(config, samples);
    let mut cfg = config.clone();
    cfg.model.knowledge = knowledge;
    cfg.seed = seed;
    let graphs: Vec<ProximityGraph> = knowledge
        .sources()
        .iter()
        .map(|&s| cfg.graph(s))
        .collect::<Result<_>>()?;
    let graph_refs: Vec<&ProximityGraph> = graphs.iter().collect();
    let mut model = GraSSNet::new(cfg.model.clone(), seed)?;
    train_model(&mut model, &cfg, &train, &graph_refs, |_, _| {})?;
    let reports = evaluate::evaluate(&model, &val, seed)?;
    Ok(MetricReport::mean(&reports))
}

/// Every knowledge selection under every configured seed.
pub fn ablate(config: &RunConfig, kinds: &[Knowledge]) -> Result<Vec<AblationRow>> {
    let samples = generate_dataset(&config.scene_spec()?, config.scenes)?;
    kinds
        .iter()
        .map(|&k| {
            let per_seed = config
                .seeds
                .iter()
                .map(|&s| Ok((s, run_cell(config, k, s, &samples)?)))
                .collect::<Result<Vec<_>>>()?;
            let mean = MetricReport::mean(&per_seed.iter().map(|p| p.1).collect::<Vec<_>>());
            Ok(AblationRow {
                knowledge: k,
                per_seed,
                mean,
            })
        })
        .collect()
}

/// Comparison table: one row per knowledge selection with metrics averaged
/// over seeds, then the per-seed rows.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let line = |seed: &str, r: &AblationRow, m: &MetricReport| {
        format!(
            "{BACKBONE},{},{seed},{:.6},{:.6},{:.6},{:.6}\n",
            r.knowledge, m.cc, m.auc, m.nss, m.sauc
        )
    };
    let mut s = String::from("backbone,knowledge,seed,CC,AUC,NSS,sAUC\n");
    for r in rows {
        s.push_str(&line("mean", r, &r.mean));
    }
    for r in rows {
        for (seed, m) in &r.per_seed {
            s.push_str(&line(&seed.to_string(), r, m));
        }
    }
    s
}
