//! Full network assembly, per-sample losses and checkpoints.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::head::{self, HeadParams, LossWeights, PriorParams};
use crate::knowledge::{ProximityGraph, COOCCURRENCE_THRESHOLD, WUP_THRESHOLD};
use crate::metrics::FixationSet;
use crate::proposals::{self, BBox, Backbone, FeatureMap, RegionSet};
use crate::rng;
use crate::sgat::{self, FusionParams, SgatParams};
use crate::spn::{self, PredictedGraph, SpnParams};
use crate::tensor::{read_gtsr, write_gtsr, Bindings, ParamId, ParamStore, Tape, Tensor, Var};

/// External knowledge source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Cooccurrence,
    Wup,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Cooccurrence => "cooccurrence",
            Source::Wup => "wup",
        }
    }

    pub fn default_theta(self) -> f64 {
        match self {
            Source::Cooccurrence => COOCCURRENCE_THRESHOLD,
            Source::Wup => WUP_THRESHOLD,
        }
    }
}

/// Which knowledge sources feed the region branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Knowledge {
    None,
    Cooccurrence,
    Wup,
    Both,
}

impl Knowledge {
    pub const ALL: [Knowledge; 4] = [
        Knowledge::None,
        Knowledge::Cooccurrence,
        Knowledge::Wup,
        Knowledge::Both,
    ];

    pub fn sources(self) -> &'static [Source] {
        match self {
            Knowledge::None => &[],
            Knowledge::Cooccurrence => &[Source::Cooccurrence],
            Knowledge::Wup => &[Source::Wup],
            Knowledge::Both => &[Source::Cooccurrence, Source::Wup],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Knowledge::None => "none",
            Knowledge::Cooccurrence => "cooccurrence",
            Knowledge::Wup => "wup",
            Knowledge::Both => "both",
        }
    }
}

impl fmt::Display for Knowledge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Knowledge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Knowledge::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown knowledge selection `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub pool: usize,
    pub heads: usize,
    pub priors: usize,
    pub center_bias: bool,
    pub knowledge: Knowledge,
    pub theta_cooccurrence: f64,
    pub theta_wup: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            pool: 7,
            heads: sgat::DEFAULT_HEADS,
            priors: head::DEFAULT_PRIORS,
            center_bias: true,
            knowledge: Knowledge::Both,
            theta_cooccurrence: COOCCURRENCE_THRESHOLD,
            theta_wup: WUP_THRESHOLD,
        }
    }
}

impl ModelConfig {
    pub fn theta(&self, source: Source) -> f64 {
        match source {
            Source::Cooccurrence => self.theta_cooccurrence,
            Source::Wup => self.theta_wup,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.pool == 0 {
            return Err(Error::invalid("channels and pool size must be positive"));
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "{} heads do not divide {} channels",
                self.heads, self.channels
            )));
        }
        if self.center_bias && self.priors == 0 {
            return Err(Error::invalid("center bias needs at least one prior"));
        }
        for t in [self.theta_cooccurrence, self.theta_wup] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("threshold {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn to_manifest(&self) -> String {
        format!(
            "channels = {}\npool = {}\nheads = {}\npriors = {}\ncenter_bias = {}\nknowledge = {}\ntheta.cooccurrence = {}\ntheta.wup = {}\n",
            self.channels,
            self.pool,
            self.heads,
            self.priors,
            self.center_bias,
            self.knowledge,
            self.theta_cooccurrence,
            self.theta_wup
        )
    }
}

/// Supervision for one training image.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub density: &'a Tensor,
    pub fixations: &'a FixationSet,
    pub labels: &'a [String],
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub saliency: Var,
    pub graphs: Vec<PredictedGraph>,
    pub region_blocks: Vec<Var>,
}

/// Scalar loss pieces of one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub saliency: f64,
    pub proximity: f64,
}

/// Gradients of one sample, ordered like the parameter store.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub loss: LossParts,
    pub grads: Vec<Vec<f64>>,
}

pub const CHECKPOINT_MAGIC: &str = "GRASSNET-CHECKPOINT 1";
pub const MANIFEST: &str = "manifest.txt";

/// The whole model: backbone, baseline branch, knowledge branch, priors and
/// head, with every parameter in one store.
#[derive(Debug, Clone)]
pub struct GraSSNet {
    pub config: ModelConfig,
    pub store: ParamStore,
    backbone: Backbone,
    baseline: (ParamId, ParamId),
    spns: Vec<SpnParams>,
    sgats: Vec<SgatParams>,
    fusion: Option<FusionParams>,
    priors: Option<PriorParams>,
    head: HeadParams,
}

impl GraSSNet {
    /// Each component draws from its own seed stream, so toggling one part
    /// leaves the initialization of the others unchanged.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut store = ParamStore::new();
        let backbone = Backbone::init(&mut store, &mut rng::derive(seed, 1), c);
        let mut r = rng::derive(seed, 2);
        let baseline = (
            store.add("baseline.weight", rng::he_uniform(&mut r, &[c, c, 3, 3], c * 9)),
            store.add("baseline.bias", Tensor::zeros(&[c])),
        );
        let mut spns = Vec::new();
        let mut sgats = Vec::new();
        for s in config.knowledge.sources() {
            let stream = 10 + 2 * *s as u64;
            spns.push(SpnParams::init(
                &mut store,
                &mut rng::derive(seed, stream),
                &format!("spn.{}", s.name()),
                c,
            ));
            sgats.push(SgatParams::init(
                &mut store,
                &mut rng::derive(seed, stream + 1),
                &format!("sgat.{}", s.name()),
                c,
                config.heads,
            )?);
        }
        let n = config.knowledge.sources().len();
        let fusion = (n > 0).then(|| FusionParams::init(&mut store, "fusion", n, c));
        let priors = config
            .center_bias
            .then(|| PriorParams::init(&mut store, &mut rng::derive(seed, 3), config.priors));
        let head_in = 2 * c + if config.center_bias { config.priors } else { 0 };
        let head = HeadParams::init(&mut store, &mut rng::derive(seed, 4), head_in);
        Ok(Self {
            config,
            store,
            backbone,
            baseline,
            spns,
            sgats,
            fusion,
            priors,
            head,
        })
    }

    /// Scalar parameter counts per component group.
    pub fn parameter_report(&self) -> Vec<(&'static str, usize)> {
        ["backbone", "baseline", "spn", "sgat", "fusion", "prior", "head"]
            .into_iter()
            .map(|g| (g, self.store.count_with_prefix(&format!("{g}."))))
            .collect()
    }

    fn encode_regions(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        image: &Tensor,
        boxes: &[BBox],
    ) -> Result<(FeatureMap, RegionSet)> {
        let (h, w) = match *image.shape() {
            [3, h, w] => (h, w),
            ref s => return Err(Error::shape(format!("image must be [3,H,W], got {s:?}"))),
        };
        if boxes.is_empty() {
            return Err(Error::invalid("at least one region box is required"));
        }
        for b in boxes {
            b.validate(h, w)?;
        }
        let img = tape.constant(image);
        let fm: FeatureMap = self.backbone.encode(tape, params, img)?;
        let pool = (self.config.pool, self.config.pool);
        let regions = proposals::extract_roi_features(tape, &fm, boxes, None, pool)?;
        Ok((fm, regions))
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bindings, image: &Tensor, boxes: &[BBox]) -> Result<Forward> {
        let (fm, regions) = self.encode_regions(tape, params, image, boxes)?;
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let mut graphs = Vec::new();
        let knowledge_blocks = match &self.fusion {
            None => regions.features.clone(),
            Some(fusion) => {
                let mut sets = Vec::with_capacity(self.spns.len());
                for ((spn, sg), src) in self.spns.iter().zip(&self.sgats).zip(self.config.knowledge.sources()) {
                    let g = spn::predict_graph(tape, params, spn, &regions.features, self.config.theta(*src))?;
                    let out = sgat::sgat_forward(tape, params, sg, &regions.features, &g.neighbors)?;
                    sets.push(out.blocks);
                    graphs.push(g);
                }
                sgat::fuse_updates(tape, params, fusion, &sets)?
            }
        };
        let geometry = (fm.channels, fm.height, fm.width);
        let knowledge_map = proposals::project_back(tape, geometry, fm.stride, boxes, &knowledge_blocks)?;
        let baseline = tape.conv2d(fm.map, params.get(self.baseline.0), Some(params.get(self.baseline.1)))?;
        let baseline = tape.leaky_relu(baseline, proposals::ENCODER_SLOPE);
        let priors = match &self.priors {
            Some(p) => Some(head::prior_maps(tape, params, p, fm.height, fm.width)?),
            None => None,
        };
        let saliency = head::predict(tape, params, &self.head, knowledge_map, baseline, priors, h, w)?;
        Ok(Forward {
            saliency,
            graphs,
            region_blocks: regions.features,
        })
    }

    /// Saliency map `[1, H, W]` without recording gradients for parameters.
    pub fn predict(&self, image: &Tensor, boxes: &[BBox]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = Bindings::from_vars(self.store.iter().map(|(_, t)| tape.constant(t)).collect());
        let out = self.forward(&mut tape, &params, image, boxes)?;
        Ok(tape.tensor(out.saliency))
    }

    /// Builds the total loss of one sample on `tape`. `graphs` aligns with
    /// the configured sources.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        image: &Tensor,
        boxes: &[BBox],
        target: Target<'_>,
        graphs: &[&ProximityGraph],
        weights: &LossWeights,
    ) -> Result<(Var, LossParts)> {
        let sources = self.config.knowledge.sources();
        if graphs.len() != sources.len() {
            return Err(Error::invalid(format!(
                "{} knowledge graphs for {} sources",
                graphs.len(),
                sources.len()
            )));
        }
        let fwd = self.forward(tape, params, image, boxes)?;
        let sal = head::loss_sal(tape, fwd.saliency, target.density, target.fixations, weights)?;
        let mut prox = Vec::with_capacity(graphs.len());
        for (pred, ext) in fwd.graphs.iter().zip(graphs) {
            prox.push(spn::prox_loss(tape, pred, ext, target.labels)?);
        }
        let total = head::loss_total(tape, sal, &prox, weights.lambda)?;
        let parts = LossParts {
            total: tape.item(total),
            saliency: tape.item(sal),
            proximity: prox.iter().map(|&p| tape.item(p)).sum(),
        };
        Ok((total, parts))
    }

    /// Loss and parameter gradients of one sample on a private tape.
    pub fn sample_grad(
        &self,
        image: &Tensor,
        boxes: &[BBox],
        target: Target<'_>,
        graphs: &[&ProximityGraph],
        weights: &LossWeights,
    ) -> Result<SampleGrad> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape);
        let (total, loss) = self.loss(&mut tape, &params, image, boxes, target, graphs, weights)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("sample loss is {}", loss.total)));
        }
        tape.backward(total)?;
        Ok(SampleGrad {
            loss,
            grads: self.store.collect_grads(&tape, &params),
        })
    }

    /// One predicted graph per knowledge source, skipping the saliency path.
    pub fn predict_graphs(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        image: &Tensor,
        boxes: &[BBox],
    ) -> Result<Vec<PredictedGraph>> {
        let (_, regions) = self.encode_regions(tape, params, image, boxes)?;
        self.spns
            .iter()
            .zip(self.config.knowledge.sources())
            .map(|(spn, src)| spn::predict_graph(tape, params, spn, &regions.features, self.config.theta(*src)))
            .collect()
    }

    /// Gradients of the summed proximity loss alone. Only the backbone and
    /// the proximity predictors receive gradient.
    pub fn proximity_grad(
        &self,
        image: &Tensor,
        boxes: &[BBox],
        labels: &[String],
        graphs: &[&ProximityGraph],
    ) -> Result<SampleGrad> {
        if graphs.len() != self.spns.len() || graphs.is_empty() {
            return Err(Error::invalid(format!(
                "{} knowledge graphs for {} sources",
                graphs.len(),
                self.spns.len()
            )));
        }
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape);
        let preds = self.predict_graphs(&mut tape, &params, image, boxes)?;
        let terms = preds
            .iter()
            .zip(graphs)
            .map(|(p, g)| spn::prox_loss(&mut tape, p, g, labels))
            .collect::<Result<Vec<_>>>()?;
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        let value = tape.item(total);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("proximity loss is {value}")));
        }
        tape.backward(total)?;
        Ok(SampleGrad {
            loss: LossParts {
                total: value,
                saliency: 0.0,
                proximity: value,
            },
            grads: self.store.collect_grads(&tape, &params),
        })
    }

    /// Inference-only [`GraSSNet::predict_graphs`].
    pub fn graphs(&self, image: &Tensor, boxes: &[BBox]) -> Result<Vec<PredictedGraph>> {
        let mut tape = Tape::new();
        let params = Bindings::from_vars(self.store.iter().map(|(_, t)| tape.constant(t)).collect());
        self.predict_graphs(&mut tape, &params, image, boxes)
    }

    /// Parameter ids of the proximity predictors.
    pub fn spn_params(&self) -> Vec<ParamId> {
        self.spns.iter().flat_map(SpnParams::param_ids).collect()
    }

    pub fn save(&self, dir: &Path, meta: &[(String, String)]) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = format!("{CHECKPOINT_MAGIC}\n");
        manifest.push_str(&self.config.to_manifest());
        for (k, v) in meta {
            manifest.push_str(&format!("meta.{k} = {v}\n"));
        }
        for (i, (name, t)) in self.store.iter().enumerate() {
            let file = format!("{i:03}.gtsr");
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            manifest.push_str(&format!("param {name} {file} {}\n", dims.join("x")));
            let mut bytes = Vec::new();
            write_gtsr(&mut bytes, t)?;
            fs::write(dir.join(file), bytes)?;
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    /// Loads a checkpoint, returning the model and its extra metadata.
    pub fn load(dir: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let bad = |d: String| Error::format("checkpoint", d);
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing header".into()));
        }
        let mut config = ModelConfig::default();
        let mut meta = Vec::new();
        let mut params = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("param ") {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 3 {
                    return Err(bad(format!("bad parameter line `{line}`")));
                }
                params.push((f[0].to_string(), f[1].to_string()));
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("bad line `{line}`")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{k}: {e}")));
            let real = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{k}: {e}")));
            match k {
                "channels" => config.channels = num(v)?,
                "pool" => config.pool = num(v)?,
                "heads" => config.heads = num(v)?,
                "priors" => config.priors = num(v)?,
                "center_bias" => config.center_bias = v.parse().map_err(|e| bad(format!("{k}: {e}")))?,
                "knowledge" => config.knowledge = v.parse().map_err(|e: Error| bad(e.to_string()))?,
                "theta.cooccurrence" => config.theta_cooccurrence = real(v)?,
                "theta.wup" => config.theta_wup = real(v)?,
                _ => match k.strip_prefix("meta.") {
                    Some(m) => meta.push((m.to_string(), v.to_string())),
                    None => return Err(bad(format!("unknown key `{k}`"))),
                },
            }
        }
        let mut model = Self::new(config, 0).map_err(|e| bad(e.to_string()))?;
        if params.len() != model.store.len() {
            return Err(bad(format!(
                "{} parameters stored, configuration needs {}",
                params.len(),
                model.store.len()
            )));
        }
        for (name, file) in params {
            let id = model
                .store
                .id(&name)
                .ok_or_else(|| bad(format!("unexpected parameter `{name}`")))?;
            let t = read_gtsr(fs::File::open(dir.join(&file))?)?;
            if t.shape() != model.store.get(id).shape() {
                return Err(bad(format!("parameter `{name}` has shape {:?}", t.shape())));
            }
            model.store.set_values(id, t.data())?;
        }
        Ok((model, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(knowledge: Knowledge, center_bias: bool) -> ModelConfig {
        ModelConfig {
            channels: 8,
            heads: 2,
            pool: 3,
            priors: 4,
            center_bias,
            knowledge,
            ..ModelConfig::default()
        }
    }

    fn scene() -> (Tensor, Vec<BBox>, Vec<String>, Tensor, FixationSet) {
        let image = rng::uniform(&mut rng::seeded(1), &[3, 32, 32], 0.0, 1.0);
        let boxes = vec![
            BBox::new(0, 0, 12, 12),
            BBox::new(16, 4, 30, 14),
            BBox::new(4, 18, 20, 30),
        ];
        let labels = vec!["a".to_string(), "b".to_string(), "a".to_string()];
        let mut d = rng::uniform(&mut rng::seeded(2), &[1, 32, 32], 0.0, 1.0);
        let s = d.sum();
        d.data_mut().iter_mut().for_each(|v| *v /= s);
        let fix = FixationSet::new(32, 32, vec![(3, 3), (20, 8), (10, 25)]).unwrap();
        (image, boxes, labels, d, fix)
    }

    fn graph() -> ProximityGraph {
        ProximityGraph::new(vec!["a".into(), "b".into()], vec![1.0, 0.4, 0.4, 1.0], 0.3).unwrap()
    }

    #[test]
    fn knowledge_none_skips_region_graph_parts() {
        let none = GraSSNet::new(small(Knowledge::None, true), 0).unwrap();
        let both = GraSSNet::new(small(Knowledge::Both, true), 0).unwrap();
        let get = |m: &GraSSNet, g: &str| m.parameter_report().into_iter().find(|r| r.0 == g).unwrap().1;
        for g in ["spn", "sgat", "fusion"] {
            assert_eq!(get(&none, g), 0);
            assert!(get(&both, g) > 0);
        }
        for g in ["backbone", "baseline", "prior", "head"] {
            assert_eq!(get(&none, g), get(&both, g));
        }
        assert_eq!(
            none.store.get(none.store.id("backbone.conv0.weight").unwrap()),
            both.store.get(both.store.id("backbone.conv0.weight").unwrap())
        );
    }

    #[test]
    fn center_bias_changes_only_prior_and_head() {
        let off = GraSSNet::new(small(Knowledge::Both, false), 0).unwrap();
        let on = GraSSNet::new(small(Knowledge::Both, true), 0).unwrap();
        for ((g, a), (_, b)) in off.parameter_report().into_iter().zip(on.parameter_report()) {
            match g {
                "prior" => assert_eq!(b - a, 4 * 4),
                "head" => assert_eq!(b - a, head::HEAD_HIDDEN * 4 * 9),
                _ => assert_eq!(a, b, "{g}"),
            }
        }
    }

    #[test]
    fn forward_and_loss_every_knowledge_mode() {
        let (image, boxes, labels, density, fix) = scene();
        let g = graph();
        for k in Knowledge::ALL {
            // thresholds of 0 connect every pair, so attention gets gradient
            let cfg = ModelConfig {
                theta_cooccurrence: 0.0,
                theta_wup: 0.0,
                ..small(k, true)
            };
            let m = GraSSNet::new(cfg, 3).unwrap();
            let graphs: Vec<&ProximityGraph> = k.sources().iter().map(|_| &g).collect();
            let target = Target {
                density: &density,
                fixations: &fix,
                labels: &labels,
            };
            let sg = m
                .sample_grad(&image, &boxes, target, &graphs, &LossWeights::default())
                .unwrap();
            assert!(sg.loss.total.is_finite());
            assert_eq!(sg.loss.proximity == 0.0, k == Knowledge::None);
            for (i, g) in sg.grads.iter().enumerate() {
                assert!(g.iter().any(|v| *v != 0.0), "{k}: {}", m.store.name(ParamId(i)));
            }
            let y = m.predict(&image, &boxes).unwrap();
            assert_eq!(y.shape(), &[1, 32, 32]);
            assert!(
                m.sample_grad(&image, &boxes, target, &[], &LossWeights::default())
                    .is_err()
                    || k == Knowledge::None
            );
        }
    }

    #[test]
    fn proximity_grad_reaches_only_encoder_and_spn() {
        let (image, boxes, labels, _, _) = scene();
        let g = graph();
        let m = GraSSNet::new(small(Knowledge::Both, true), 6).unwrap();
        let sg = m.proximity_grad(&image, &boxes, &labels, &[&g, &g]).unwrap();
        assert!(sg.loss.proximity > 0.0);
        for (i, grad) in sg.grads.iter().enumerate() {
            let name = m.store.name(ParamId(i));
            let touched = grad.iter().any(|v| *v != 0.0);
            assert_eq!(
                touched,
                name.starts_with("backbone") || name.starts_with("spn"),
                "{name}"
            );
        }
        assert_eq!(m.graphs(&image, &boxes).unwrap().len(), 2);
        assert!(m.proximity_grad(&image, &boxes, &labels, &[&g]).is_err());
        let none = GraSSNet::new(small(Knowledge::None, false), 6).unwrap();
        assert!(none.proximity_grad(&image, &boxes, &labels, &[]).is_err());
    }

    #[test]
    fn zero_lambda_leaves_spn_untouched() {
        let (image, boxes, labels, density, fix) = scene();
        let g = graph();
        let m = GraSSNet::new(small(Knowledge::Both, false), 4).unwrap();
        let w = LossWeights {
            lambda: 0.0,
            ..LossWeights::default()
        };
        let target = Target {
            density: &density,
            fixations: &fix,
            labels: &labels,
        };
        let sg = m.sample_grad(&image, &boxes, target, &[&g, &g], &w).unwrap();
        for id in m.spn_params() {
            assert!(sg.grads[id.0].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join(format!("grassnet-ckpt-{}", std::process::id()));
        let mut m = GraSSNet::new(small(Knowledge::Wup, true), 5).unwrap();
        m.store.round_to_f32();
        m.save(&dir, &[("image".into(), "32x32".into())]).unwrap();
        let (back, meta) = GraSSNet::load(&dir).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.store, m.store);
        assert_eq!(meta, vec![("image".to_string(), "32x32".to_string())]);
        let (image, boxes, ..) = scene();
        assert_eq!(
            back.predict(&image, &boxes).unwrap(),
            m.predict(&image, &boxes).unwrap()
        );
        fs::write(dir.join(MANIFEST), "nope\n").unwrap();
        assert!(GraSSNet::load(&dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
