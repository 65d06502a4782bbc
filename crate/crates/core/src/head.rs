//! Learnable Gaussian center-bias priors, the final prediction head and the
//! training losses.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::metrics::FixationSet;
use crate::rng::{self, SeededRng};
use crate::tensor::{Bindings, ParamId, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_PRIORS: usize = 16;
pub const HEAD_HIDDEN: usize = 16;
pub const PRIOR_SIGMA_INIT: f64 = 0.2;
const SLOPE: f64 = 0.01;

/// `R` Gaussians in normalized image coordinates. Means are stored as
/// `[R, 2]` (x, y); widths as `[R, 2]` pre-softplus values.
#[derive(Debug, Clone)]
pub struct PriorParams {
    pub means: ParamId,
    pub widths: ParamId,
    pub count: usize,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl PriorParams {
    pub fn init(store: &mut ParamStore, rng: &mut SeededRng, count: usize) -> Self {
        let means = store.add("prior.means", rng::uniform(rng, &[count, 2], 0.35, 0.65));
        let widths = store.add(
            "prior.widths",
            Tensor::full(&[count, 2], inverse_softplus(PRIOR_SIGMA_INIT)),
        );
        Self { means, widths, count }
    }

    /// Overwrites prior `r` with the given mean and (positive) widths.
    pub fn set(&self, store: &mut ParamStore, r: usize, mean: (f64, f64), sigma: (f64, f64)) -> Result<()> {
        if sigma.0 <= 0.0 || sigma.1 <= 0.0 {
            return Err(Error::invalid("prior widths must be positive"));
        }
        let m = store.get_mut(self.means).data_mut();
        m[2 * r] = mean.0;
        m[2 * r + 1] = mean.1;
        let w = store.get_mut(self.widths).data_mut();
        w[2 * r] = inverse_softplus(sigma.0);
        w[2 * r + 1] = inverse_softplus(sigma.1);
        Ok(())
    }
}

/// Normalized pixel-center coordinates of an `h × w` grid, row-major.
pub fn grid(h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(h * w);
    let mut ys = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            xs.push((x as f64 + 0.5) / w as f64);
            ys.push((y as f64 + 0.5) / h as f64);
        }
    }
    (xs, ys)
}

/// Evaluates every prior density on the normalized grid: `[R, h, w]`.
pub fn prior_maps(tape: &mut Tape, params: &Bindings, priors: &PriorParams, h: usize, w: usize) -> Result<Var> {
    if h == 0 || w == 0 {
        return Err(Error::shape("prior grid needs positive extents"));
    }
    let (xs, ys) = grid(h, w);
    let gx = tape.constant(&Tensor::from_vec(xs));
    let gy = tape.constant(&Tensor::from_vec(ys));
    let means = params.get(priors.means);
    let sigmas = tape.softplus(params.get(priors.widths));
    let mut maps = Vec::with_capacity(priors.count);
    for r in 0..priors.count {
        let mut quad = Vec::with_capacity(2);
        for (axis, g) in [gx, gy].into_iter().enumerate() {
            let mu = tape.gather(means, &[2 * r + axis])?;
            let sigma = tape.gather(sigmas, &[2 * r + axis])?;
            let d = tape.sub(g, mu)?;
            let d = tape.div(d, sigma)?;
            quad.push((tape.square(d), sigma));
        }
        let q = tape.add(quad[0].0, quad[1].0)?;
        let q = tape.mul_scalar(q, -0.5);
        let e = tape.exp(q);
        let area = tape.mul(quad[0].1, quad[1].1)?;
        let area = tape.mul_scalar(area, 2.0 * PI);
        maps.push(tape.div(e, area)?);
    }
    let flat = tape.concat(&maps, 0)?;
    tape.reshape(flat, &[priors.count, h, w])
}

/// Two 3×3 convolutions `in → 16 → 1`, bilinear upsampling, sigmoid.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub conv1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub in_channels: usize,
}

impl HeadParams {
    pub fn init(store: &mut ParamStore, rng: &mut SeededRng, in_channels: usize) -> Self {
        let w1 = store.add(
            "head.conv1.weight",
            rng::he_uniform(rng, &[HEAD_HIDDEN, in_channels, 3, 3], in_channels * 9),
        );
        let b1 = store.add("head.conv1.bias", Tensor::zeros(&[HEAD_HIDDEN]));
        let w2 = store.add(
            "head.conv2.weight",
            rng::he_uniform(rng, &[1, HEAD_HIDDEN, 3, 3], HEAD_HIDDEN * 9),
        );
        let b2 = store.add("head.conv2.bias", Tensor::zeros(&[1]));
        Self {
            conv1: (w1, b1),
            conv2: (w2, b2),
            in_channels,
        }
    }
}

/// Saliency map `[1, out_h, out_w]` in (0, 1) from the region-knowledge map,
/// the baseline map and optional prior maps, all at feature resolution.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    tape: &mut Tape,
    params: &Bindings,
    head: &HeadParams,
    knowledge_map: Var,
    baseline_map: Var,
    priors: Option<Var>,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    let spatial = |tape: &Tape, v: Var| tape.shape(v).get(1..).map(<[usize]>::to_vec);
    let want = spatial(tape, knowledge_map);
    let mut parts = vec![knowledge_map, baseline_map];
    parts.extend(priors);
    for &p in &parts {
        if tape.shape(p).len() != 3 || spatial(tape, p) != want {
            return Err(Error::shape(format!(
                "head inputs disagree spatially: {:?} vs {:?}",
                tape.shape(p),
                tape.shape(knowledge_map)
            )));
        }
    }
    let x = tape.concat(&parts, 0)?;
    if tape.shape(x)[0] != head.in_channels {
        return Err(Error::shape(format!(
            "head expects {} channels, got {}",
            head.in_channels,
            tape.shape(x)[0]
        )));
    }
    let x = tape.conv2d(x, params.get(head.conv1.0), Some(params.get(head.conv1.1)))?;
    let x = tape.leaky_relu(x, SLOPE);
    let x = tape.conv2d(x, params.get(head.conv2.0), Some(params.get(head.conv2.1)))?;
    let x = tape.bilinear_resize(x, out_h, out_w)?;
    Ok(tape.sigmoid(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 0.3,
            gamma: 0.15,
            lambda: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.beta, self.gamma, self.lambda]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::invalid(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Mean absolute difference to the target density.
pub fn l1_term(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    if tape.numel(pred) != target.len() {
        return Err(Error::shape("prediction and target sizes differ"));
    }
    let t = tape.constant(target);
    let pred = tape.reshape(pred, target.shape())?;
    let d = tape.sub(pred, t)?;
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

/// Prediction centered and scaled to unit population std, or `None` when it
/// is constant.
fn standardized(tape: &mut Tape, pred: Var) -> Result<Option<Var>> {
    if is_constant(tape.value(pred)) {
        return Ok(None);
    }
    let n = tape.numel(pred);
    let flat = tape.reshape(pred, &[n])?;
    let mu = tape.mean(flat);
    let c = tape.sub(flat, mu)?;
    let sq = tape.square(c);
    let var = tape.mean(sq);
    let sd = tape.sqrt(var);
    Ok(Some(tape.div(c, sd)?))
}

/// Pearson correlation with the target; a constant side contributes 0.
pub fn cc_term(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    if tape.numel(pred) != target.len() {
        return Err(Error::shape("prediction and target sizes differ"));
    }
    let target_z = crate::metrics::standardize(target.data());
    let (Some(z), Some(tz)) = (standardized(tape, pred)?, target_z) else {
        return Ok(tape.scalar(0.0));
    };
    let tz = tape.constant(&Tensor::from_vec(tz));
    let prod = tape.mul(z, tz)?;
    Ok(tape.mean(prod))
}

/// Mean standardized prediction at the fixated pixels.
pub fn nss_term(tape: &mut Tape, pred: Var, fixations: &FixationSet) -> Result<Var> {
    if tape.numel(pred) != fixations.width * fixations.height {
        return Err(Error::shape("prediction does not match fixation extents"));
    }
    if fixations.is_empty() {
        return Err(Error::invalid("no fixations"));
    }
    let Some(z) = standardized(tape, pred)? else {
        return Ok(tape.scalar(0.0));
    };
    let picked = tape.gather(z, &fixations.flat_indices())?;
    Ok(tape.mean(picked))
}

/// `L1 − β·CC − γ·NSS`.
pub fn loss_sal(
    tape: &mut Tape,
    pred: Var,
    target: &Tensor,
    fixations: &FixationSet,
    weights: &LossWeights,
) -> Result<Var> {
    let l1 = l1_term(tape, pred, target)?;
    let cc = cc_term(tape, pred, target)?;
    let nss = nss_term(tape, pred, fixations)?;
    let cc = tape.mul_scalar(cc, -weights.beta);
    let nss = tape.mul_scalar(nss, -weights.gamma);
    let l = tape.add(l1, cc)?;
    tape.add(l, nss)
}

/// `L_sal + λ·Σ L_prox`.
pub fn loss_total(tape: &mut Tape, sal: Var, prox: &[Var], lambda: f64) -> Result<Var> {
    let mut total = sal;
    for &p in prox {
        let scaled = tape.mul_scalar(p, lambda);
        total = tape.add(total, scaled)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn one_prior(mean: (f64, f64), sigma: (f64, f64)) -> (ParamStore, PriorParams) {
        let mut store = ParamStore::new();
        let p = PriorParams::init(&mut store, &mut rng::seeded(0), 1);
        p.set(&mut store, 0, mean, sigma).unwrap();
        (store, p)
    }

    fn eval(store: &ParamStore, p: &PriorParams, h: usize, w: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let m = prior_maps(&mut tape, &b, p, h, w).unwrap();
        tape.value(m).to_vec()
    }

    #[test]
    fn prior_peak_and_mass() {
        // (8.5/16, 4.5/8) is the center of pixel (8, 4)
        let (sx, sy) = (0.13, 0.07);
        let (store, p) = one_prior((8.5 / 16.0, 4.5 / 8.0), (sx, sy));
        let v = eval(&store, &p, 8, 16);
        let peak = v[4 * 16 + 8];
        assert!((peak - 1.0 / (2.0 * PI * sx * sy)).abs() < 1e-9);
        assert!(v.iter().all(|&x| x > 0.0 && x <= peak));

        let (store, p) = one_prior((0.5, 0.5), (0.1, 0.1));
        let v = eval(&store, &p, 64, 64);
        let mass: f64 = v.iter().sum::<f64>() / (64.0 * 64.0);
        assert!((mass - 1.0).abs() < 0.05, "{mass}");
        for y in 0..64 {
            for x in 0..64 {
                let a = v[y * 64 + x];
                assert!((a - v[y * 64 + 63 - x]).abs() < 1e-12);
                assert!((a - v[(63 - y) * 64 + x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prior_peak_is_nearest_grid_point() {
        let (store, p) = one_prior((0.61, 0.27), (0.2, 0.2));
        let v = eval(&store, &p, 10, 10);
        let arg = (0..100).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        assert_eq!((arg % 10, arg / 10), (6, 2));
    }

    #[test]
    fn prior_init_ranges() {
        let mut store = ParamStore::new();
        let p = PriorParams::init(&mut store, &mut rng::seeded(1), DEFAULT_PRIORS);
        assert_eq!(store.num_scalars(), 4 * DEFAULT_PRIORS);
        assert!(store.get(p.means).data().iter().all(|m| (0.35..0.65).contains(m)));
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let s = tape.softplus(b.get(p.widths));
        assert!(tape.value(s).iter().all(|v| (v - PRIOR_SIGMA_INIT).abs() < 1e-12));
    }

    #[test]
    fn prior_gradients() {
        let (store, p) = one_prior((0.4, 0.55), (0.15, 0.3));
        let inputs: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
        let report = gradcheck::check(&inputs, |tape, v| {
            let b = Bindings::from_vars(v.to_vec());
            let m = prior_maps(tape, &b, &p, 5, 6)?;
            Ok(tape.sum(m))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    fn head_setup(with_priors: bool) -> (ParamStore, HeadParams, Option<PriorParams>) {
        let mut store = ParamStore::new();
        let mut r = rng::seeded(3);
        let priors = with_priors.then(|| PriorParams::init(&mut store, &mut r, 4));
        let head = HeadParams::init(&mut store, &mut r, 4 + 3 + if with_priors { 4 } else { 0 });
        (store, head, priors)
    }

    #[test]
    fn head_shapes_range_and_gradients() {
        for with_priors in [false, true] {
            let (store, head, priors) = head_setup(with_priors);
            let mut tape = Tape::new();
            let b = store.bind(&mut tape);
            let mut r = rng::seeded(4);
            let me = tape.constant(&rng::uniform(&mut r, &[4, 8, 8], -1.0, 1.0));
            let mb = tape.constant(&rng::uniform(&mut r, &[3, 8, 8], -1.0, 1.0));
            let pm = priors.as_ref().map(|p| prior_maps(&mut tape, &b, p, 8, 8).unwrap());
            let y = predict(&mut tape, &b, &head, me, mb, pm, 64, 64).unwrap();
            assert_eq!(tape.shape(y), &[1, 64, 64]);
            assert!(tape.value(y).iter().all(|&v| v > 0.0 && v < 1.0));
            let s = tape.sum(y);
            tape.backward(s).unwrap();
            for &v in b.vars() {
                assert!(tape.grad(v).unwrap().iter().any(|g| *g != 0.0));
            }
            let wrong = tape.constant(&Tensor::zeros(&[3, 4, 4]));
            assert!(predict(&mut tape, &b, &head, me, wrong, pm, 64, 64).is_err());
            let pm2 = if with_priors { None } else { Some(mb) };
            assert!(predict(&mut tape, &b, &head, me, mb, pm2, 64, 64).is_err());
        }
    }

    fn density(seed: u64, n: usize) -> Tensor {
        let mut t = rng::uniform(&mut rng::seeded(seed), &[n], 0.0, 1.0);
        let s = t.sum();
        t.data_mut().iter_mut().for_each(|v| *v /= s);
        t
    }

    #[test]
    fn loss_terms_hand_cases() {
        let y = density(5, 16);
        let fix = FixationSet::new(4, 4, vec![(1, 2), (3, 0)]).unwrap();
        let w = LossWeights::default();
        let mut tape = Tape::new();
        let p = tape.constant(&y);
        let l = loss_sal(&mut tape, p, &y, &fix, &w).unwrap();
        let nss = crate::metrics::nss(y.data(), &fix).unwrap();
        assert!((tape.item(l) - (-w.beta - w.gamma * nss)).abs() < 1e-12);

        let flat = tape.variable(&Tensor::full(&[16], 0.25));
        let l = loss_sal(&mut tape, flat, &y, &fix, &w).unwrap();
        let l1: f64 = y.data().iter().map(|v| (0.25 - v).abs()).sum::<f64>() / 16.0;
        assert!((tape.item(l) - l1).abs() < 1e-15);

        let a = tape.scalar(0.5);
        let b = tape.scalar(0.25);
        let t = loss_total(&mut tape, a, &[b], 0.8).unwrap();
        assert!((tape.item(t) - 0.7).abs() < 1e-15);
        let t = loss_total(&mut tape, a, &[b], 0.0).unwrap();
        assert_eq!(tape.item(t), 0.5);
        assert_eq!(
            w,
            LossWeights {
                beta: 0.3,
                gamma: 0.15,
                lambda: 0.8
            }
        );
        assert!(LossWeights { beta: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn cc_term_affine_invariant() {
        let y = density(6, 64);
        let a = rng::uniform(&mut rng::seeded(7), &[64], 0.0, 1.0);
        let mut tape = Tape::new();
        let va = tape.constant(&a);
        let scaled = tape.mul_scalar(va, 2.0);
        let vb = tape.add_scalar(scaled, 1.0);
        let ca = cc_term(&mut tape, va, &y).unwrap();
        let cb = cc_term(&mut tape, vb, &y).unwrap();
        assert!((tape.item(ca) - tape.item(cb)).abs() < 1e-10);
        let self_cc = cc_term(&mut tape, va, &a).unwrap();
        assert!((tape.item(self_cc) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_each_term_and_combined() {
        let mut r = rng::seeded(8);
        let fix = FixationSet::new(8, 8, vec![(0, 0), (3, 4), (7, 7), (3, 4), (5, 1)]).unwrap();
        for case in 0..5 {
            let y = density(10 + case, 64);
            let pred = rng::uniform(&mut r, &[1, 8, 8], 0.05, 0.95);
            let w = LossWeights::default();
            let yy = y.clone();
            let f = fix.clone();
            for (name, report) in [
                (
                    "l1",
                    gradcheck::check(std::slice::from_ref(&pred), |t, v| l1_term(t, v[0], &yy)),
                ),
                (
                    "cc",
                    gradcheck::check(std::slice::from_ref(&pred), |t, v| cc_term(t, v[0], &yy)),
                ),
                (
                    "nss",
                    gradcheck::check(std::slice::from_ref(&pred), |t, v| nss_term(t, v[0], &f)),
                ),
                (
                    "sal",
                    gradcheck::check(std::slice::from_ref(&pred), |t, v| loss_sal(t, v[0], &yy, &f, &w)),
                ),
            ] {
                let report = report.unwrap();
                assert!(report.passed(), "{name}: {report:?}");
            }
        }
    }

    #[test]
    fn constant_prediction_has_no_correlation_gradient() {
        let y = density(9, 16);
        let fix = FixationSet::new(4, 4, vec![(0, 0)]).unwrap();
        let mut tape = Tape::new();
        let p = tape.variable(&Tensor::full(&[16], 0.3));
        let c = cc_term(&mut tape, p, &y).unwrap();
        let n = nss_term(&mut tape, p, &fix).unwrap();
        let s = tape.add(c, n).unwrap();
        assert_eq!(tape.item(s), 0.0);
        assert!(!tape.requires_grad(s));
    }
}
