//! Saliency evaluation metrics over row-major maps.

use std::collections::BTreeSet;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng;

pub const KL_EPS: f64 = 2.2204e-16;
pub const SAUC_RESAMPLES: usize = 10;

/// Fixated pixels `(x, y)` of one image; duplicates are kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixationSet {
    pub width: usize,
    pub height: usize,
    pub points: Vec<(usize, usize)>,
}

impl FixationSet {
    pub fn new(width: usize, height: usize, points: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(p) = points.iter().find(|(x, y)| *x >= width || *y >= height) {
            return Err(Error::invalid(format!("fixation {p:?} outside {width}x{height}")));
        }
        Ok(Self { width, height, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn flat_indices(&self) -> Vec<usize> {
        self.points.iter().map(|&(x, y)| y * self.width + x).collect()
    }

    /// Parses `x,y` lines.
    pub fn parse(text: &str, width: usize, height: usize) -> Result<Self> {
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::format("fixation file", format!("line {}: `{line}`", n + 1));
            let (x, y) = line.split_once(',').ok_or_else(bad)?;
            let x = x.trim().parse().map_err(|_| bad())?;
            let y = y.trim().parse().map_err(|_| bad())?;
            points.push((x, y));
        }
        Self::new(width, height, points).map_err(|e| Error::format("fixation file", e.to_string()))
    }

    pub fn to_text(&self) -> String {
        self.points.iter().map(|(x, y)| format!("{x},{y}\n")).collect()
    }

    fn check_map(&self, map: &[f64]) -> Result<()> {
        if map.len() != self.width * self.height {
            return Err(Error::shape(format!(
                "map of {} values for {}x{} fixations",
                map.len(),
                self.width,
                self.height
            )));
        }
        if self.is_empty() {
            return Err(Error::invalid("no fixations"));
        }
        Ok(())
    }
}

/// One row of the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub cc: f64,
    pub auc: f64,
    pub nss: f64,
    pub sauc: f64,
    pub kl: f64,
    pub sim: f64,
}

impl MetricReport {
    pub const HEADER: &'static str = "CC,AUC,NSS,sAUC,KL,SIM";

    pub fn to_csv_fields(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.cc, self.auc, self.nss, self.sauc, self.kl, self.sim
        )
    }

    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        let n = reports.len().max(1) as f64;
        let mut m = MetricReport::default();
        for r in reports {
            m.cc += r.cc / n;
            m.auc += r.auc / n;
            m.nss += r.nss / n;
            m.sauc += r.sauc / n;
            m.kl += r.kl / n;
            m.sim += r.sim / n;
        }
        m
    }
}

fn is_constant(map: &[f64]) -> bool {
    map.iter().all(|&v| v == map[0])
}

fn mean_std(map: &[f64]) -> (f64, f64) {
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    let var = map.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero mean, unit population std; `None` for a constant map.
pub fn standardize(map: &[f64]) -> Option<Vec<f64>> {
    if map.is_empty() || is_constant(map) {
        return None;
    }
    let (mean, std) = mean_std(map);
    Some(map.iter().map(|v| (v - mean) / std).collect())
}

pub fn nss(map: &[f64], fix: &FixationSet) -> Result<f64> {
    fix.check_map(map)?;
    let Some(z) = standardize(map) else {
        return Ok(0.0);
    };
    let idx = fix.flat_indices();
    Ok(idx.iter().map(|&i| z[i]).sum::<f64>() / idx.len() as f64)
}

/// Probability that a positive outranks a negative, ties counted half.
pub fn mann_whitney(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut neg = negatives.to_vec();
    neg.sort_by(f64::total_cmp);
    let doubled: u64 = positives
        .iter()
        .map(|&p| {
            let below = neg.partition_point(|&n| n < p) as u64;
            let not_above = neg.partition_point(|&n| n <= p) as u64;
            below + not_above
        })
        .sum();
    doubled as f64 / (2 * positives.len() * negatives.len()) as f64
}

pub fn auc_judd(map: &[f64], fix: &FixationSet) -> Result<f64> {
    fix.check_map(map)?;
    let fixated: BTreeSet<usize> = fix.flat_indices().into_iter().collect();
    if fixated.len() == map.len() {
        return Err(Error::invalid("every pixel is fixated; no negatives"));
    }
    let pos: Vec<f64> = fix.flat_indices().iter().map(|&i| map[i]).collect();
    let neg: Vec<f64> = (0..map.len())
        .filter(|i| !fixated.contains(i))
        .map(|i| map[i])
        .collect();
    Ok(mann_whitney(&pos, &neg))
}

/// AUC with negatives drawn from other images' fixations, averaged over
/// seeded resamples. Each resample takes `|fix|` distinct pool locations (the
/// whole pool when it is smaller).
pub fn sauc(map: &[f64], fix: &FixationSet, others: &[FixationSet], seed: u64) -> Result<f64> {
    fix.check_map(map)?;
    let own: BTreeSet<usize> = fix.flat_indices().into_iter().collect();
    let mut pool = BTreeSet::new();
    for o in others {
        if (o.width, o.height) != (fix.width, fix.height) {
            return Err(Error::shape("other fixation sets differ in extent"));
        }
        pool.extend(o.flat_indices().into_iter().filter(|i| !own.contains(i)));
    }
    if pool.is_empty() {
        return Err(Error::invalid("shuffled negative pool is empty"));
    }
    let pool: Vec<usize> = pool.into_iter().collect();
    let pos: Vec<f64> = fix.flat_indices().iter().map(|&i| map[i]).collect();
    let take = fix.len().min(pool.len());
    let mut rng = rng::seeded(seed);
    let mut total = 0.0;
    for _ in 0..SAUC_RESAMPLES {
        let neg: Vec<f64> = index::sample(&mut rng, pool.len(), take)
            .into_iter()
            .map(|k| map[pool[k]])
            .collect();
        total += mann_whitney(&pos, &neg);
    }
    Ok(total / SAUC_RESAMPLES as f64)
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("maps of {} and {} values", a.len(), b.len())));
    }
    Ok(())
}

/// Pearson correlation; 0 when either map is constant.
pub fn cc(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    match (standardize(a), standardize(b)) {
        (Some(za), Some(zb)) => Ok(za.iter().zip(&zb).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64),
        _ => Ok(0.0),
    }
}

fn to_distribution(map: &[f64]) -> Result<Vec<f64>> {
    if map.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("map has negative or non-finite values"));
    }
    let total: f64 = map.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("map sums to zero"));
    }
    Ok(map.iter().map(|v| v / total).collect())
}

pub fn sim(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let (p, q) = (to_distribution(a)?, to_distribution(b)?);
    Ok(p.iter().zip(&q).map(|(x, y)| x.min(*y)).sum())
}

/// `KL(gt ‖ pred)` with the benchmark regularizer.
pub fn kl(pred: &[f64], gt: &[f64]) -> Result<f64> {
    same_len(pred, gt)?;
    let (p, g) = (to_distribution(pred)?, to_distribution(gt)?);
    Ok(g.iter()
        .zip(&p)
        .map(|(g, p)| g * (g / (p + KL_EPS) + KL_EPS).ln())
        .sum())
}

/// All six metrics for one prediction.
pub fn evaluate(
    pred: &[f64],
    density: &[f64],
    fix: &FixationSet,
    others: &[FixationSet],
    seed: u64,
) -> Result<MetricReport> {
    Ok(MetricReport {
        cc: cc(pred, density)?,
        auc: auc_judd(pred, fix)?,
        nss: nss(pred, fix)?,
        sauc: sauc(pred, fix, others, seed)?,
        kl: kl(pred, density)?,
        sim: sim(pred, density)?,
    })
}
