//! Synthetic scenes whose saliency follows category relatedness: one marked
//! seed object is fully salient and every other object inherits its graph
//! proximity to the seed's category.

use grassnet_core::knowledge::ProximityGraph;
use grassnet_core::metrics::FixationSet;
use grassnet_core::proposals::BBox;
use grassnet_core::rng::{self, SeededRng};
use grassnet_core::{par, Error, Result, Tensor};
use rand::seq::index;
use rand::Rng;

use crate::defaults::{self, Appearance, Pattern};

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub categories: Vec<String>,
    pub appearances: Vec<Appearance>,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_side: usize,
    pub max_side: usize,
    pub gap: usize,
    pub fixations: usize,
    pub blur_sigma: f64,
    pub noise: f64,
    pub graph: ProximityGraph,
    pub seed: u64,
}

impl SceneSpec {
    /// 64×64 scenes over the built-in categories.
    pub fn default_with_seed(seed: u64) -> Result<Self> {
        let categories = defaults::categories();
        Ok(Self {
            width: 64,
            height: 64,
            appearances: (0..categories.len()).map(defaults::appearance).collect(),
            categories,
            min_objects: 3,
            max_objects: 8,
            min_side: 10,
            max_side: 16,
            gap: 2,
            fixations: 20,
            blur_sigma: 1.0,
            noise: 0.08,
            graph: defaults::ground_truth_graph()?,
            seed,
        })
    }

    fn cell(&self) -> usize {
        self.max_side + self.gap
    }

    /// Placement slots of the jittered layout grid.
    pub fn slots(&self) -> usize {
        (self.width / self.cell()) * (self.height / self.cell())
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.expect_labels(&self.categories)?;
        if self.appearances.len() != self.categories.len() {
            return Err(Error::invalid("one appearance per category is required"));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::invalid(format!(
                "object range {}..={} is empty",
                self.min_objects, self.max_objects
            )));
        }
        if self.max_objects > self.categories.len() {
            return Err(Error::invalid("more objects than categories per scene"));
        }
        if self.min_side < 3 || self.min_side > self.max_side {
            return Err(Error::invalid("object sides must satisfy 3 <= min <= max"));
        }
        if self.max_objects > self.slots() {
            return Err(Error::invalid(format!(
                "cannot place {} objects of side {} in {}x{}",
                self.max_objects, self.max_side, self.width, self.height
            )));
        }
        if self.fixations == 0
            || self.blur_sigma.is_nan()
            || self.blur_sigma <= 0.0
            || !(0.0..0.5).contains(&self.noise)
        {
            return Err(Error::invalid("fixations, blur and noise out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencySample {
    pub image: Tensor,
    pub boxes: Vec<BBox>,
    pub labels: Vec<String>,
    pub seed_object: usize,
    pub fixations: FixationSet,
    pub density: Tensor,
}

fn pattern_gain(p: Pattern, x: usize, y: usize) -> f64 {
    let on = match p {
        Pattern::Solid => true,
        Pattern::Rows => (y / 2).is_multiple_of(2),
        Pattern::Columns => (x / 2).is_multiple_of(2),
        Pattern::Checker => (x / 2 + y / 2).is_multiple_of(2),
    };
    if on {
        1.0
    } else {
        0.55
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with zero padding.
pub fn blur(map: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let d = t as isize - r;
                    let (sx, sy) = if horizontal {
                        (x as isize + d, y as isize)
                    } else {
                        (x as isize, y as isize + d)
                    };
                    if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                        acc += kv * src[sy as usize * w + sx as usize];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    pass(&pass(map, true), false)
}

const BACKGROUND_FLOOR: f64 = 1e-6;

fn layout(spec: &SceneSpec, rng: &mut SeededRng, count: usize) -> Vec<BBox> {
    let cell = spec.cell();
    let (cols, rows) = (spec.width / cell, spec.height / cell);
    let ox = rng.random_range(0..=spec.width - cols * cell);
    let oy = rng.random_range(0..=spec.height - rows * cell);
    index::sample(rng, cols * rows, count)
        .into_iter()
        .map(|slot| {
            let (cx, cy) = (ox + (slot % cols) * cell, oy + (slot / cols) * cell);
            let bw = rng.random_range(spec.min_side..=spec.max_side);
            let bh = rng.random_range(spec.min_side..=spec.max_side);
            let x0 = cx + rng.random_range(0..=spec.max_side - bw);
            let y0 = cy + rng.random_range(0..=spec.max_side - bh);
            BBox::new(x0, y0, x0 + bw, y0 + bh)
        })
        .collect()
}

fn sample_fixations(density: &[f64], w: usize, h: usize, n: usize, rng: &mut SeededRng) -> Result<FixationSet> {
    let mut cdf = Vec::with_capacity(density.len());
    let mut acc = 0.0;
    for &d in density {
        acc += d;
        cdf.push(acc);
    }
    let points = (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c <= u).min(density.len() - 1);
            (i % w, i / w)
        })
        .collect();
    FixationSet::new(w, h, points)
}

/// One scene; `index` selects an independent seed stream.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<SaliencySample> {
    let (w, h) = (spec.width, spec.height);
    let mut rng = rng::derive(spec.seed, index);
    let count = rng.random_range(spec.min_objects..=spec.max_objects);
    let boxes = layout(spec, &mut rng, count);
    let classes: Vec<usize> = index::sample(&mut rng, spec.categories.len(), count).into_vec();
    let seed_object = rng.random_range(0..count);

    let mut image = vec![0.0; 3 * w * h];
    for v in image.iter_mut() {
        *v = 0.5 + rng.random_range(-spec.noise..=spec.noise);
    }
    for (b, &cls) in boxes.iter().zip(&classes) {
        let app = spec.appearances[cls];
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                let g = pattern_gain(app.pattern, x - b.x0, y - b.y0);
                for (ch, col) in app.color.iter().enumerate() {
                    let v = col * g + rng.random_range(-spec.noise..=spec.noise);
                    image[ch * w * h + y * w + x] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    let seed_box = boxes[seed_object];
    for y in seed_box.y0..seed_box.y1 {
        for x in seed_box.x0..seed_box.x1 {
            if y == seed_box.y0 || y + 1 == seed_box.y1 || x == seed_box.x0 || x + 1 == seed_box.x1 {
                for ch in 0..3 {
                    image[ch * w * h + y * w + x] = 1.0;
                }
            }
        }
    }

    let seed_class = classes[seed_object];
    let mut mass = vec![0.0; w * h];
    for (k, (b, &cls)) in boxes.iter().zip(&classes).enumerate() {
        let weight = if k == seed_object {
            1.0
        } else {
            spec.graph.weight(seed_class, cls)
        };
        for y in b.y0..b.y1 {
            mass[y * w + b.x0..y * w + b.x1].iter_mut().for_each(|m| *m = weight);
        }
    }
    let mut density = blur(&mass, w, h, spec.blur_sigma);
    density.iter_mut().for_each(|d| *d += BACKGROUND_FLOOR);
    let total: f64 = density.iter().sum();
    density.iter_mut().for_each(|d| *d /= total);
    let fixations = sample_fixations(&density, w, h, spec.fixations, &mut rng)?;

    // f32-exact so a dataset reloaded from disk is bit-identical
    image.iter_mut().for_each(|v| *v = *v as f32 as f64);
    Ok(SaliencySample {
        image: Tensor::new(&[3, h, w], image)?,
        boxes,
        labels: classes.iter().map(|&c| spec.categories[c].clone()).collect(),
        seed_object,
        fixations,
        density: Tensor::new(&[1, h, w], density)?,
    })
}

pub fn generate_dataset(spec: &SceneSpec, n: usize) -> Result<Vec<SaliencySample>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    spec.validate()?;
    let ids: Vec<u64> = (0..n as u64).collect();
    par::map(&ids, |&i| generate_scene(spec, i)).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_interior_mass() {
        let mut m = vec![0.0; 15 * 15];
        m[7 * 15 + 7] = 1.0;
        let b = blur(&m, 15, 15, 1.0);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b[7 * 15 + 7] > b[7 * 15 + 8]);
        assert!((b[7 * 15 + 8] - b[8 * 15 + 7]).abs() < 1e-15);
    }

    #[test]
    fn scene_contract() {
        let spec = SceneSpec::default_with_seed(3).unwrap();
        let data = generate_dataset(&spec, 20).unwrap();
        for s in &data {
            assert!((s.density.sum() - 1.0).abs() < 1e-9);
            assert!((3..=8).contains(&s.boxes.len()));
            assert_eq!(s.labels.len(), s.boxes.len());
            assert_eq!(s.fixations.len(), 20);
            for (i, a) in s.boxes.iter().enumerate() {
                a.validate(64, 64).unwrap();
                for b in &s.boxes[i + 1..] {
                    assert!(!a.intersects(b));
                }
            }
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(data, generate_dataset(&spec, 20).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let ok = SceneSpec::default_with_seed(0).unwrap();
        let crowded = SceneSpec {
            width: 36,
            height: 36,
            ..ok.clone()
        };
        assert!(generate_dataset(&crowded, 1).is_err());
        let too_many = SceneSpec {
            min_objects: 9,
            max_objects: 9,
            ..ok.clone()
        };
        assert!(too_many.validate().is_err());
        assert!(generate_dataset(&ok, 0).is_err());
    }
}
