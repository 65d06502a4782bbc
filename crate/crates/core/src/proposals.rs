//! Stand-in for the detector/backbone stage: a small trainable encoder,
//! ROI max-pooling of region blocks, and max-merged projection of updated
//! blocks back into a feature map.

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::tensor::{Bindings, ParamId, ParamStore, Tape, Tensor, Var};

pub const ENCODER_SLOPE: f64 = 0.01;
pub const MIN_IMAGE_SIDE: usize = 32;

/// Pixel box, half-open: covers columns `x0..x1` and rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::invalid(format!("degenerate box {self:?}")));
        }
        if self.x1 > width || self.y1 > height {
            return Err(Error::invalid(format!("box {self:?} exceeds {width}x{height} image")));
        }
        Ok(())
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    /// Feature-space window `(y0, y1, x0, x1)` for a map downsampled by
    /// `stride`: outward rounding, clamped, never empty.
    pub fn feature_window(&self, stride: usize, fh: usize, fw: usize) -> (usize, usize, usize, usize) {
        let snap = |lo: usize, hi: usize, len: usize| {
            let a = (lo / stride).min(len - 1);
            let b = hi.div_ceil(stride).clamp(a + 1, len);
            (a, b)
        };
        let (y0, y1) = snap(self.y0, self.y1, fh);
        let (x0, x1) = snap(self.x0, self.x1, fw);
        (y0, y1, x0, x1)
    }
}

/// Parses `x0,y0,x1,y1[,label]` lines.
pub fn parse_boxes(text: &str) -> Result<Vec<(BBox, Option<String>)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 && parts.len() != 5 {
            return Err(Error::format(
                "box file",
                format!("line {}: expected 4 or 5 fields", n + 1),
            ));
        }
        let mut c = [0usize; 4];
        for (slot, p) in c.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|e| Error::format("box file", format!("line {}: {e}", n + 1)))?;
        }
        let label = parts.get(4).map(|s| s.to_string());
        out.push((BBox::new(c[0], c[1], c[2], c[3]), label));
    }
    Ok(out)
}

pub fn format_boxes(boxes: &[BBox], labels: Option<&[String]>) -> String {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| match labels {
            Some(l) => format!("{},{},{},{},{}\n", b.x0, b.y0, b.x1, b.y1, l[i]),
            None => format!("{},{},{},{}\n", b.x0, b.y0, b.x1, b.y1),
        })
        .collect()
}

/// Encoded image: a `[C, ceil(H/s), ceil(W/s)]` tape value.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMap {
    pub map: Var,
    pub stride: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Regions of one image: boxes, pooled `[C, d1, d2]` feature blocks and,
/// at train time, category labels.
#[derive(Debug, Clone)]
pub struct RegionSet {
    pub boxes: Vec<BBox>,
    pub features: Vec<Var>,
    pub labels: Option<Vec<String>>,
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Three `{3×3 conv, leaky-relu, 2×2 average}` stages: 3 → 16 → 32 → C.
#[derive(Debug, Clone)]
pub struct Backbone {
    stages: Vec<(ParamId, ParamId)>,
    pub channels: usize,
}

impl Backbone {
    pub const STRIDE: usize = 8;

    pub fn init(store: &mut ParamStore, rng: &mut SeededRng, channels: usize) -> Self {
        let widths = [3, 16, 32, channels];
        let stages = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (cin, cout) = (w[0], w[1]);
                let k = rng::he_uniform(rng, &[cout, cin, 3, 3], cin * 9);
                let wid = store.add(format!("backbone.conv{i}.weight"), k);
                let bid = store.add(format!("backbone.conv{i}.bias"), Tensor::zeros(&[cout]));
                (wid, bid)
            })
            .collect();
        Self { stages, channels }
    }

    pub fn encode(&self, tape: &mut Tape, params: &Bindings, image: Var) -> Result<FeatureMap> {
        let (h, w) = match *tape.shape(image) {
            [3, h, w] => (h, w),
            ref s => return Err(Error::shape(format!("image must be [3,H,W], got {s:?}"))),
        };
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(Error::invalid(format!(
                "image {h}x{w} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        let mut x = image;
        for &(wid, bid) in &self.stages {
            x = tape.conv2d(x, params.get(wid), Some(params.get(bid)))?;
            x = tape.leaky_relu(x, ENCODER_SLOPE);
            x = tape.avg_pool2(x)?;
        }
        let shape = tape.shape(x).to_vec();
        Ok(FeatureMap {
            map: x,
            stride: Self::STRIDE,
            channels: shape[0],
            height: shape[1],
            width: shape[2],
        })
    }
}

/// Crops each box's feature-space window and max-pools it to `d1 × d2`.
pub fn extract_roi_features(
    tape: &mut Tape,
    fm: &FeatureMap,
    boxes: &[BBox],
    labels: Option<Vec<String>>,
    pool: (usize, usize),
) -> Result<RegionSet> {
    if let Some(l) = &labels {
        if l.len() != boxes.len() {
            return Err(Error::invalid(format!("{} labels for {} boxes", l.len(), boxes.len())));
        }
    }
    let (img_h, img_w) = (fm.height * fm.stride, fm.width * fm.stride);
    let mut features = Vec::with_capacity(boxes.len());
    for b in boxes {
        b.validate(img_h, img_w)?;
        let (y0, y1, x0, x1) = b.feature_window(fm.stride, fm.height, fm.width);
        let crop = tape.crop(fm.map, y0, y1, x0, x1)?;
        features.push(tape.adaptive_max_pool(crop, pool.0, pool.1)?);
    }
    Ok(RegionSet {
        boxes: boxes.to_vec(),
        features,
        labels,
    })
}

/// Resizes each block to its box's feature-space window and max-merges them
/// into a fresh map of the given geometry; untouched cells are zero.
pub fn project_back(
    tape: &mut Tape,
    geometry: (usize, usize, usize),
    stride: usize,
    boxes: &[BBox],
    blocks: &[Var],
) -> Result<Var> {
    let (c, fh, fw) = geometry;
    if boxes.len() != blocks.len() {
        return Err(Error::invalid("project_back needs one block per box"));
    }
    let mut placed = Vec::with_capacity(blocks.len());
    let mut origins = Vec::with_capacity(blocks.len());
    for (b, &blk) in boxes.iter().zip(blocks) {
        let bc = tape.shape(blk)[0];
        if bc != c {
            return Err(Error::shape(format!("block has {bc} channels, map expects {c}")));
        }
        let (y0, y1, x0, x1) = b.feature_window(stride, fh, fw);
        placed.push(tape.bilinear_resize(blk, y1 - y0, x1 - x0)?);
        origins.push((y0, x0));
    }
    tape.scatter_max(&placed, &origins, (c, fh, fw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm_from(tape: &mut Tape, t: &Tensor, stride: usize) -> FeatureMap {
        let map = tape.constant(t);
        let s = t.shape();
        FeatureMap {
            map,
            stride,
            channels: s[0],
            height: s[1],
            width: s[2],
        }
    }

    #[test]
    fn backbone_shapes_and_zero_image() {
        let mut store = ParamStore::new();
        let bb = Backbone::init(&mut store, &mut rng::seeded(0), 32);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let img = tape.constant(&Tensor::zeros(&[3, 64, 64]));
        let fm = bb.encode(&mut tape, &p, img).unwrap();
        assert_eq!(tape.shape(fm.map), &[32, 8, 8]);
        assert!(tape.value(fm.map).iter().all(|v| v.is_finite()));

        let small = tape.constant(&Tensor::zeros(&[3, 16, 64]));
        assert!(bb.encode(&mut tape, &p, small).is_err());
    }

    #[test]
    fn backbone_gradients_flow() {
        let mut store = ParamStore::new();
        let bb = Backbone::init(&mut store, &mut rng::seeded(1), 8);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let img = tape.constant(&rng::uniform(&mut rng::seeded(2), &[3, 32, 32], 0.0, 1.0));
        let fm = bb.encode(&mut tape, &p, img).unwrap();
        let loss = tape.sum(fm.map);
        tape.backward(loss).unwrap();
        for &v in p.vars() {
            assert!(tape.grad(v).unwrap().iter().any(|g| *g != 0.0));
        }
    }

    #[test]
    fn feature_window_never_empty() {
        for x0 in 0..40 {
            for w in 1..10 {
                let b = BBox::new(x0, 0, (x0 + w).min(40), 3);
                if b.x0 >= b.x1 {
                    continue;
                }
                let (y0, y1, fx0, fx1) = b.feature_window(8, 5, 5);
                assert!(y0 < y1 && fx0 < fx1 && fx1 <= 5);
            }
        }
    }

    #[test]
    fn roi_full_image_and_left_half() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (1..=16).map(f64::from).collect();
        let map = Tensor::new(&[1, 4, 4], data).unwrap();
        let fm = fm_from(&mut tape, &map, 8);
        let whole = BBox::new(0, 0, 32, 32);
        let left = BBox::new(0, 0, 16, 32);
        let rs = extract_roi_features(&mut tape, &fm, &[whole, left, left], None, (2, 2)).unwrap();
        assert_eq!(tape.value(rs.features[0]), &[6.0, 8.0, 14.0, 16.0]);
        // left half is columns 0..2: [[1,2],[5,6],[9,10],[13,14]] -> rows {0,1},{2,3}
        assert_eq!(tape.value(rs.features[1]), &[5.0, 6.0, 13.0, 14.0]);
        assert_eq!(tape.value(rs.features[1]), tape.value(rs.features[2]));

        let outside = BBox::new(0, 0, 40, 8);
        assert!(extract_roi_features(&mut tape, &fm, &[outside], None, (2, 2)).is_err());
        assert!(extract_roi_features(&mut tape, &fm, &[whole], Some(vec![]), (2, 2)).is_err());
    }

    #[test]
    fn project_back_cases() {
        let mut tape = Tape::new();
        let five = tape.constant(&Tensor::full(&[1, 7, 7], 5.0));
        let b = BBox::new(0, 0, 16, 8);
        let m = project_back(&mut tape, (1, 4, 4), 8, &[b], &[five]).unwrap();
        let v = tape.value(m);
        for y in 0..4 {
            for x in 0..4 {
                let want = if y < 1 && x < 2 { 5.0 } else { 0.0 };
                assert_eq!(v[y * 4 + x], want);
            }
        }

        let two = tape.constant(&Tensor::full(&[1, 7, 7], 2.0));
        let seven = tape.constant(&Tensor::full(&[1, 7, 7], 7.0));
        let a = BBox::new(0, 0, 24, 24);
        let c = BBox::new(8, 8, 32, 32);
        let m = project_back(&mut tape, (1, 4, 4), 8, &[a, c], &[two, seven]).unwrap();
        let v = tape.value(m);
        assert_eq!(v[4 + 1], 7.0);
        assert_eq!(v[2 * 4 + 2], 7.0);
        assert_eq!(v[0], 2.0);
        assert_eq!(v[15], 7.0);

        let empty = project_back(&mut tape, (3, 4, 4), 8, &[], &[]).unwrap();
        assert!(tape.value(empty).iter().all(|&x| x == 0.0));

        assert!(project_back(&mut tape, (2, 4, 4), 8, &[a], &[two]).is_err());
    }

    #[test]
    fn box_file_parsing() {
        let parsed = parse_boxes("1,2,10,12,dog\n# note\n0,0,5,5\n").unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].1.as_deref(), Some("dog"));
        assert_eq!(parsed[1].0, BBox::new(0, 0, 5, 5));
        assert!(parse_boxes("1,2,3\n").is_err());
        assert!(parse_boxes("a,b,c,d\n").is_err());
    }
}
