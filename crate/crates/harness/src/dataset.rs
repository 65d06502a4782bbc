//! On-disk dataset layout:
//!
//! ```text
//! <dir>/dataset.txt           count, extents, categories
//! <dir>/NNNN.image.gtsr       [3, H, W]
//! <dir>/NNNN.density.gtsr     [1, H, W]
//! <dir>/NNNN.boxes.txt        `# seed=<k>` then x0,y0,x1,y1,label
//! <dir>/NNNN.fixations.txt    x,y
//! ```

use std::fs;
use std::path::Path;

use grassnet_core::metrics::FixationSet;
use grassnet_core::proposals::{format_boxes, parse_boxes};
use grassnet_core::tensor::{read_gtsr, write_gtsr};
use grassnet_core::{Error, Result, Tensor};

use crate::synth::SaliencySample;

pub const MANIFEST: &str = "dataset.txt";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub categories: Vec<String>,
    pub samples: Vec<SaliencySample>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "dataset",
        detail: detail.into(),
    }
}

fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::new();
    write_gtsr(&mut bytes, t)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn save(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in data.samples.iter().enumerate() {
        write_tensor(&dir.join(format!("{i:04}.image.gtsr")), &s.image)?;
        write_tensor(&dir.join(format!("{i:04}.density.gtsr")), &s.density)?;
        let boxes = format!("# seed={}\n{}", s.seed_object, format_boxes(&s.boxes, Some(&s.labels)));
        fs::write(dir.join(format!("{i:04}.boxes.txt")), boxes)?;
        fs::write(dir.join(format!("{i:04}.fixations.txt")), s.fixations.to_text())?;
    }
    let manifest = format!(
        "count = {}\nwidth = {}\nheight = {}\ncategories = {}\n",
        data.samples.len(),
        data.width,
        data.height,
        data.categories.join(",")
    );
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn load_sample(dir: &Path, i: usize, w: usize, h: usize, categories: &[String]) -> Result<SaliencySample> {
    let read = |suffix: &str| -> Result<Tensor> { read_gtsr(fs::File::open(dir.join(format!("{i:04}.{suffix}")))?) };
    let image = read("image.gtsr")?;
    if image.shape() != [3, h, w] {
        return Err(bad(format!("sample {i}: image shape {:?}", image.shape())));
    }
    let mut density = read("density.gtsr")?;
    if density.shape() != [1, h, w] {
        return Err(bad(format!("sample {i}: density shape {:?}", density.shape())));
    }
    // stored as f32; restore an exact unit sum
    let total = density.sum();
    if total.is_nan() || total <= 0.0 {
        return Err(bad(format!("sample {i}: density sums to {total}")));
    }
    density.data_mut().iter_mut().for_each(|v| *v /= total);

    let box_text = fs::read_to_string(dir.join(format!("{i:04}.boxes.txt")))?;
    let seed_object = box_text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# seed="))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(format!("sample {i}: missing seed line")))?;
    let mut boxes = Vec::new();
    let mut labels = Vec::new();
    for (b, label) in parse_boxes(&box_text)? {
        b.validate(h, w).map_err(|e| bad(format!("sample {i}: {e}")))?;
        let label = label.ok_or_else(|| bad(format!("sample {i}: unlabeled box")))?;
        if !categories.contains(&label) {
            return Err(Error::UnknownLabel(label));
        }
        boxes.push(b);
        labels.push(label);
    }
    if boxes.is_empty() || seed_object >= boxes.len() {
        return Err(bad(format!("sample {i}: no boxes or bad seed index")));
    }
    let fixations = FixationSet::parse(&fs::read_to_string(dir.join(format!("{i:04}.fixations.txt")))?, w, h)?;
    if fixations.is_empty() {
        return Err(bad(format!("sample {i}: no fixations")));
    }
    Ok(SaliencySample {
        image,
        boxes,
        labels,
        seed_object,
        fixations,
        density,
    })
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut count = None;
    let mut width = None;
    let mut height = None;
    let mut categories = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad line `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        let num = || v.parse::<usize>().map_err(|e| bad(format!("{k}: {e}")));
        match k {
            "count" => count = Some(num()?),
            "width" => width = Some(num()?),
            "height" => height = Some(num()?),
            "categories" => categories = Some(v.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>()),
            _ => return Err(bad(format!("unknown key `{k}`"))),
        }
    }
    let (Some(count), Some(width), Some(height), Some(categories)) = (count, width, height, categories) else {
        return Err(bad("manifest needs count, width, height and categories"));
    };
    let samples = (0..count)
        .map(|i| load_sample(dir, i, width, height, &categories))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        width,
        height,
        categories,
        samples,
    })
}
