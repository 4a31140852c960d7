//! Datasets and task sequencing.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, ArrayView1};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;

pub const N_CLASSES: usize = 10;
const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Reads a file, transparently gunzipping it if it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx("truncated header".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Idx(format!("bad image magic {magic}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    let need = count * rows * cols;
    if body.len() != need {
        return Err(Error::Idx(format!("expected {need} pixel bytes, found {}", body.len())));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Idx(format!("bad label magic {magic}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Idx(format!("expected {count} labels, found {}", body.len())));
    }
    Ok(body.to_vec())
}

/// Images and labels from a pair of IDX files (optionally gzipped).
pub fn load_idx(images: &Path, labels: &Path) -> Result<(IdxImages, Vec<u8>)> {
    let imgs = parse_idx_images(&read_maybe_gz(images)?)?;
    let labs = parse_idx_labels(&read_maybe_gz(labels)?)?;
    if imgs.count != labs.len() {
        return Err(Error::Idx(format!("{} images but {} labels", imgs.count, labs.len())));
    }
    if let Some(&bad) = labs.iter().find(|&&l| l as usize >= N_CLASSES) {
        return Err(Error::Idx(format!("label {bad} out of range")));
    }
    Ok((imgs, labs))
}

/// 2x2 average pooling of a 28x28 image, scaled to [0, 1].
pub fn downscale_14(image: &[u8]) -> Result<Vec<f64>> {
    if image.len() != 28 * 28 {
        return Err(Error::Data(format!("expected 784 pixels, got {}", image.len())));
    }
    let mut out = Vec::with_capacity(196);
    for r in 0..14 {
        for c in 0..14 {
            let at = |dr: usize, dc: usize| image[(2 * r + dr) * 28 + 2 * c + dc] as f64;
            out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / (4.0 * 255.0));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    #[default]
    Half,
    Full,
}

/// Preprocessed images with labels, indexed by class.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Data("feature/label count mismatch".into()));
        }
        let mut by_class = vec![Vec::new(); N_CLASSES];
        for (i, &l) in labels.iter().enumerate() {
            by_class
                .get_mut(l as usize)
                .ok_or_else(|| Error::Data(format!("label {l} out of range")))?
                .push(i);
        }
        Ok(Dataset {
            features,
            labels,
            by_class,
        })
    }

    pub fn from_idx(images: &IdxImages, labels: Vec<u8>, resolution: Resolution) -> Result<Self> {
        let width = match resolution {
            Resolution::Half => 196,
            Resolution::Full => images.rows * images.cols,
        };
        let mut features = Array2::zeros((images.count, width));
        for i in 0..images.count {
            let img = images.image(i);
            let row = match resolution {
                Resolution::Half => downscale_14(img)?,
                Resolution::Full => img.iter().map(|&p| p as f64 / 255.0).collect(),
            };
            features.row_mut(i).assign(&ArrayView1::from(&row));
        }
        Dataset::new(features, labels)
    }

    pub fn load(images: &Path, labels: &Path, resolution: Resolution) -> Result<Self> {
        let (imgs, labs) = load_idx(images, labels)?;
        Dataset::from_idx(&imgs, labs, resolution)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_size(&self, class: u8) -> usize {
        self.by_class[class as usize].len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Batch made of the given rows.
    pub fn gather(&self, rows: &[usize]) -> Batch {
        let mut inputs = Array2::zeros((rows.len(), self.width()));
        let mut targets = Array2::zeros((rows.len(), N_CLASSES));
        let mut labels = Vec::with_capacity(rows.len());
        for (m, &i) in rows.iter().enumerate() {
            inputs.row_mut(m).assign(&self.features.row(i));
            targets[[m, self.labels[i] as usize]] = 1.0;
            labels.push(self.labels[i]);
        }
        Batch {
            inputs,
            targets,
            labels,
        }
    }
}

/// Train and test pools of MNIST in the given resolution.
pub fn load_mnist(dir: &Path, resolution: Resolution) -> Result<(Dataset, Dataset)> {
    let find = |stem: &str| -> Result<std::path::PathBuf> {
        for name in [format!("{stem}.gz"), stem.to_string()] {
            let p = dir.join(name);
            if p.is_file() {
                return Ok(p);
            }
        }
        Err(Error::Data(format!("{stem} not found in {}", dir.display())))
    };
    let train = Dataset::load(
        &find("train-images-idx3-ubyte")?,
        &find("train-labels-idx1-ubyte")?,
        resolution,
    )?;
    let test = Dataset::load(
        &find("t10k-images-idx3-ubyte")?,
        &find("t10k-labels-idx1-ubyte")?,
        resolution,
    )?;
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    /// One-hot over all ten classes.
    pub targets: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Balanced draw of `size` rows over `classes`, without replacement inside
/// the batch. Rows are shuffled so classes interleave.
pub fn sample_batch<R: Rng + ?Sized>(data: &Dataset, classes: &[u8], size: usize, rng: &mut R) -> Result<Batch> {
    if classes.is_empty() || !size.is_multiple_of(classes.len()) {
        return Err(Error::Data(format!(
            "batch size {size} does not split evenly over {} classes",
            classes.len()
        )));
    }
    let per = size / classes.len();
    let mut rows = Vec::with_capacity(size);
    for &c in classes {
        let pool = data
            .by_class
            .get(c as usize)
            .ok_or_else(|| Error::Data(format!("class {c} out of range")))?;
        if pool.len() < per {
            return Err(Error::Data(format!("class {c} has {} samples, need {per}", pool.len())));
        }
        rows.extend(index::sample(rng, pool.len(), per).into_iter().map(|i| pool[i]));
    }
    rows.shuffle(rng);
    Ok(data.gather(&rows))
}

/// The four signed-XOR samples. "False" inputs are -1; targets are 1 for
/// XOR-true and 0 for XOR-false to match the logistic output range.
pub fn make_xor_task() -> (Array2<f64>, Array2<f64>) {
    let inputs = ndarray::array![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]];
    let targets = ndarray::array![[0.0], [1.0], [1.0], [0.0]];
    (inputs, targets)
}

/// Fresh 2-input / 1-output network together with the XOR batch.
pub fn xor_problem() -> (Network, Array2<f64>, Array2<f64>) {
    let (x, y) = make_xor_task();
    (Network::new(2, 1), x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub seed: u64,
    pub tasks: Vec<[u8; 2]>,
}

impl RunPlan {
    /// Classes of tasks `0..=task`.
    pub fn seen_classes(&self, task: usize) -> Vec<u8> {
        self.tasks[..=task].iter().flatten().copied().collect()
    }
}

/// Three disjoint two-class tasks drawn uniformly from the ten digits.
pub fn make_run_plan(seed: u64) -> RunPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut digits: Vec<u8> = (0..N_CLASSES as u8).collect();
    digits.shuffle(&mut rng);
    RunPlan {
        seed,
        tasks: digits[..6].chunks(2).map(|c| [c[0], c[1]]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let bytes = idx_images(2, 2, 2, &[1, 2, 3, 4, 5, 6, 7, 8]);
        let imgs = parse_idx_images(&bytes).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (2, 2, 2));
        assert_eq!(imgs.image(1), &[5, 6, 7, 8]);
        assert!(parse_idx_images(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[3] = 0;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Idx(_))));
        assert!(parse_idx_images(&[]).is_err());
        assert!(parse_idx_labels(&[]).is_err());
        let mut labels = LABEL_MAGIC.to_be_bytes().to_vec();
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[0, 7, 9]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![0, 7, 9]);
    }

    #[test]
    fn downscale_examples() {
        assert!(downscale_14(&[0; 784]).unwrap().iter().all(|&v| v == 0.0));
        assert!(downscale_14(&[255; 784]).unwrap().iter().all(|&v| v == 1.0));
        let mut img = [0u8; 784];
        img[28] = 255;
        img[29] = 255;
        assert_eq!(downscale_14(&img).unwrap()[0], 0.5);
        assert!(downscale_14(&[0; 100]).is_err());
    }

    #[test]
    fn xor_truth_table() {
        let (x, y) = make_xor_task();
        assert_eq!(x.nrows(), 4);
        for m in 0..4 {
            let want = if x[[m, 0]] != x[[m, 1]] { 1.0 } else { 0.0 };
            assert_eq!(y[[m, 0]], want);
        }
    }

    fn toy_dataset() -> Dataset {
        let labels: Vec<u8> = (0..200).map(|i| (i % 10) as u8).collect();
        let features = Array2::from_shape_fn((200, 3), |(i, j)| (i * 3 + j) as f64 / 600.0);
        Dataset::new(features, labels).unwrap()
    }

    #[test]
    fn balanced_batches() {
        let data = toy_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = sample_batch(&data, &[3, 7], 20, &mut rng).unwrap();
        assert_eq!(b.labels.iter().filter(|&&l| l == 3).count(), 10);
        assert_eq!(b.labels.iter().filter(|&&l| l == 7).count(), 10);
        for m in 0..20 {
            assert_eq!(b.targets.row(m).sum(), 1.0);
            assert_eq!(b.targets[[m, b.labels[m] as usize]], 1.0);
        }
        let mut again = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(sample_batch(&data, &[3, 7], 20, &mut again).unwrap(), b);
        assert!(sample_batch(&data, &[3, 7], 21, &mut rng).is_err());
        assert!(sample_batch(&data, &[3, 7], 60, &mut rng).is_err());
    }

    #[test]
    fn run_plans_are_disjoint_and_seeded() {
        for seed in 0..50 {
            let plan = make_run_plan(seed);
            let mut all: Vec<u8> = plan.tasks.iter().flatten().copied().collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 6);
            assert_eq!(plan, make_run_plan(seed));
            assert_eq!(plan.seen_classes(1).len(), 4);
        }
    }
}
