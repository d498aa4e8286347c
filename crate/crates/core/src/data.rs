//! Dataset ingestion (MNIST IDX, CIFAR-10/100 binary), batching, and
//! additive-noise sampling.
//!
//! Images are normalized to \[0,1\] by plain /255 scaling; there is no
//! mean-centering or per-channel standardization, because the noise model is
//! defined on the raw \[0,1\] intensities. Loaders parse the official binary
//! formats byte-exactly and report malformed files with the byte offset.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::moments::NoiseSpec;
use crate::rng::{self, STREAM_SYNTH};
use crate::tensor::Tensor;

/// An immutable labeled image set. `images` is [N, element...] with values
/// in \[0,1\]; `labels[i] < classes`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub split: String,
    images: Tensor,
    labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: impl Into<String>,
        images: Tensor,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        let n = *images.shape().first().unwrap_or(&0);
        if n != labels.len() {
            return Err(Error::Shape {
                op: "dataset",
                details: format!("{n} images vs {} labels", labels.len()),
            });
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain(
                "dataset image values must lie in [0,1]".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            name: name.into(),
            split: split.into(),
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-example shape (no batch dimension).
    pub fn element_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Copies the selected examples into a batch tensor plus label vector.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let elem: usize = self.element_shape().iter().product();
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.element_shape());
        let mut data = Vec::with_capacity(indices.len() * elem);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index(format!(
                    "example index {i} out of range for {} examples",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.images.data()[i * elem..(i + 1) * elem]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(shape, data)?, labels))
    }

    /// A new dataset holding the selected examples (same name/split tags).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (images, labels) = self.gather(indices)?;
        Ok(Dataset {
            name: self.name.clone(),
            split: self.split.clone(),
            images,
            labels,
            classes: self.classes,
        })
    }

    /// The first `n` examples (or all of them if fewer).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// x + sigma_x (.) z with z standard normal, drawn row-major from `rng`.
/// `x` is a batch [N, element...]; the noise std broadcasts across rows.
/// No clipping: noisy values may leave \[0,1\].
pub fn add_gaussian_noise(x: &Tensor, noise: &NoiseSpec, rng: &mut impl Rng) -> Result<Tensor> {
    if x.shape().is_empty() {
        return Err(Error::Shape {
            op: "add_gaussian_noise",
            details: "input must have a batch dimension".into(),
        });
    }
    let std = noise.std_tensor(&x.shape()[1..])?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(std.numel()) {
        for (v, &s) in row.iter_mut().zip(std.data()) {
            if s > 0.0 {
                *v += s * rng::standard_normal(rng);
            }
        }
    }
    Ok(out)
}

// -- MNIST ---------------------------------------------------------------

const MNIST_FILES: [(&str, &str); 2] = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
];

/// Loads the four official IDX files from `dir` into (train, test).
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut splits = Vec::new();
    for (split, (img, lab)) in ["train", "test"].iter().zip(MNIST_FILES) {
        let images = read_idx_images(&dir.join(img))?;
        let labels = read_idx_labels(&dir.join(lab))?;
        splits.push(Dataset::new("mnist", *split, images, labels, 10)?);
    }
    let test = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok((train, test))
}

fn be_u32(buf: &[u8], pos: usize, path: &Path, what: &str) -> Result<u32> {
    let bytes: [u8; 4] = buf
        .get(pos..pos + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| {
            Error::format(path, pos as u64, format!("truncated while reading {what}"))
        })?;
    Ok(u32::from_be_bytes(bytes))
}

/// IDX image file: magic 2051, then counts and dims as big-endian u32,
/// then unsigned pixel bytes. Returns [N, 1, H, W] scaled to [0,1].
fn read_idx_images(path: &Path) -> Result<Tensor> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = be_u32(&buf, 0, path, "magic")?;
    if magic != 2051 {
        return Err(Error::format(
            path,
            0,
            format!("magic {magic}, expected 2051 (IDX images)"),
        ));
    }
    let n = be_u32(&buf, 4, path, "image count")? as usize;
    let h = be_u32(&buf, 8, path, "height")? as usize;
    let w = be_u32(&buf, 12, path, "width")? as usize;
    let expect = 16 + n * h * w;
    if buf.len() != expect {
        return Err(Error::format(
            path,
            16,
            format!(
                "file is {} bytes, header promises {expect} ({n} images of {h}x{w})",
                buf.len()
            ),
        ));
    }
    let data = buf[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, 1, h, w], data)
}

/// IDX label file: magic 2049, big-endian count, then label bytes.
fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = be_u32(&buf, 0, path, "magic")?;
    if magic != 2049 {
        return Err(Error::format(
            path,
            0,
            format!("magic {magic}, expected 2049 (IDX labels)"),
        ));
    }
    let n = be_u32(&buf, 4, path, "label count")? as usize;
    if buf.len() != 8 + n {
        return Err(Error::format(
            path,
            8,
            format!("file is {} bytes, header promises {}", buf.len(), 8 + n),
        ));
    }
    Ok(buf[8..].iter().map(|&b| b as usize).collect())
}

// -- CIFAR ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Ten,
    Hundred,
}

impl CifarVariant {
    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Ten => 10,
            CifarVariant::Hundred => 100,
        }
    }

    /// Bytes per record: label byte(s) + 3072 channel-major pixels.
    fn record_len(self) -> usize {
        match self {
            CifarVariant::Ten => 3073,
            CifarVariant::Hundred => 3074,
        }
    }

    fn files(self) -> (Vec<PathBuf>, Vec<PathBuf>) {
        match self {
            CifarVariant::Ten => (
                (1..=5)
                    .map(|i| PathBuf::from(format!("data_batch_{i}.bin")))
                    .collect(),
                vec![PathBuf::from("test_batch.bin")],
            ),
            CifarVariant::Hundred => {
                (vec![PathBuf::from("train.bin")], vec![PathBuf::from("test.bin")])
            }
        }
    }
}

/// Loads CIFAR binary batches from `dir` into (train, test). CIFAR-100
/// records carry (coarse, fine) label bytes; the fine label is used.
pub fn load_cifar(dir: &Path, variant: CifarVariant) -> Result<(Dataset, Dataset)> {
    let (train_files, test_files) = variant.files();
    let name = match variant {
        CifarVariant::Ten => "cifar10",
        CifarVariant::Hundred => "cifar100",
    };
    let load_split = |files: &[PathBuf], split: &str| -> Result<Dataset> {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for f in files {
            let path = dir.join(f);
            read_cifar_file(&path, variant, &mut data, &mut labels)?;
        }
        let n = labels.len();
        Dataset::new(
            name,
            split,
            Tensor::new(vec![n, 3, 32, 32], data)?,
            labels,
            variant.classes(),
        )
    };
    Ok((
        load_split(&train_files, "train")?,
        load_split(&test_files, "test")?,
    ))
}

fn read_cifar_file(
    path: &Path,
    variant: CifarVariant,
    data: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let rec = variant.record_len();
    if buf.is_empty() || buf.len() % rec != 0 {
        return Err(Error::format(
            path,
            (buf.len() - buf.len() % rec) as u64,
            format!("file is {} bytes, not a multiple of the {rec}-byte record", buf.len()),
        ));
    }
    for chunk in buf.chunks_exact(rec) {
        // CIFAR-10: [label, pixels]; CIFAR-100: [coarse, fine, pixels].
        let (label, pixels) = match variant {
            CifarVariant::Ten => (chunk[0] as usize, &chunk[1..]),
            CifarVariant::Hundred => (chunk[1] as usize, &chunk[2..]),
        };
        labels.push(label);
        data.extend(pixels.iter().map(|&b| b as f64 / 255.0));
    }
    Ok(())
}

// -- synthetic sets --------------------------------------------------------

/// Linearly separable 2-D toy set on \[0,1\]^2: label = 1 iff x + y > 1, with
/// points inside the margin band rejected. Element shape `[2]`.
pub fn synthetic_blobs(n: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, &[STREAM_SYNTH, 2]);
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let x: f64 = r.random_range(0.0..1.0);
        let y: f64 = r.random_range(0.0..1.0);
        if (x + y - 1.0).abs() < 0.2 {
            continue;
        }
        data.push(x);
        data.push(y);
        labels.push(usize::from(x + y > 1.0));
    }
    Dataset::new(
        "synthetic-blobs",
        "train",
        Tensor::new(vec![n, 2], data).unwrap(),
        labels,
        2,
    )
    .unwrap()
}

/// Separable synthetic image set: dim uniform noise plus a bright patch
/// whose grid position encodes the label. Matches any conv architecture's
/// input shape; used by smoke runs so no real data is required.
pub fn synthetic_images(
    n: usize,
    element_shape: &[usize],
    classes: usize,
    seed: u64,
) -> Result<Dataset> {
    let [c, h, w]: [usize; 3] = element_shape
        .try_into()
        .map_err(|_| Error::Shape {
            op: "synthetic_images",
            details: format!("element shape {element_shape:?}, expected [C, H, W]"),
        })?;
    let cols = (classes as f64).sqrt().ceil() as usize;
    let rows = classes.div_ceil(cols);
    let (ph, pw) = (h / (rows + 1), w / (cols + 1));
    if ph == 0 || pw == 0 {
        return Err(Error::Config(format!(
            "image {h}x{w} too small for {classes} patch positions"
        )));
    }
    let mut r = rng::stream(seed, &[STREAM_SYNTH, 1]);
    let mut shape = vec![n];
    shape.extend_from_slice(element_shape);
    let mut data = vec![0.0; n * c * h * w];
    let mut labels = Vec::with_capacity(n);
    for (i, img) in data.chunks_exact_mut(c * h * w).enumerate() {
        let label = i % classes;
        for v in img.iter_mut() {
            *v = r.random_range(0.0..0.3);
        }
        let (gr, gc) = (label / cols, label % cols);
        let (top, left) = (gr * ph + ph / 2, gc * pw + pw / 2);
        for ch in 0..c {
            for dy in 0..ph {
                for dx in 0..pw {
                    img[ch * h * w + (top + dy) * w + (left + dx)] = 0.9;
                }
            }
        }
        labels.push(label);
    }
    Dataset::new(
        "synthetic-images",
        "train",
        Tensor::new(shape, data)?,
        labels,
        classes,
    )
}
