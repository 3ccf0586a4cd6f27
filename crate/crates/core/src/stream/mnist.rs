//! IDX ingestion and the column-by-column MNIST sequence task.

use std::path::{Path, PathBuf};

use rand::seq::index;

use super::{SampleKind, TaskConfig, TaskSample};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::rng_for;

pub const SIDE: usize = 28;
pub const CLASSES: usize = 10;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

fn data_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn read_header(path: &Path, bytes: &[u8], magic: u32, rank: usize) -> Result<Vec<usize>> {
    let need = 4 + 4 * rank;
    if bytes.len() < need {
        return Err(data_err(
            path,
            format!(
                "file is {} bytes, shorter than its {need}-byte header",
                bytes.len()
            ),
        ));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let found = word(0);
    if found != magic {
        return Err(data_err(
            path,
            format!("magic number 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let dims: Vec<usize> = (1..=rank).map(|i| word(i) as usize).collect();
    let body: usize = dims.iter().product();
    if bytes.len() != need + body {
        return Err(data_err(
            path,
            format!(
                "header promises {body} data bytes, file has {}",
                bytes.len() - need
            ),
        ));
    }
    Ok(dims)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| data_err(path, format!("cannot read IDX file: {e}")))
}

/// Images as `n` row-major `SIDE×SIDE` byte blocks.
pub fn read_images(path: &Path) -> Result<Vec<Vec<u8>>> {
    let bytes = read_file(path)?;
    let dims = read_header(path, &bytes, IMAGES_MAGIC, 3)?;
    if dims[1] != SIDE || dims[2] != SIDE {
        return Err(data_err(
            path,
            format!("images are {}×{}, expected {SIDE}×{SIDE}", dims[1], dims[2]),
        ));
    }
    Ok(bytes[16..]
        .chunks_exact(SIDE * SIDE)
        .map(<[u8]>::to_vec)
        .collect())
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    read_header(path, &bytes, LABELS_MAGIC, 1)?;
    let labels = bytes[8..].to_vec();
    if let Some(bad) = labels.iter().find(|&&l| usize::from(l) >= CLASSES) {
        return Err(data_err(path, format!("label {bad} outside 0..{CLASSES}")));
    }
    Ok(labels)
}

/// Serialises images and labels into the two IDX files.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    images: &[Vec<u8>],
    labels: &[u8],
) -> Result<()> {
    let mut img = Vec::with_capacity(16 + images.len() * SIDE * SIDE);
    for w in [IMAGES_MAGIC, images.len() as u32, SIDE as u32, SIDE as u32] {
        img.extend_from_slice(&w.to_be_bytes());
    }
    for i in images {
        img.extend_from_slice(i);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    for w in [LABELS_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&w.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// Step `t < 28` carries pixel column `t` scaled to `[0, 1]`; step 28 fires
/// the trigger and is the only evaluated one.
pub fn image_sample(pixels: &[u8], label: u8) -> TaskSample {
    let mut inputs = Tensor::zeros(SIDE + 1, SIDE + 1);
    for col in 0..SIDE {
        for row in 0..SIDE {
            inputs.set(col, row, f64::from(pixels[row * SIDE + col]) / 255.0);
        }
    }
    inputs.set(SIDE, SIDE, 1.0);
    let mut targets = Tensor::zeros(SIDE + 1, CLASSES);
    targets.set(SIDE, usize::from(label), 1.0);
    let mut eval_mask = vec![false; SIDE + 1];
    eval_mask[SIDE] = true;
    TaskSample {
        inputs,
        targets,
        eval_mask,
        kind: SampleKind::Discrete,
    }
}

fn load_pair(dir: &Path, images: &str, labels: &str) -> Result<(Vec<Vec<u8>>, Vec<u8>)> {
    let (ip, lp): (PathBuf, PathBuf) = (dir.join(images), dir.join(labels));
    let imgs = read_images(&ip)?;
    let labs = read_labels(&lp)?;
    if imgs.len() != labs.len() {
        return Err(data_err(
            &lp,
            format!("{} labels for {} images", labs.len(), imgs.len()),
        ));
    }
    Ok((imgs, labs))
}

type Splits = (Vec<TaskSample>, Vec<TaskSample>, Vec<TaskSample>);

/// Train and valid come from disjoint draws of the training file, test from
/// the t10k file, all without replacement.
pub(super) fn splits(cfg: &TaskConfig, seed: u64, dir: &Path) -> Result<Splits> {
    let (train_img, train_lab) = load_pair(dir, TRAIN_IMAGES, TRAIN_LABELS)?;
    let (test_img, test_lab) = load_pair(dir, TEST_IMAGES, TEST_LABELS)?;
    let want = cfg.n_train + cfg.n_valid;
    if want > train_img.len() {
        return Err(data_err(
            &dir.join(TRAIN_IMAGES),
            format!("{want} samples requested, file has {}", train_img.len()),
        ));
    }
    if cfg.n_test > test_img.len() {
        return Err(data_err(
            &dir.join(TEST_IMAGES),
            format!(
                "{} samples requested, file has {}",
                cfg.n_test,
                test_img.len()
            ),
        ));
    }
    let mut rng = rng_for(seed, "data.mnist.train");
    let picked = index::sample(&mut rng, train_img.len(), want).into_vec();
    let mut rng = rng_for(seed, "data.mnist.test");
    let test_picked = index::sample(&mut rng, test_img.len(), cfg.n_test).into_vec();
    let build = |imgs: &[Vec<u8>], labs: &[u8], idx: &[usize]| {
        idx.iter()
            .map(|&i| image_sample(&imgs[i], labs[i]))
            .collect()
    };
    Ok((
        build(&train_img, &train_lab, &picked[..cfg.n_train]),
        build(&train_img, &train_lab, &picked[cfg.n_train..]),
        build(&test_img, &test_lab, &test_picked),
    ))
}
