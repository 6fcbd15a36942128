use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;

use crate::data::preprocess::{center_crop, scale_pixel, IMAGE_COLS, IMAGE_ROWS};
use crate::data::{DatasetManifest, Domain};
use crate::error::{Error, Result};
use crate::linalg::{par_chunk_map, rng_from};
use crate::Elem;

/// A manifest with all pixels resident in memory as cropped 8-bit grids,
/// so epoch iteration never touches the filesystem.
pub struct LoadedDataset {
    images: Vec<Array2<u8>>,
    gazes: Vec<Option<[f64; 3]>>,
    domains: Vec<Domain>,
}

/// One training batch: images are `(B, 1, 35, 55)` in [-1, 1]; `gazes` is
/// present only when every member record carries a label.
pub struct Batch {
    pub images: Array4<Elem>,
    pub gazes: Option<Array2<Elem>>,
    pub indices: Vec<usize>,
}

impl LoadedDataset {
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let n = manifest.len();
        let chunks = par_chunk_map(n, 256, |range| {
            range
                .map(|i| {
                    let raw = manifest.load_raw(i)?;
                    center_crop(&raw)
                })
                .collect::<Result<Vec<_>>>()
        });
        let mut images = Vec::with_capacity(n);
        for chunk in chunks {
            images.extend(chunk?);
        }
        Ok(LoadedDataset {
            images,
            gazes: manifest.records.iter().map(|r| r.gaze).collect(),
            domains: manifest.records.iter().map(|r| r.domain).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.gazes.iter().all(|g| g.is_some())
    }

    pub fn domain(&self, index: usize) -> Domain {
        self.domains[index]
    }

    pub fn gaze(&self, index: usize) -> Option<[f64; 3]> {
        self.gazes[index]
    }

    /// Builds the float batch for a set of record indices.
    pub fn materialize(&self, indices: &[usize]) -> Batch {
        let b = indices.len();
        let mut images = Array4::<Elem>::zeros((b, 1, IMAGE_ROWS, IMAGE_COLS));
        for (slot, &idx) in indices.iter().enumerate() {
            let grid = &self.images[idx];
            let mut plane = images.index_axis_mut(ndarray::Axis(0), slot);
            let mut plane = plane.index_axis_mut(ndarray::Axis(0), 0);
            for ((r, c), &v) in grid.indexed_iter() {
                plane[[r, c]] = scale_pixel(v);
            }
        }
        let gazes = indices
            .iter()
            .map(|&i| self.gazes[i])
            .collect::<Option<Vec<_>>>()
            .map(|labels| {
                let mut arr = Array2::<Elem>::zeros((b, 3));
                for (mut row, label) in arr.rows_mut().into_iter().zip(labels) {
                    for (dst, &v) in row.iter_mut().zip(label.iter()) {
                        *dst = v as Elem;
                    }
                }
                arr
            });
        Batch {
            images,
            gazes,
            indices: indices.to_vec(),
        }
    }
}

/// Anything that can materialize training batches from record indices.
///
/// Training and evaluation loops are written against this trait so they run
/// the same way over manifest-backed datasets and over in-memory arrays
/// (fixtures, bindings, precomputed tensors).
pub trait BatchProvider: Sync {
    fn len(&self) -> usize;
    fn is_labeled(&self) -> bool;
    fn materialize(&self, indices: &[usize]) -> Batch;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl BatchProvider for LoadedDataset {
    fn len(&self) -> usize {
        LoadedDataset::len(self)
    }
    fn is_labeled(&self) -> bool {
        LoadedDataset::is_labeled(self)
    }
    fn materialize(&self, indices: &[usize]) -> Batch {
        LoadedDataset::materialize(self, indices)
    }
}

/// A dataset held directly as float tensors: images `(N, 1, H, W)` plus
/// optional unit gaze labels `(N, 3)`. Unlike [`LoadedDataset`] the spatial
/// size is arbitrary, which small fixture networks rely on.
pub struct ArrayDataset {
    images: Array4<Elem>,
    gazes: Option<Array2<Elem>>,
}

impl ArrayDataset {
    pub fn new(images: Array4<Elem>, gazes: Option<Array2<Elem>>) -> Result<Self> {
        if let Some(g) = &gazes {
            if g.nrows() != images.len_of(ndarray::Axis(0)) {
                return Err(Error::Shape(format!(
                    "{} images but {} label rows",
                    images.len_of(ndarray::Axis(0)),
                    g.nrows()
                )));
            }
        }
        Ok(ArrayDataset { images, gazes })
    }
}

impl BatchProvider for ArrayDataset {
    fn len(&self) -> usize {
        self.images.len_of(ndarray::Axis(0))
    }
    fn is_labeled(&self) -> bool {
        self.gazes.is_some()
    }
    fn materialize(&self, indices: &[usize]) -> Batch {
        let mut images = Array4::<Elem>::zeros((
            indices.len(),
            self.images.len_of(ndarray::Axis(1)),
            self.images.len_of(ndarray::Axis(2)),
            self.images.len_of(ndarray::Axis(3)),
        ));
        for (slot, &idx) in indices.iter().enumerate() {
            images
                .index_axis_mut(ndarray::Axis(0), slot)
                .assign(&self.images.index_axis(ndarray::Axis(0), idx));
        }
        let gazes = self.gazes.as_ref().map(|g| {
            let mut rows = Array2::<Elem>::zeros((indices.len(), g.ncols()));
            for (slot, &idx) in indices.iter().enumerate() {
                rows.row_mut(slot).assign(&g.row(idx));
            }
            rows
        });
        Batch { images, gazes, indices: indices.to_vec() }
    }
}

/// A fixed subset of another provider, for cheap validation or evaluation
/// on part of a dataset. Indices are into the base provider.
pub struct SubsetProvider<'a, P: BatchProvider + ?Sized> {
    base: &'a P,
    indices: Vec<usize>,
}

impl<'a, P: BatchProvider + ?Sized> SubsetProvider<'a, P> {
    pub fn new(base: &'a P, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= base.len()) {
            return Err(Error::Config(format!(
                "subset index {bad} is out of range for a dataset of {}",
                base.len()
            )));
        }
        Ok(SubsetProvider { base, indices })
    }

    /// The first `min(n, len)` records after a seeded shuffle — a fixed,
    /// reproducible sample of the base dataset.
    pub fn sampled(base: &'a P, n: usize, seed: u64) -> Self {
        let mut all: Vec<usize> = (0..base.len()).collect();
        all.shuffle(&mut rng_from(seed));
        all.truncate(n.min(all.len()));
        SubsetProvider { base, indices: all }
    }
}

impl<P: BatchProvider + ?Sized> BatchProvider for SubsetProvider<'_, P> {
    fn len(&self) -> usize {
        self.indices.len()
    }
    fn is_labeled(&self) -> bool {
        self.base.is_labeled()
    }
    fn materialize(&self, indices: &[usize]) -> Batch {
        let mapped: Vec<usize> = indices.iter().map(|&i| self.indices[i]).collect();
        let mut batch = self.base.materialize(&mapped);
        batch.indices = indices.to_vec();
        batch
    }
}

/// Seed-determined epoch order: a Fisher-Yates shuffle of `0..n` chunked
/// into full batches, with any partial tail dropped.
pub fn shuffled_full_batch_indices(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    order
        .chunks_exact(batch_size)
        .map(|c| c.to_vec())
        .collect()
}

/// One shuffled epoch of fixed-size batches.
pub fn iterate_batches(
    dataset: &LoadedDataset,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<impl Iterator<Item = Batch> + '_> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Ingestion("cannot batch an empty dataset".into()));
    }
    let plan = shuffled_full_batch_indices(dataset.len(), batch_size, epoch_seed);
    Ok(plan.into_iter().map(|idx| dataset.materialize(&idx)))
}

/// Sequential batches over the whole dataset, keeping the partial tail:
/// evaluation must see every sample exactly once.
pub fn eval_batches(
    dataset: &LoadedDataset,
    batch_size: usize,
) -> Result<impl Iterator<Item = Batch> + '_> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Ingestion("cannot batch an empty dataset".into()));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let plan: Vec<Vec<usize>> = all.chunks(batch_size).map(|c| c.to_vec()).collect();
    Ok(plan.into_iter().map(|idx| dataset.materialize(&idx)))
}
