//! Parameter storage for the regressor: named tensors, the feature /
//! regression block partition, freezing, and weight initialization.

use ndarray::{Array1, Array2, Array4};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::{Arch, ArchTrace};
use crate::error::{Error, Result};
use crate::linalg::{fill_truncated_normal, rng_from, Scalar};

/// Truncated-normal standard deviation used for conv kernels.
pub const CONV_INIT_STD: f64 = 0.02;

/// A convolution layer's parameters: kernels `(c_out, c_in, kh, kw)` plus
/// one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<R> {
    pub w: Array4<R>,
    pub b: Array1<R>,
}

/// A dense layer's parameters: weights `(out, in)` plus one bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<R> {
    pub w: Array2<R>,
    pub b: Array1<R>,
}

/// The sixteen named tensors of the regressor, shared between parameters,
/// gradients, and optimizer moments so all three stay structurally aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorTensors<R> {
    pub conv: [ConvLayer<R>; 5],
    pub fc1: DenseLayer<R>,
    pub fc2: DenseLayer<R>,
    pub fc3: DenseLayer<R>,
}

/// Gradients have the same layout as the parameters themselves.
pub type RegressorGrads<R> = RegressorTensors<R>;

/// Which block a tensor belongs to. The feature block `θ_F` covers C1–C5
/// and FC1 (the max-pool stages carry no parameters); the regression block
/// `θ_R` covers FC2 and FC3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Feature,
    Regression,
}

/// Immutable view of one named tensor.
pub struct NamedSlice<'a, R> {
    pub name: &'static str,
    pub block: Block,
    pub shape: Vec<usize>,
    pub data: &'a [R],
}

/// Mutable view of one named tensor.
pub struct NamedSliceMut<'a, R> {
    pub name: &'static str,
    pub block: Block,
    pub data: &'a mut [R],
}

/// Canonical tensor names in enumeration order.
pub const TENSOR_NAMES: [&str; 16] = [
    "c1.w", "c1.b", "c2.w", "c2.b", "c3.w", "c3.b", "c4.w", "c4.b", "c5.w", "c5.b", "fc1.w",
    "fc1.b", "fc2.w", "fc2.b", "fc3.w", "fc3.b",
];

const CONV_NAMES: [(&str, &str); 5] = [
    ("c1.w", "c1.b"),
    ("c2.w", "c2.b"),
    ("c3.w", "c3.b"),
    ("c4.w", "c4.b"),
    ("c5.w", "c5.b"),
];

impl<R: Scalar> RegressorTensors<R> {
    /// All-zero tensors shaped for `arch`. Also the gradient/moment layout.
    pub fn zeros(arch: &Arch) -> Result<RegressorTensors<R>> {
        let trace = arch.trace()?;
        let in_ch = |i: usize| -> usize {
            if i == 0 {
                1
            } else {
                arch.conv_channels[i - 1]
            }
        };
        let conv = std::array::from_fn(|i| ConvLayer {
            w: Array4::zeros((arch.conv_channels[i], in_ch(i), 3, 3)),
            b: Array1::zeros(arch.conv_channels[i]),
        });
        Ok(RegressorTensors {
            conv,
            fc1: DenseLayer {
                w: Array2::zeros((trace.fc1_dim, trace.fc1_dim)),
                b: Array1::zeros(trace.fc1_dim),
            },
            fc2: DenseLayer {
                w: Array2::zeros((arch.fc2_out, trace.fc1_dim)),
                b: Array1::zeros(arch.fc2_out),
            },
            fc3: DenseLayer {
                w: Array2::zeros((arch.out_dim, arch.fc2_out)),
                b: Array1::zeros(arch.out_dim),
            },
        })
    }

    /// Named immutable views in canonical order.
    pub fn slices(&self) -> Vec<NamedSlice<'_, R>> {
        let mut out = Vec::with_capacity(16);
        for (layer, (wn, bn)) in self.conv.iter().zip(CONV_NAMES) {
            out.push(NamedSlice {
                name: wn,
                block: Block::Feature,
                shape: layer.w.shape().to_vec(),
                data: layer.w.as_slice().expect("conv weights are contiguous"),
            });
            out.push(NamedSlice {
                name: bn,
                block: Block::Feature,
                shape: layer.b.shape().to_vec(),
                data: layer.b.as_slice().expect("conv biases are contiguous"),
            });
        }
        for (layer, block, wn, bn) in [
            (&self.fc1, Block::Feature, "fc1.w", "fc1.b"),
            (&self.fc2, Block::Regression, "fc2.w", "fc2.b"),
            (&self.fc3, Block::Regression, "fc3.w", "fc3.b"),
        ] {
            out.push(NamedSlice {
                name: wn,
                block,
                shape: layer.w.shape().to_vec(),
                data: layer.w.as_slice().expect("dense weights are contiguous"),
            });
            out.push(NamedSlice {
                name: bn,
                block,
                shape: layer.b.shape().to_vec(),
                data: layer.b.as_slice().expect("dense biases are contiguous"),
            });
        }
        out
    }

    /// Named mutable views in canonical order.
    pub fn slices_mut(&mut self) -> Vec<NamedSliceMut<'_, R>> {
        let mut out = Vec::with_capacity(16);
        for (layer, (wn, bn)) in self.conv.iter_mut().zip(CONV_NAMES) {
            out.push(NamedSliceMut {
                name: wn,
                block: Block::Feature,
                data: layer.w.as_slice_mut().expect("conv weights are contiguous"),
            });
            out.push(NamedSliceMut {
                name: bn,
                block: Block::Feature,
                data: layer.b.as_slice_mut().expect("conv biases are contiguous"),
            });
        }
        for (layer, block, wn, bn) in [
            (&mut self.fc1, Block::Feature, "fc1.w", "fc1.b"),
            (&mut self.fc2, Block::Regression, "fc2.w", "fc2.b"),
            (&mut self.fc3, Block::Regression, "fc3.w", "fc3.b"),
        ] {
            out.push(NamedSliceMut {
                name: wn,
                block,
                data: layer.w.as_slice_mut().expect("dense weights are contiguous"),
            });
            out.push(NamedSliceMut {
                name: bn,
                block,
                data: layer.b.as_slice_mut().expect("dense biases are contiguous"),
            });
        }
        out
    }

    /// Total element count.
    pub fn element_count(&self) -> usize {
        self.slices().iter().map(|s| s.data.len()).sum()
    }

    /// Flattens every tensor into one vector in canonical order, for
    /// finite-difference sweeps.
    pub fn to_flat(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(self.element_count());
        for s in self.slices() {
            out.extend_from_slice(s.data);
        }
        out
    }

    /// Writes a flat vector (canonical order) back into the tensors.
    pub fn assign_flat(&mut self, flat: &[R]) {
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.data.len();
            s.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }
}

/// The regressor's parameters plus the metadata needed to use them safely:
/// the architecture they were shaped for and a freeze flag that turns the
/// store read-only once it serves as the reference network for adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<R> {
    arch: Arch,
    tensors: RegressorTensors<R>,
    frozen: bool,
}

impl<R: Scalar> ParamStore<R> {
    /// Initializes parameters for `arch` from `seed`: conv kernels are
    /// truncated-normal with standard deviation 0.02, dense weights are
    /// truncated-normal scaled by 1/√fan_in so activations keep a stable
    /// magnitude through the wide FC layers, and all biases start at zero.
    /// Tensors are drawn in canonical order so the result is reproducible.
    pub fn init(arch: &Arch, seed: u64) -> Result<ParamStore<R>> {
        let mut tensors = RegressorTensors::<R>::zeros(arch)?;
        let mut rng = rng_from(seed);
        for layer in tensors.conv.iter_mut() {
            let w = layer.w.as_slice_mut().expect("conv weights are contiguous");
            fill_truncated_normal(w, CONV_INIT_STD, &mut rng);
        }
        for layer in [&mut tensors.fc1, &mut tensors.fc2, &mut tensors.fc3] {
            let fan_in = layer.w.dim().1 as f64;
            let w = layer.w.as_slice_mut().expect("dense weights are contiguous");
            fill_truncated_normal(w, 1.0 / fan_in.sqrt(), &mut rng);
        }
        Ok(ParamStore {
            arch: arch.clone(),
            tensors,
            frozen: false,
        })
    }

    /// Wraps existing tensors (validating their shapes against `arch`).
    pub fn from_tensors(arch: &Arch, tensors: RegressorTensors<R>) -> Result<ParamStore<R>> {
        let reference = RegressorTensors::<R>::zeros(arch)?;
        let got = tensors.slices();
        let want = reference.slices();
        for (g, w) in got.iter().zip(&want) {
            if g.shape != w.shape {
                return Err(Error::Shape(format!(
                    "tensor {} has shape {:?} but architecture requires {:?}",
                    g.name, g.shape, w.shape
                )));
            }
        }
        Ok(ParamStore {
            arch: arch.clone(),
            tensors,
            frozen: false,
        })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn arch_trace(&self) -> ArchTrace {
        self.arch.trace().expect("stored architecture is valid")
    }

    pub fn tensors(&self) -> &RegressorTensors<R> {
        &self.tensors
    }

    /// Mutable tensor access; fails if the store is frozen.
    pub fn tensors_mut(&mut self) -> Result<&mut RegressorTensors<R>> {
        if self.frozen {
            return Err(Error::Domain(
                "parameter store is frozen; its tensors cannot be modified".into(),
            ));
        }
        Ok(&mut self.tensors)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the store read-only. The flag survives cloning.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Replaces a named tensor's contents (checkpoint loading).
    pub fn load_named(&mut self, name: &str, data: &[R]) -> Result<()> {
        if self.frozen {
            return Err(Error::Domain(
                "parameter store is frozen; its tensors cannot be modified".into(),
            ));
        }
        for slice in self.tensors.slices_mut() {
            if slice.name == name {
                if slice.data.len() != data.len() {
                    return Err(Error::Shape(format!(
                        "tensor {name} holds {} elements but {} were provided",
                        slice.data.len(),
                        data.len()
                    )));
                }
                slice.data.copy_from_slice(data);
                return Ok(());
            }
        }
        Err(Error::Checkpoint(format!("no tensor named {name}")))
    }

    /// SHA-256 over tensor names, shapes, and exact element bit patterns.
    /// Identical stores hash identically; any single-bit weight change does
    /// not.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.arch.fingerprint().as_bytes());
        for s in self.tensors.slices() {
            h.update(s.name.as_bytes());
            for d in &s.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in s.data {
                h.update(Scalar::to_f64(*v).to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    /// Deterministic RNG seeded for this store (convenience for tests).
    pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
        rng_from(seed)
    }
}

/// Starts adaptation: the target network begins as an exact deep copy of the
/// source parameters, and the source store is frozen so nothing can touch it
/// for the rest of the run. The returned target is mutable (not frozen).
pub fn init_target_from_source<R: Scalar>(source: &mut ParamStore<R>) -> ParamStore<R> {
    source.freeze();
    ParamStore {
        arch: source.arch.clone(),
        tensors: source.tensors.clone(),
        frozen: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Elem;

    #[test]
    fn init_is_deterministic_and_biases_are_zero() {
        let arch = Arch::tiny();
        let a = ParamStore::<Elem>::init(&arch, 11).unwrap();
        let b = ParamStore::<Elem>::init(&arch, 11).unwrap();
        let c = ParamStore::<Elem>::init(&arch, 12).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
        for layer in &a.tensors().conv {
            assert!(layer.b.iter().all(|v| *v == 0.0));
            assert!(layer.w.iter().any(|v| *v != 0.0));
            for v in layer.w.iter() {
                assert!(v.abs() <= (2.0 * CONV_INIT_STD) as f32 + 1e-6);
            }
        }
        assert!(a.tensors().fc3.b.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let arch = Arch::tiny();
        let store = ParamStore::<Elem>::init(&arch, 3).unwrap();
        let slices = store.tensors().slices();
        let names: Vec<&str> = slices.iter().map(|s| s.name).collect();
        assert_eq!(names, TENSOR_NAMES.to_vec());
        let feature: Vec<&str> = slices
            .iter()
            .filter(|s| s.block == Block::Feature)
            .map(|s| s.name)
            .collect();
        let regression: Vec<&str> = slices
            .iter()
            .filter(|s| s.block == Block::Regression)
            .map(|s| s.name)
            .collect();
        assert_eq!(
            feature,
            vec![
                "c1.w", "c1.b", "c2.w", "c2.b", "c3.w", "c3.b", "c4.w", "c4.b", "c5.w", "c5.b",
                "fc1.w", "fc1.b"
            ]
        );
        assert_eq!(regression, vec!["fc2.w", "fc2.b", "fc3.w", "fc3.b"]);
        assert_eq!(feature.len() + regression.len(), TENSOR_NAMES.len());
    }

    #[test]
    fn frozen_store_rejects_mutation() {
        let arch = Arch::tiny();
        let mut store = ParamStore::<Elem>::init(&arch, 5).unwrap();
        store.freeze();
        assert!(store.tensors_mut().is_err());
        assert!(store.load_named("c1.b", &[0.0, 0.0]).is_err());
        // The freeze flag survives cloning.
        assert!(store.clone().is_frozen());
    }

    #[test]
    fn target_init_copies_deeply_and_freezes_source() {
        let arch = Arch::tiny();
        let mut source = ParamStore::<Elem>::init(&arch, 9).unwrap();
        let before = source.content_hash();
        let mut target = init_target_from_source(&mut source);
        assert!(source.is_frozen());
        assert!(!target.is_frozen());
        assert_eq!(target.content_hash(), before);
        // Mutating the target must not touch the source.
        target.tensors_mut().unwrap().fc2.w[[0, 0]] += 1.0;
        assert_eq!(source.content_hash(), before);
        assert_ne!(target.content_hash(), before);
    }

    #[test]
    fn flat_round_trip_preserves_every_tensor() {
        let arch = Arch::tiny();
        let store = ParamStore::<Elem>::init(&arch, 21).unwrap();
        let flat = store.tensors().to_flat();
        let mut other = RegressorTensors::<Elem>::zeros(&arch).unwrap();
        other.assign_flat(&flat);
        assert_eq!(&other, store.tensors());
    }

    #[test]
    fn from_tensors_validates_shapes() {
        let arch = Arch::tiny();
        let tensors = RegressorTensors::<Elem>::zeros(&Arch::standard()).unwrap();
        assert!(ParamStore::from_tensors(&arch, tensors).is_err());
        let good = RegressorTensors::<Elem>::zeros(&arch).unwrap();
        assert!(ParamStore::from_tensors(&arch, good).is_ok());
    }

    #[test]
    fn load_named_replaces_exactly_one_tensor() {
        let arch = Arch::tiny();
        let mut store = ParamStore::<Elem>::init(&arch, 2).unwrap();
        let n = store.tensors().conv[0].b.len();
        store.load_named("c1.b", &vec![1.5; n]).unwrap();
        assert!(store.tensors().conv[0].b.iter().all(|v| *v == 1.5));
        assert!(store.load_named("c9.w", &[]).is_err());
        assert!(store.load_named("c1.b", &[1.0]).is_err());
    }
}
