//! Network definitions: the gaze regressor, the domain discriminators, and
//! the multi-depth feature-stack assembly that connects them.
//!
//! The regressor is split into two blocks:
//!
//! * the **feature block** `θ_F`: conv layers C1–C5, the two max-pool stages,
//!   and the first fully connected layer FC1 (pools carry no parameters);
//! * the **regression block** `θ_R`: FC2 and FC3 plus the final unit
//!   normalization.
//!
//! Adaptation trains a target copy of `θ_F` against a frozen source network
//! while `θ_R` stays shared, so inference on the adapted domain composes the
//! target feature block with the source regression block.

mod discriminator;
mod params;
mod regressor;
mod stack;

pub use discriminator::{
    discriminator_backward, discriminator_forward, DiscCache, DiscGrads, DiscMode, DiscParams,
    DiscTensors, CONV_DROPOUT_RATE, FC_DROPOUT_RATE,
};
pub use params::{
    init_target_from_source, Block, ConvLayer, DenseLayer, NamedSlice, NamedSliceMut, ParamStore,
    RegressorGrads, RegressorTensors, CONV_INIT_STD, TENSOR_NAMES,
};
pub use regressor::{
    backward_regressor, forward_regressor, regressor_param_count, RegressorCache, RegressorOutput,
};
pub use stack::{
    assemble_feature_stack, feature_stack_backward, FeatureStack, ImportanceVector, StackCache,
    StackGrads, StackLayout, TapArrays,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies one of the activations exposed for feature-stack assembly:
/// the post-activation outputs of the five conv layers plus FC1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tap {
    C1,
    C2,
    C3,
    C4,
    C5,
    Fc1,
}

impl Tap {
    /// All taps in network order.
    pub const ALL: [Tap; 6] = [Tap::C1, Tap::C2, Tap::C3, Tap::C4, Tap::C5, Tap::Fc1];

    /// The five convolutional taps in network order.
    pub const CONV: [Tap; 5] = [Tap::C1, Tap::C2, Tap::C3, Tap::C4, Tap::C5];

    /// Stable display name, used in configs, tables, and trace files.
    pub fn name(self) -> &'static str {
        match self {
            Tap::C1 => "C1",
            Tap::C2 => "C2",
            Tap::C3 => "C3",
            Tap::C4 => "C4",
            Tap::C5 => "C5",
            Tap::Fc1 => "FC1",
        }
    }

    /// Position in network order (C1 = 0 … FC1 = 5).
    pub fn index(self) -> usize {
        match self {
            Tap::C1 => 0,
            Tap::C2 => 1,
            Tap::C3 => 2,
            Tap::C4 => 3,
            Tap::C5 => 4,
            Tap::Fc1 => 5,
        }
    }

    /// Parses a tap name as written in config files (case-insensitive).
    pub fn parse(s: &str) -> Result<Tap> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(Tap::C1),
            "C2" => Ok(Tap::C2),
            "C3" => Ok(Tap::C3),
            "C4" => Ok(Tap::C4),
            "C5" => Ok(Tap::C5),
            "FC1" => Ok(Tap::Fc1),
            other => Err(Error::Config(format!(
                "unknown feature tap '{other}' (expected one of C1..C5, FC1)"
            ))),
        }
    }
}

impl std::fmt::Display for Tap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Regressor architecture. All convolutions are 3×3 stride 1 with no
/// padding; P1 is a 3×3 stride-2 max-pool after C3 and P2 a 2×2 stride-2
/// max-pool after C5. Every layer except FC3 is followed by a leaky ReLU
/// with slope 0.2, and FC3 feeds a unit normalization.
///
/// FC1 maps the flattened P2 output onto a vector of the same length, so its
/// activation can be reshaped back onto the pre-flatten grid when it joins a
/// feature stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    /// Input image size (rows, cols); images are single-channel.
    pub input_hw: (usize, usize),
    /// Output channel counts of C1..C5.
    pub conv_channels: [usize; 5],
    /// FC2 width.
    pub fc2_out: usize,
    /// Output dimension (3 for a gaze direction vector).
    pub out_dim: usize,
    /// If set, construction fails unless the derived FC1 width equals this.
    pub expected_fc1: Option<usize>,
}

/// Derived spatial/width trace of an [`Arch`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchTrace {
    /// Post-activation (rows, cols) of C1..C5.
    pub conv_hw: [(usize, usize); 5],
    /// Output size of P1 (after C3).
    pub p1_hw: (usize, usize),
    /// Output size of P2 (after C5).
    pub p2_hw: (usize, usize),
    /// Flattened P2 width = FC1 input = FC1 output.
    pub fc1_dim: usize,
}

fn pool_out(hw: (usize, usize), k: usize, s: usize, label: &str) -> Result<(usize, usize)> {
    if hw.0 < k || hw.1 < k {
        return Err(Error::Config(format!(
            "{label} input {}x{} is smaller than its {k}x{k} window",
            hw.0, hw.1
        )));
    }
    Ok(((hw.0 - k) / s + 1, (hw.1 - k) / s + 1))
}

fn conv_out(hw: (usize, usize), label: &str) -> Result<(usize, usize)> {
    if hw.0 < 3 || hw.1 < 3 {
        return Err(Error::Config(format!(
            "{label} input {}x{} is smaller than its 3x3 kernel",
            hw.0, hw.1
        )));
    }
    Ok((hw.0 - 2, hw.1 - 2))
}

impl Arch {
    /// The full-size architecture: 35×55 input, conv channels
    /// 32/32/64/80/192, FC widths 9600 → 9600 → 1000 → 3. Construction
    /// verifies that the derived FC1 width is exactly 9600.
    pub fn standard() -> Arch {
        let arch = Arch {
            input_hw: (35, 55),
            conv_channels: [32, 32, 64, 80, 192],
            fc2_out: 1000,
            out_dim: 3,
            expected_fc1: Some(9600),
        };
        arch.trace()
            .expect("the standard architecture must always derive FC1 = 9600");
        arch
    }

    /// A reduced architecture with the same topology, for fast tests.
    /// The 19×25 input keeps every stage non-degenerate (C5 output 2×5,
    /// P2 output 1×2) while staying small enough for finite-difference
    /// sweeps over every parameter.
    pub fn tiny() -> Arch {
        Arch {
            input_hw: (19, 25),
            conv_channels: [2, 2, 3, 3, 4],
            fc2_out: 6,
            out_dim: 3,
            expected_fc1: None,
        }
    }

    /// Derives the shape trace, failing with a configuration error if any
    /// stage underflows or the FC1 width contradicts `expected_fc1`.
    pub fn trace(&self) -> Result<ArchTrace> {
        let c1 = conv_out(self.input_hw, "C1")?;
        let c2 = conv_out(c1, "C2")?;
        let c3 = conv_out(c2, "C3")?;
        let p1 = pool_out(c3, 3, 2, "P1")?;
        let c4 = conv_out(p1, "C4")?;
        let c5 = conv_out(c4, "C5")?;
        let p2 = pool_out(c5, 2, 2, "P2")?;
        let fc1_dim = self.conv_channels[4] * p2.0 * p2.1;
        if let Some(expected) = self.expected_fc1 {
            if fc1_dim != expected {
                return Err(Error::Config(format!(
                    "architecture derives FC1 width {fc1_dim} (= {}ch x {}x{}) but {expected} \
                     was required",
                    self.conv_channels[4], p2.0, p2.1
                )));
            }
        }
        Ok(ArchTrace {
            conv_hw: [c1, c2, c3, c4, c5],
            p1_hw: p1,
            p2_hw: p2,
            fc1_dim,
        })
    }

    /// Channel count and spatial size of a tap's activation, with FC1
    /// reported in its reshaped-grid form (C5 channels × P2 spatial size).
    pub fn tap_shape(&self, tap: Tap) -> Result<(usize, (usize, usize))> {
        let trace = self.trace()?;
        Ok(match tap {
            Tap::C1 => (self.conv_channels[0], trace.conv_hw[0]),
            Tap::C2 => (self.conv_channels[1], trace.conv_hw[1]),
            Tap::C3 => (self.conv_channels[2], trace.conv_hw[2]),
            Tap::C4 => (self.conv_channels[3], trace.conv_hw[3]),
            Tap::C5 => (self.conv_channels[4], trace.conv_hw[4]),
            Tap::Fc1 => (self.conv_channels[4], trace.p2_hw),
        })
    }

    /// Stable textual fingerprint used to detect architecture mismatches
    /// when composing checkpoints.
    pub fn fingerprint(&self) -> String {
        format!(
            "regressor/in{}x{}/conv{}-{}-{}-{}-{}/fc{}-{}-{}",
            self.input_hw.0,
            self.input_hw.1,
            self.conv_channels[0],
            self.conv_channels[1],
            self.conv_channels[2],
            self.conv_channels[3],
            self.conv_channels[4],
            self.trace().map(|t| t.fc1_dim).unwrap_or(0),
            self.fc2_out,
            self.out_dim,
        )
    }
}

/// Which activations feed the domain discriminator: one or two conv taps,
/// optionally joined by FC1. One conv tap produces a single-level (2-D)
/// stack whose parts are concatenated along channels; two conv taps produce
/// a double-level (3-D) stack whose parts are stacked along a depth axis.
/// Selections with three or more conv taps are rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSelection {
    /// Conv taps in network order (length 1 or 2, distinct, no FC1 here).
    pub conv_taps: Vec<Tap>,
    /// Whether FC1 (reshaped onto its pre-flatten grid) joins the stack.
    pub include_fc1: bool,
}

impl FeatureSelection {
    /// A single-level selection: one conv tap plus FC1.
    pub fn single(tap: Tap) -> Result<FeatureSelection> {
        let sel = FeatureSelection {
            conv_taps: vec![tap],
            include_fc1: true,
        };
        sel.validate()?;
        Ok(sel)
    }

    /// A double-level selection: two conv taps plus FC1.
    pub fn double(a: Tap, b: Tap) -> Result<FeatureSelection> {
        let sel = FeatureSelection {
            conv_taps: vec![a, b],
            include_fc1: true,
        };
        sel.validate()?;
        Ok(sel)
    }

    /// Validates arity and ordering.
    pub fn validate(&self) -> Result<()> {
        if self.conv_taps.is_empty() || self.conv_taps.len() > 2 {
            return Err(Error::Config(format!(
                "feature selection must use 1 or 2 conv taps, got {}",
                self.conv_taps.len()
            )));
        }
        for tap in &self.conv_taps {
            if *tap == Tap::Fc1 {
                return Err(Error::Config(
                    "FC1 is selected via include_fc1, not as a conv tap".into(),
                ));
            }
        }
        if self.conv_taps.len() == 2 {
            if self.conv_taps[0] == self.conv_taps[1] {
                return Err(Error::Config(format!(
                    "feature selection repeats tap {}",
                    self.conv_taps[0]
                )));
            }
            if self.conv_taps[0].index() > self.conv_taps[1].index() {
                return Err(Error::Config(format!(
                    "conv taps must be in network order: {} precedes {}",
                    self.conv_taps[1], self.conv_taps[0]
                )));
            }
        }
        Ok(())
    }

    /// All taps feeding the stack, in network order (conv taps then FC1).
    pub fn taps(&self) -> Vec<Tap> {
        let mut taps = self.conv_taps.clone();
        if self.include_fc1 {
            taps.push(Tap::Fc1);
        }
        taps
    }

    /// True when the stack is three-dimensional (two conv taps).
    pub fn is_double(&self) -> bool {
        self.conv_taps.len() == 2
    }

    /// Short label used in tables and run directories, e.g. `C3` or `C3+C5`.
    pub fn label(&self) -> String {
        self.conv_taps
            .iter()
            .map(|t| t.name())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Parses a label such as `C3` or `C3+C5` (FC1 implied).
    pub fn parse(s: &str) -> Result<FeatureSelection> {
        let taps: Result<Vec<Tap>> = s.split('+').map(|part| Tap::parse(part.trim())).collect();
        let sel = FeatureSelection {
            conv_taps: taps?,
            include_fc1: true,
        };
        sel.validate()?;
        Ok(sel)
    }
}

/// Discriminator architecture: three stride-2 same-padded conv stages
/// followed by one dense unit. Kernels are 3×3 for single-level stacks and
/// 3×3×3 (stride 1 along depth) for double-level stacks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscArch {
    /// Output channels of the three conv stages.
    pub channels: [usize; 3],
}

impl DiscArch {
    /// The full-size discriminator: 16 → 32 → 64 channels.
    pub fn standard() -> DiscArch {
        DiscArch {
            channels: [16, 32, 64],
        }
    }

    /// A reduced discriminator for fast tests.
    pub fn tiny() -> DiscArch {
        DiscArch { channels: [2, 3, 4] }
    }

    /// Minimum spatial extent a stack must have on each axis so that all
    /// three halvings see at least two rows/columns of real input.
    pub const MIN_SPATIAL: usize = 8;
}
