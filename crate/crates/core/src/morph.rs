//! Architecture specs, where-to-grow rules, new-block initialization and the
//! splice that inserts a block into a live network.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GrowError, Result};
use crate::netcore::{Block, BlockKind, Dense, Family, Network, OptState};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub width: usize,
    pub blocks: usize,
}

/// Per-stage widths and block counts. The textual form is
/// `family:w1xb1-w2xb2-...`, e.g. `res:64x2-64x2-64x2-64x2`; input and
/// output sizes come from the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub family: Family,
    pub stages: Vec<StageSpec>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ArchSpec {
    pub fn with_io(mut self, input_dim: usize, num_classes: usize) -> Self {
        self.input_dim = input_dim;
        self.num_classes = num_classes;
        self
    }

    pub fn blocks(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.blocks).collect()
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(GrowError::InvalidArch("no stages".into()));
        }
        if let Some(i) = self.stages.iter().position(|s| s.width == 0) {
            return Err(GrowError::InvalidArch(format!("stage {i} has zero width")));
        }
        if let Some(i) = self.stages.iter().position(|s| s.blocks == 0) {
            return Err(GrowError::InvalidArch(format!("stage {i} has no blocks")));
        }
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(GrowError::InvalidArch(
                "input dimension and class count must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Same family, stage count and widths.
    pub fn check_compatible(&self, other: &ArchSpec) -> Result<()> {
        if self.family != other.family {
            return Err(GrowError::IncompatibleArch("families differ".into()));
        }
        if self.stages.len() != other.stages.len() {
            return Err(GrowError::IncompatibleArch(format!(
                "{} stages vs {}",
                self.stages.len(),
                other.stages.len()
            )));
        }
        for (i, (a, b)) in self.stages.iter().zip(&other.stages).enumerate() {
            if a.width != b.width {
                return Err(GrowError::IncompatibleArch(format!(
                    "stage {i} width {} vs {}",
                    a.width, b.width
                )));
            }
        }
        if self.input_dim != other.input_dim || self.num_classes != other.num_classes {
            return Err(GrowError::IncompatibleArch("input/output sizes differ".into()));
        }
        Ok(())
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let family = match self.family {
            Family::Plain => "plain",
            Family::Residual => "res",
        };
        write!(f, "{family}:")?;
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{}x{}", s.width, s.blocks)?;
        }
        Ok(())
    }
}

impl FromStr for ArchSpec {
    type Err = GrowError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| GrowError::InvalidArch(format!("`{s}`: {why}"));
        let (family, body) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| bad("expected `family:WxB-WxB-...`"))?;
        let family = match family {
            "res" | "residual" => Family::Residual,
            "plain" => Family::Plain,
            other => return Err(bad(&format!("unknown family `{other}` (res|plain)"))),
        };
        let stages = body
            .split('-')
            .map(|part| {
                let (w, b) = part
                    .split_once('x')
                    .ok_or_else(|| bad(&format!("stage `{part}` is not WIDTHxBLOCKS")))?;
                let width = w.parse().map_err(|_| bad(&format!("bad width `{w}`")))?;
                let blocks = b.parse().map_err(|_| bad(&format!("bad block count `{b}`")))?;
                if width == 0 || blocks == 0 {
                    return Err(bad("widths and block counts must be positive"));
                }
                Ok(StageSpec { width, blocks })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ArchSpec {
            family,
            stages,
            input_dim: 0,
            num_classes: 0,
        })
    }
}

/// Number of blocks growth has to add to turn `seed` into `target`.
pub fn count_added_blocks(seed: &ArchSpec, target: &ArchSpec) -> Result<usize> {
    seed.check_compatible(target)?;
    seed.stages
        .iter()
        .zip(&target.stages)
        .enumerate()
        .try_fold(0usize, |n, (i, (s, t))| {
            t.blocks.checked_sub(s.blocks).map(|d| n + d).ok_or_else(|| {
                GrowError::IncompatibleArch(format!(
                    "stage {i}: target has fewer blocks ({}) than seed ({})",
                    t.blocks, s.blocks
                ))
            })
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WherePolicy {
    /// Fill each stage to capacity before moving to the next.
    Sequential,
    /// Visit stages round-robin, one block per visit.
    Circulation,
}

impl FromStr for WherePolicy {
    type Err = GrowError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "circulation" => Ok(Self::Circulation),
            _ => Err(GrowError::InvalidArgument(format!(
                "unknown where-policy `{s}` (sequential|circulation)"
            ))),
        }
    }
}

impl fmt::Display for WherePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sequential => "sequential",
            Self::Circulation => "circulation",
        })
    }
}

/// Lowest stage that is below its target block count.
pub fn next_location_sequential(current: &[usize], target: &[usize]) -> Option<usize> {
    current.iter().zip(target).position(|(c, t)| c < t)
}

/// First unsaturated stage scanning cyclically from the one after
/// `last_visited` (from stage 0 when nothing has been visited yet).
pub fn next_location_circulation(
    last_visited: Option<usize>,
    current: &[usize],
    target: &[usize],
) -> Option<usize> {
    let n = current.len();
    let start = last_visited.map_or(0, |s| (s + 1) % n.max(1));
    (0..n)
        .map(|k| (start + k) % n)
        .find(|&s| current[s] < target[s])
}

/// Where-to-grow rule plus the little state circulation needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrowthOrder {
    pub policy: WherePolicy,
    pub last_visited: Option<usize>,
}

impl GrowthOrder {
    pub fn new(policy: WherePolicy) -> Self {
        Self {
            policy,
            last_visited: None,
        }
    }

    pub fn peek(&self, current: &[usize], target: &[usize]) -> Option<usize> {
        match self.policy {
            WherePolicy::Sequential => next_location_sequential(current, target),
            WherePolicy::Circulation => {
                next_location_circulation(self.last_visited, current, target)
            }
        }
    }

    pub fn commit(&mut self, stage: usize) {
        self.last_visited = Some(stage);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitRule {
    /// Duplicate the preceding block's weights.
    Copy,
    /// Take the EMA shadow of the preceding block's weights.
    Moment,
    /// Fresh He-normal weights.
    Random,
    /// All-zero weights. Test-only: with the residual family this makes
    /// growth an exact identity; the config parser does not accept it.
    #[doc(hidden)]
    Zero,
}

impl FromStr for InitRule {
    type Err = GrowError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Self::Copy),
            "moment" => Ok(Self::Moment),
            "random" => Ok(Self::Random),
            _ => Err(GrowError::InvalidArgument(format!(
                "unknown init rule `{s}` (copy|moment|random)"
            ))),
        }
    }
}

impl fmt::Display for InitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Copy => "copy",
            Self::Moment => "moment",
            Self::Random => "random",
            Self::Zero => "zero",
        })
    }
}

/// One growth step: at the end of `epoch`, block `block_index` was appended
/// to `stage`, initialized with `init`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthEvent {
    pub epoch: usize,
    pub stage: usize,
    pub block_index: usize,
    pub init: InitRule,
}

fn growth_kind(family: Family) -> BlockKind {
    family.block_kind()
}

/// Bit-copies a width-preserving block. Downsample blocks cannot be
/// duplicated inside a stage; callers fall back to random init.
pub fn init_copy_preceding(preceding: &Block, family: Family) -> Result<Block> {
    if preceding.kind == BlockKind::Downsample {
        return Err(GrowError::DownsamplePreceding);
    }
    Ok(Block {
        kind: growth_kind(family),
        dense: preceding.dense.clone(),
    })
}

/// Exponential moving average of one block's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEnsemble {
    pub stage: usize,
    pub block: usize,
    pub decay: f64,
    pub shadow: Dense,
    pub updates: usize,
}

impl MomentEnsemble {
    /// Starts tracking `source`, with the shadow seeded at its current value.
    pub fn track(stage: usize, block: usize, source: &Dense, decay: f64) -> Self {
        Self {
            stage,
            block,
            decay,
            shadow: source.clone(),
            updates: 0,
        }
    }

    pub fn update(&mut self, source: &Dense) {
        let d = self.decay;
        let shadow = self
            .shadow
            .weight
            .as_mut_slice()
            .iter_mut()
            .chain(self.shadow.bias.iter_mut());
        let src = source.weight.as_slice().iter().chain(&source.bias);
        for (s, w) in shadow.zip(src) {
            *s = d * *s + (1.0 - d) * w;
        }
        self.updates += 1;
    }

    pub fn init_moment(&self, family: Family) -> Result<Block> {
        if self.updates == 0 {
            return Err(GrowError::EnsembleNotUpdated);
        }
        Ok(Block {
            kind: growth_kind(family),
            dense: self.shadow.clone(),
        })
    }
}

/// Appends one block to `stage` of `net`, zero-initializing its momentum
/// buffers. Existing parameters and buffers are left untouched.
///
/// Copy and moment init fall back to random init when the preceding block is
/// a downsample block; the rule actually used is returned with the index of
/// the new block.
pub fn grow(
    net: &mut Network,
    opt: &mut OptState,
    target: &ArchSpec,
    stage: usize,
    rule: InitRule,
    ensemble: Option<&MomentEnsemble>,
    rng: &mut Rng,
) -> Result<(usize, InitRule)> {
    let st = net
        .stages
        .get(stage)
        .ok_or_else(|| GrowError::InvalidArgument(format!("no stage {stage}")))?;
    let goal = target
        .stages
        .get(stage)
        .ok_or_else(|| GrowError::InvalidArgument(format!("target has no stage {stage}")))?;
    if goal.width != st.width {
        return Err(GrowError::Shape(format!(
            "stage {stage} width {} differs from target width {}",
            st.width, goal.width
        )));
    }
    if st.blocks.len() >= goal.blocks {
        return Err(GrowError::StageSaturated(stage));
    }
    let last = st.blocks.len() - 1;
    let preceding = &st.blocks[last];
    let family = net.family;

    let (block, used) = match rule {
        InitRule::Copy if preceding.kind != BlockKind::Downsample => {
            (init_copy_preceding(preceding, family)?, InitRule::Copy)
        }
        InitRule::Moment if preceding.kind != BlockKind::Downsample => {
            let ens = ensemble.ok_or(GrowError::EnsembleNotUpdated)?;
            if (ens.stage, ens.block) != (stage, last) {
                return Err(GrowError::InvalidArgument(format!(
                    "moment ensemble tracks block {}/{}, preceding block is {stage}/{last}",
                    ens.stage, ens.block
                )));
            }
            (ens.init_moment(family)?, InitRule::Moment)
        }
        InitRule::Zero => (
            Block {
                kind: growth_kind(family),
                dense: Dense::zeros(st.width, st.width),
            },
            InitRule::Zero,
        ),
        _ => (
            Block {
                kind: growth_kind(family),
                dense: Dense::he(st.width, st.width, rng),
            },
            InitRule::Random,
        ),
    };

    let flat = net.flat_index(stage, last + 1);
    net.stages[stage].blocks.push(block);
    opt.velocity
        .layers
        .insert(flat, Dense::zeros(goal.width, goal.width));
    Ok((last + 1, used))
}
