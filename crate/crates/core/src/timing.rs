//! When-to-grow policies.
//!
//! Epochs here are counts of completed training epochs (1..=E_T). A block
//! added at epoch `t` is therefore trained for exactly `E_T - t` epochs,
//! which is what [`average_training_epochs`] averages.
//!
//! Accuracies and the overfitting risk level (ORL) are in **percentage
//! points**: an ORL of 31.35 means train accuracy is 31.35 points above
//! validation accuracy. The FRAGrow interval is scale-sensitive, so passing
//! fractions instead of percents silently changes its behavior.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GrowError, Result};
use crate::morph::GrowthEvent;

/// Exponents are clamped to this magnitude before `exp`.
const EXP_CLAMP: f64 = 700.0;

pub const DEFAULT_ALPHA: f64 = 4.0;
pub const DEFAULT_PATIENCE: usize = 5;
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Train accuracy minus validation accuracy, unclamped.
pub fn orl(train_acc: f64, val_acc: f64) -> Result<f64> {
    for (name, v) in [("train", train_acc), ("validation", val_acc)] {
        if !(0.0..=100.0).contains(&v) {
            return Err(GrowError::InvalidArgument(format!(
                "{name} accuracy {v} outside [0, 100]"
            )));
        }
    }
    Ok(train_acc - val_acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrlReading {
    pub train_acc: f64,
    pub val_acc: f64,
    pub orl: f64,
}

impl OrlReading {
    pub fn new(train_acc: f64, val_acc: f64) -> Result<Self> {
        Ok(Self {
            train_acc,
            val_acc,
            orl: orl(train_acc, val_acc)?,
        })
    }
}

/// Longest growth interval that still leaves `min_finetune` epochs once all
/// `added_blocks` have been inserted.
pub fn i_max(total_epochs: usize, min_finetune: usize, added_blocks: usize) -> Result<f64> {
    if added_blocks == 0 {
        return Err(GrowError::NoGrowth);
    }
    if total_epochs <= min_finetune {
        return Err(GrowError::InvalidArgument(format!(
            "total epochs {total_epochs} must exceed minimum finetune epochs {min_finetune}"
        )));
    }
    Ok((total_epochs - min_finetune) as f64 / added_blocks as f64)
}

/// FRAGrow's dynamic interval `I_max / (1 + e^(alpha - orl))`, always in
/// `(0, I_max)` for finite inputs.
pub fn interval(i_max: f64, alpha: f64, orl: f64) -> f64 {
    let z = (alpha - orl).clamp(-EXP_CLAMP, EXP_CLAMP);
    i_max / (1.0 + z.exp())
}

/// Mean number of epochs the added blocks were trained for.
pub fn average_training_epochs(events: &[GrowthEvent], total_epochs: usize) -> Result<f64> {
    if events.is_empty() {
        return Err(GrowError::NoGrowth);
    }
    if let Some(e) = events.iter().find(|e| e.epoch > total_epochs) {
        return Err(GrowError::InvalidArgument(format!(
            "growth at epoch {} after the last epoch {total_epochs}",
            e.epoch
        )));
    }
    let sum: usize = events.iter().map(|e| total_epochs - e.epoch).sum();
    Ok(sum as f64 / events.len() as f64)
}

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum WhenPolicy {
    /// ORL-driven dynamic interval. With `freeze`, the interval is computed
    /// once from the first reading after each growth and held until the
    /// next growth; otherwise it is recomputed every epoch.
    FraGrow { alpha: f64, freeze: bool },
    /// Fixed period; defaults to `round_half_up(I_max)`.
    Periodic { period: Option<usize> },
    /// Grow when validation accuracy stops improving.
    Convergent { patience: usize, epsilon: f64 },
}

impl WhenPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::FraGrow { .. } => "fragrow",
            Self::Periodic { .. } => "periodic",
            Self::Convergent { .. } => "convergent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyName {
    FraGrow,
    Periodic,
    Convergent,
}

impl FromStr for PolicyName {
    type Err = GrowError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fragrow" => Ok(Self::FraGrow),
            "periodic" => Ok(Self::Periodic),
            "convergent" => Ok(Self::Convergent),
            _ => Err(GrowError::InvalidArgument(format!(
                "unknown policy `{s}` (fragrow|periodic|convergent)"
            ))),
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FraGrow => "fragrow",
            Self::Periodic => "periodic",
            Self::Convergent => "convergent",
        })
    }
}

/// Mutable when-to-grow bookkeeping owned by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub last_growth_epoch: usize,
    pub events: Vec<GrowthEvent>,
    pub remaining: usize,
    pub val_history: Vec<(usize, f64)>,
    /// `None` when there is nothing to grow.
    pub i_max: Option<f64>,
    pub total_epochs: usize,
    pub min_finetune: usize,
    frozen_interval: Option<f64>,
}

impl PolicyState {
    pub fn new(added_blocks: usize, total_epochs: usize, min_finetune: usize) -> Result<Self> {
        if total_epochs <= min_finetune {
            return Err(GrowError::InvalidArgument(format!(
                "total epochs {total_epochs} must exceed minimum finetune epochs {min_finetune}"
            )));
        }
        if added_blocks > total_epochs - min_finetune {
            return Err(GrowError::InvalidArgument(format!(
                "{added_blocks} blocks cannot be added at one per epoch within {} growth epochs",
                total_epochs - min_finetune
            )));
        }
        let i_max = match added_blocks {
            0 => None,
            n => Some(i_max(total_epochs, min_finetune, n)?),
        };
        Ok(Self {
            last_growth_epoch: 0,
            events: Vec::new(),
            remaining: added_blocks,
            val_history: Vec::new(),
            i_max,
            total_epochs,
            min_finetune,
            frozen_interval: None,
        })
    }

    pub fn elapsed(&self, epoch: usize) -> usize {
        epoch.saturating_sub(self.last_growth_epoch)
    }

    /// From this epoch on the remaining blocks must be added one per epoch to
    /// keep at least `min_finetune` epochs at target size.
    pub fn deadline_reached(&self, epoch: usize) -> bool {
        self.remaining > 0 && epoch + self.remaining + self.min_finetune >= self.total_epochs
    }

    pub fn periodic_period(&self) -> Option<usize> {
        self.i_max.map(|m| round_half_up(m).max(1))
    }

    pub fn observe_validation(&mut self, epoch: usize, val_acc: f64) {
        self.val_history.push((epoch, val_acc));
    }

    pub fn record(&mut self, event: GrowthEvent) {
        self.last_growth_epoch = event.epoch;
        self.remaining = self.remaining.saturating_sub(1);
        self.events.push(event);
        self.frozen_interval = None;
    }

    /// The interval FRAGrow compares against at this epoch.
    pub fn fragrow_interval(&mut self, alpha: f64, freeze: bool, reading: &OrlReading) -> Option<f64> {
        let i_max = self.i_max?;
        if freeze {
            Some(
                *self
                    .frozen_interval
                    .get_or_insert_with(|| interval(i_max, alpha, reading.orl)),
            )
        } else {
            Some(interval(i_max, alpha, reading.orl))
        }
    }

    pub fn fragrow_should_grow(
        &mut self,
        epoch: usize,
        reading: &OrlReading,
        alpha: f64,
        freeze: bool,
    ) -> bool {
        if self.remaining == 0 {
            return false;
        }
        let Some(i) = self.fragrow_interval(alpha, freeze, reading) else {
            return false;
        };
        self.elapsed(epoch) as f64 >= i.max(1.0) || self.deadline_reached(epoch)
    }

    pub fn periodic_should_grow(&self, epoch: usize, period: Option<usize>) -> bool {
        if self.remaining == 0 {
            return false;
        }
        let Some(period) = period.or_else(|| self.periodic_period()) else {
            return false;
        };
        self.elapsed(epoch) >= period.max(1) || self.deadline_reached(epoch)
    }

    /// Stagnation: the best validation accuracy of the last `patience`
    /// readings does not beat the best earlier reading by more than
    /// `epsilon`, and at least `patience` epochs have passed since the last
    /// growth.
    pub fn convergent_should_grow(&self, epoch: usize, patience: usize, epsilon: f64) -> bool {
        if self.remaining == 0 {
            return false;
        }
        if self.deadline_reached(epoch) {
            return true;
        }
        let patience = patience.max(1);
        if self.elapsed(epoch) < patience || self.val_history.len() <= patience {
            return false;
        }
        let split = self.val_history.len() - patience;
        let best_before = self.val_history[..split]
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let best_window = self.val_history[split..]
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        best_window <= best_before + epsilon
    }

    pub fn should_grow(&mut self, policy: &WhenPolicy, epoch: usize, reading: &OrlReading) -> bool {
        match *policy {
            WhenPolicy::FraGrow { alpha, freeze } => {
                self.fragrow_should_grow(epoch, reading, alpha, freeze)
            }
            WhenPolicy::Periodic { period } => self.periodic_should_grow(epoch, period),
            WhenPolicy::Convergent { patience, epsilon } => {
                self.convergent_should_grow(epoch, patience, epsilon)
            }
        }
    }
}
