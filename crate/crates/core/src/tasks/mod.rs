//! Training and evaluation harnesses.

mod classify;
mod recon;

pub use classify::{
    accuracy_from_logits, evaluate_accuracy, train_classifier, ClassifierConfig, ClassifierModel, Readout,
    ReadoutKind,
};
pub use recon::{
    reconstruct_adjacency_error, train_reconstruction, ReconConfig, ReconErrors, ReconForward, ReconModel,
    ReconObjective, ReconPoolKind, ReconRun,
};

use alloc::vec::Vec;

/// One row of the metric history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// What [`TrainState::observe`] decided about the monitored loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Waiting,
    Stop,
}

/// Early-stopping bookkeeping plus the metric history.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub patience_counter: usize,
    pub patience: usize,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(patience: usize, seed: u64) -> Self {
        Self {
            epoch: 0,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            patience_counter: 0,
            patience,
            seed,
            history: Vec::new(),
        }
    }

    /// Records `loss` for the current epoch. The counter resets on a strict
    /// improvement and [`Progress::Stop`] is returned once it reaches the
    /// patience.
    pub fn observe(&mut self, loss: f64) -> Progress {
        self.epoch += 1;
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = self.epoch;
            self.patience_counter = 0;
            Progress::Improved
        } else {
            self.patience_counter += 1;
            if self.patience_counter >= self.patience {
                Progress::Stop
            } else {
                Progress::Waiting
            }
        }
    }
}
