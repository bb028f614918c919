//! Recurrent models: the classifier being explained and the building blocks
//! of the perturbation generators.

mod checkpoint;
mod classifier;
mod gru;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use classifier::{
    auroc, batch_steps, classifier_forward, predicted_classes, split_time, target_probability, ClassifierParams,
    ClassifierVars, Readout, SequenceModel,
};
pub use gru::{
    gru_cell_step, gru_forward, gru_forward_batch, time_steps, CellVars, Direction, GruParams, GruVars, GruWeights,
    LinearVars,
};
pub use train::{train_classifier, TrainConfig, TrainReport};

use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("{what}: expected dimensions {expected:?}, got {got:?}")]
    Dimension {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("empty sequence")]
    EmptySequence,
    #[error("class index {class} out of range for {classes} classes")]
    InvalidClass { class: usize, classes: usize },
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
