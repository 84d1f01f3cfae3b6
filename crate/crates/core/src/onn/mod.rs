//! Perceptron with optical activations: model, training and detuning sweeps.

mod model;
mod sweep;
mod train;

pub use model::{
    cross_entropy, init_model, Dims, ForwardPass, Gradients, MlpModel, CHECKPOINT_VERSION,
    DERIVATIVE_FLOOR,
};
pub use sweep::{
    detuning_sweep, CoeffLibrary, RunResult, SweepCell, SweepResult, SweepSpec,
    CONVERGENCE_TARGET,
};
pub use train::{
    apply_step, epochs_to_accuracy, evaluate, history_csv, train, train_step, AdamState,
    EpochRecord, Evaluation, TrainConfig,
};
