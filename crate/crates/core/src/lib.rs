//! Recurrent encoder-decoder models for string transduction, with the tasks,
//! finite-state reference machines, metrics and training loop around them.

pub mod cells;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod fst;
pub mod graph;
pub mod metrics;
pub mod optim;
pub mod presets;
pub mod rng;
pub mod scalar;
pub mod seq2seq;
pub mod tagger;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod training;
pub mod vocab;

pub use cells::{CellParams, CellState, Variant};
pub use checkpoint::{Checkpoint, ModelKind};
pub use dataset::{DataConfig, Dataset, DatasetSplit, Pair, Split, SplitCounts};
pub use error::{Error, Result};
pub use evaluate::Predictor;
pub use fst::TwoWayFst;
pub use graph::{Eval, Graph, ParamId, ParamStore};
pub use metrics::{MetricsRecord, Outcome};
pub use optim::{AdamConfig, AdamState};
pub use presets::{scaled_config, Preset, PresetConfig};
pub use rng::Rng;
pub use scalar::Scalar;
pub use seq2seq::{ModelConfig, Seq2SeqModel};
pub use tagger::TaggerModel;
pub use tape::{Gradients, Tape, Var};
pub use tasks::Task;
pub use tensor::Tensor;
pub use training::{RunLog, StopReason, TrainConfig};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Seq2Seq = Seq2SeqModel<f64>;
pub type Seq2Seq32 = Seq2SeqModel<f32>;
pub type Tagger = TaggerModel<f64>;
pub type Tagger32 = TaggerModel<f32>;
