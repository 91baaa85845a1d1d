//! Toy conditional decoder with video adapters, its autodiff engine and the
//! training loop.

pub mod attention;
pub mod data;
pub mod decoder;
pub mod matrix;
pub mod optim;
pub mod tape;
pub mod train;

pub use attention::{
    base_cross_attention, lora_effective, project_video, video_adapter_attention, AdapterWeights,
    BaseAttentionWeights, HeadWeights, LoraDelta, TextCondition, VideoEmbedding,
};
pub use data::{MuLawTokenizer, TextEmbeddingTable, TrainSample, VideoEncoder};
pub use decoder::{AlphaInit, DecoderConfig, ParamKind, ToyDecoder, TrainMode};
pub use matrix::Matrix;
pub use optim::{AdamW, EarlyStopping, WarmupCosine};
pub use train::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainReport};
