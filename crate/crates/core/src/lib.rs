//! Time-domain artist and singer classification from raw waveforms.

pub mod audio;
pub mod checkpoint;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod head;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use audio::{decode_wav, segment_track, AudioTrack, Channel, Segment, SAMPLE_RATE};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainMeta};
pub use encoder::{receptive_field, EncoderConfig, EncoderParams};
pub use error::{Error, Result};
pub use head::{predict, BottleneckVector, HeadBlock, HeadConfig, HeadParams};
pub use manifest::{load_manifest, save_manifest, split_by_song, DatasetManifest, ManifestEntry, Split, SplitRatios};
pub use model::{GradTape, Model, ModelConfig};
pub use tensor::{Scalar, Tensor};
pub use trainer::{train, AdamState, EarlyStopping, History, TrainConfig, TrainOutcome};
pub use eval::{evaluate, song_vote, ConfusionMatrix, EvalReport, Level, PredictionRecord};
pub use embed::{extract_embeddings, tsne, EmbeddingSet, Granularity, TsneConfig, TsneResult};
pub use synth::{toy_classes, toy_tracks, write_toy_dataset, ToyConfig};
