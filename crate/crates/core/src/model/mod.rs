//! The network: area features, sequence aggregation, global feature and the
//! classification and segmentation heads.

mod checkpoint;
mod config;
mod layers;
mod network;
mod params;
pub mod seq2seq;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use config::{Aggregation, ModelConfig, Task};
pub use layers::{head, linear, lstm_step, mlp};
pub use network::{
    aggregate_global, area_feature, area_features, classify_forward, forward,
    interpolate_features, interpolation_weights, predict, segment_forward, ForwardOutput,
    PreparedCloud, EXACT_MATCH_EPS,
};
pub use params::ModelParams;
pub use seq2seq::{
    aggregate_sequence, attention_scores, decode_region, encode_sequence, EncoderTrace,
    RegionFeature,
};
