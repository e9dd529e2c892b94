//! Recurrent network engine: two stacked LSTM layers with dropout and a
//! scalar dense head, trained with backpropagation through time on MAE.

mod io;
mod lstm;
mod model;
mod train;

pub(crate) use io::hex_digest;
pub use io::{decode_layers, encode_layers, load_weights, save_weights, Dtype, Layer, FORMAT_VERSION, MAGIC};
pub use lstm::{lstm_param_count, LstmParams};
pub use model::{backward, mae_loss, DenseOwnership, DenseParams, ModelShape, ModelWeights, Params, LAYER_NAMES};
pub use train::{evaluate_mae, train, Adam, TrainConfig};
