mod attention;
mod conv;
mod dropout;
mod elementwise;
mod gather;
mod linear;
mod loss;
mod lstm;
mod norm;
mod pool;

use serde::{Deserialize, Serialize};

pub use norm::BatchNormStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

/// Convolution padding. `Same` pads symmetrically; when the total padding
/// is odd the extra zero goes on the right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}
