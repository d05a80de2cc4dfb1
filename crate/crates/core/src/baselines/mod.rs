//! Native tabular baselines: majority class, multinomial softmax regression
//! and a random forest, all over the same one-hot encoding.

pub mod encode;
pub mod forest;
pub mod majority;
pub mod softmax;

pub use encode::{encode, ColumnKey, EncodedMatrix, Encoder};
pub use forest::{fit_forest, ForestModel, ForestParams};
pub use majority::{fit_majority, MajorityModel};
pub use softmax::{fit_softmax, SoftmaxModel, SoftmaxParams};
