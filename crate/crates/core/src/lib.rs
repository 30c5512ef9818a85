//! prock-core: predictive process monitoring over event logs and knowledge graphs.
//!
//! The pipeline has two halves. The data half turns relational CSV dumps into
//! an event log plus a knowledge graph ([`ingest`]), or loads both directly
//! from the plain-text formats in [`data`]. The model half stacks a
//! multi-relational graph convolutional encoder ([`gnn`]) under an event
//! embedding layer ([`embed`]) and a mean-pooling sequence head ([`head`]),
//! trains the whole thing end to end with a tape-based reverse-mode autodiff
//! engine ([`autodiff`], [`train`]), and scores the result ([`metrics`]).
//!
//! [`synth`] generates benchmark datasets whose label signal sits a known
//! number of hops away in the graph, which is the quickest way to see the
//! encoder earn its keep.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod embed;
pub mod gnn;
pub mod head;
pub mod ingest;
pub mod metrics;
pub mod net;
pub mod synth;
pub mod train;
pub mod tensor;

pub use tensor::Tensor;
