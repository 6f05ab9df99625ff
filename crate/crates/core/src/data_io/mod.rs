//! Dataset ingestion and model/metric serialization.

mod archive;
mod dataset;
mod idx;
mod metrics;

pub use archive::{load_model, save_model, MatrixEntry, ModelArchive, ModelKind};
pub use dataset::{binarize, load_mnist, mnist_dir, BinaryDataset, Split, MNIST_DIR_ENV};
pub use idx::{parse_idx, read_idx, IdxTensor};
pub use metrics::{MetricRow, MetricsWriter};
