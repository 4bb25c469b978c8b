//! Binary manifest features, PCA reduction and the tabular MLP encoder.

mod encoder;
mod features;
mod pca;

pub use encoder::{tf_encode, tf_encode_raw, TabularEncoder, EMBED_DIM};
pub use features::{build_feature_matrix, read_tabular_csv, write_tabular_csv, BinaryFeatureMatrix, TabularCsv};
pub use pca::{fit_pca, fit_pca_real, pca_transform, variance_spectrum, PcaModel, DEFAULT_TARGET_RATIO};
