//! Positional encodings, the conditioned radiance MLP and the source-image
//! feature extractor.

mod checkpoint;
mod extractor;
mod harmonic;
mod radiance;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use extractor::{feature_extract, ExtractorConfig, FeatureExtractor, FeatureField, RAW_CHANNELS};
pub use harmonic::{encode_rows, encoded_len, harmonic_encode, HarmonicConfig};
pub use radiance::{field_forward, FieldConfig, RadianceField, DENSITY_BIAS_INIT};
