//! API-sequence tokenization and the transformer sequence encoder.

mod encoder;
mod vocab;

pub use encoder::{gsf_encode, EncoderConfig, SequenceEncoder, EMBED_DIM, MAX_POSITIONS};
pub use vocab::{encode_sequence, fit_vocab, read_sequences, EncodedSeq, Vocab, CLS, PAD, UNK};
