//! DEX section layout, multidex merging, RGB section images and the image CNN.

mod dex;
mod encoder;
mod image;

pub use dex::{
    adler32, merge_multidex, multidex_rank, parse_dex, read_dex_input, sections_of_files, DexBuilder,
    DexLayout, DexSections, Span, HEADER_LEN,
};
pub use encoder::{if_encode, ImageEncoder, EMBED_DIM};
pub use image::{encode_rgb_image, RgbImage, SectionImage, SectionTag, DEFAULT_OUT_SIZE, DEFAULT_WIDTH};
