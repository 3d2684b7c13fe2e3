//! Synthetic corpus generation, PPM codec, manifest format and the toy
//! tokenizer.

pub mod image;
pub mod ppm;
pub mod synth;
pub mod vocab;

pub use image::Image;
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use synth::{gen_synthetic, Corpus, PairRecord, Shape, SynthSpec, PROMPT_TEMPLATES};
pub use vocab::Vocab;
