pub mod decoder;
pub mod io;
pub mod lexicon;
pub mod lm;
pub mod metrics;
pub mod s2s_adapter;
pub mod simulate;
pub mod tokenizer;
