//! Dataset records, validation, synthetic generation and splitting.

mod generator;
mod records;
mod schema;
mod split;

pub use generator::{
    carrier_sentences, class_phrases, generate, generate_with_lexicon, keep_spans, medication_mentions,
    ClassDistribution, GeneratorConfig, MEDICATION_NAMES,
};
pub use records::{
    from_json_line, parse_dataset, read_dataset_from, to_json_line, write_dataset, write_dataset_to, DataPoint,
    Medication, Utterance,
};
pub use schema::{Attribute, Speaker, ATTRIBUTES, SPEAKERS};
pub use split::{split, split_sizes};
