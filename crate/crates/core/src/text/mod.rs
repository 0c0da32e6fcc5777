//! Annotation records, caption templates and the byte-level tokenizer.

mod bpe;
mod template;

pub use bpe::{BpeTokenizer, TokenSequence, EOS, PAD, SOS};
pub use template::{candidate_queue, AnnotationRecord, Clause, TemplateSpec, LABEL_SLOT};
