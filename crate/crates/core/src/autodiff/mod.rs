//! Dense f64 arrays, a dynamic reverse-mode tape, and AdamW.

pub mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use optim::{AdamConfig, AdamW};
pub use tape::{OpName, Tape, Var};
pub use tensor::{DiffTensor, ParamId, ParamStore};
