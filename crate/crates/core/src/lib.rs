pub mod annotate;
pub mod check;
pub mod corpus;
pub mod emit;
pub mod eval;
pub mod frontend;
pub mod ir;
pub mod lower;
pub mod parse;

pub use ir::*;

/// Any failure between source text and an annotated loop nest.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] parse::ParseError),
    #[error(transparent)]
    Schedule(#[from] parse::ScheduleError),
    #[error(transparent)]
    Lower(#[from] lower::LowerError),
    #[error(transparent)]
    Annotate(#[from] annotate::AnnotateError),
    #[error(transparent)]
    Encode(#[from] frontend::EncodeError),
}
