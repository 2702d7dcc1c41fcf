//! Model types, static and behavioral verification, and the compiler that
//! turns subject behavior diagrams into executable FSM bundles.

pub mod canonical;
pub mod compile;
pub mod ident;
pub mod model;
pub mod validate;

pub use ident::{Ident, InvalidIdent};
