//! Progressive code-switching for zero-shot cross-lingual transfer.
//!
//! A frozen source-language classifier scores every word by layer-wise
//! relevance. A code-switcher replaces the least relevant words first with
//! dictionary translations, a temperature controlling how many. A
//! curriculum scheduler raises the temperature whenever validation loss
//! converges and replays earlier stages, and the trainer fine-tunes a fresh
//! classifier on the scheduled data.

pub mod codeswitch;
pub mod corpus;
pub mod curriculum;
pub mod error;
pub mod model;
pub mod numerics;
pub mod par;
pub mod relevance;
pub mod trainer;

pub use error::{PcsError, Result};
