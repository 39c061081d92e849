//! Tables-to-answers question answering over enterprise tables.
//!
//! A user query flows through four stages, each backed by one LLM prompt
//! issued through [`gateway::LlmGateway`]:
//!
//! 1. an access profile ([`auth::MinimalUserProfile`]) is built once per
//!    session and gates every table read,
//! 2. the [`router`] classifies the query, rewrites it against stored
//!    prototype questions and picks candidate tables,
//! 3. the [`retriever`] asks for SQL, validates it and runs it against the
//!    embedded [`store`], staging the result,
//! 4. the [`answer`] composer turns the staged table into a natural-language
//!    answer, which the [`scorer`] then checks with five deterministic flags.
//!
//! [`pipeline`] wires the stages together with per-stage timing and call
//! accounting, [`config`] assembles it from files, and [`suite`] holds the
//! synthetic query suite used for offline replay.

pub mod answer;
pub mod auth;
pub mod catalog;
pub mod clock;
pub mod config;
pub mod gateway;
pub mod pipeline;
pub mod retriever;
pub mod router;
pub mod scorer;
pub mod store;
pub mod suite;
pub mod text;

pub use clock::{Clock, SystemClock, TickClock};
