//! HTTP service, completion provider and command-line front end for the
//! tables-to-answers pipeline in `tablerag-core`.

pub mod api;
pub mod cli;
pub mod http_provider;
