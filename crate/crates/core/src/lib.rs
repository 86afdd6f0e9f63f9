//! Black-box REST API fuzzing with a post-processing security phase.
//!
//! A base fuzzer builds a pool of executed test cases from an OpenAPI
//! schema. The security phase then slices and recombines those tests into
//! scenarios for nine oracles (authentication, authorization, information
//! leakage and injection) and reports every confirmed fault together with
//! a test that reproduces it.

pub mod auth;
pub mod corpus;
pub mod http;
pub mod oracle;
pub mod report;
pub mod schema;
