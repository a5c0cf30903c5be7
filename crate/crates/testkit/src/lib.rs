//! Reference oracles for the dimt test suites.
//!
//! Everything here is written without reference to `dimt-core` so the tests
//! that use it compare two independent routes to the same number. The code is
//! deliberately naive: nested loops, no hashing, no precomputation.

pub mod bleu;
pub mod draw;
pub mod tokens;
