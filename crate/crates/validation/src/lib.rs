//! Holds the `acceptance` test target only; see `tests/acceptance.rs`.
//!
//! Kept in its own package so that it runs after every other test target.
