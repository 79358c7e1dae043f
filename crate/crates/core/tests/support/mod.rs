//! Shared by the integration tests and the acceptance target; each test
//! binary uses a different subset.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
