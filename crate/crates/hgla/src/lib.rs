//! Host-side companion to [`hgla_core`]: the bit-exact tensor file format,
//! parameter serialization with a JSON manifest, wall-clock benchmarking,
//! the verification suite, and the thread-pool window executor behind the
//! CLI's `--threads` flag.

pub mod bench;
pub mod config;
pub mod exec;
pub mod io;
pub mod params_io;
pub mod report;
pub mod verify;
