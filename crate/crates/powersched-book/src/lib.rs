//! The powersched guide, compiled.
//!
//! Each module below carries one chapter from `book/src` as its
//! documentation, pulled in verbatim with `include_str!`. Every fenced
//! Rust block in the guide therefore builds (and, unless marked `no_run`,
//! runs) as a doctest of this crate: if a chapter drifts from the library,
//! `cargo test -p powersched-book` fails. Read the rendered book instead
//! of this rustdoc; the chapters assume their book order.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/schedules.md")]
pub mod schedules {}

#[doc = include_str!("../../../book/src/width-scaling.md")]
pub mod width_scaling {}

#[doc = include_str!("../../../book/src/transfer.md")]
pub mod transfer {}

#[doc = include_str!("../../../book/src/sweeps.md")]
pub mod sweeps {}

#[doc = include_str!("../../../book/src/trainer.md")]
pub mod trainer {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
