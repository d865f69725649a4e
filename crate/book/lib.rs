// The guide's code listings are compiled and run as doctests of this crate,
// one module per chapter, so `cargo test -p l1emc-book` keeps the book honest.
// `mdbook build book` renders the same Markdown.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/codes.md")]
pub mod codes {}
#[doc = include_str!("src/coupling.md")]
pub mod coupling {}
#[doc = include_str!("src/mesoband.md")]
pub mod mesoband {}
#[doc = include_str!("src/broadband.md")]
pub mod broadband {}
#[doc = include_str!("src/limits.md")]
pub mod limits {}
#[doc = include_str!("src/captures.md")]
pub mod captures {}
#[doc = include_str!("src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
