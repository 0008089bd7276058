//! Outlier detection for periodic light curves: a random forest produces
//! class-vote vectors, a Bayesian network over the votes gives each object a
//! joint probability, and the least probable objects are ranked as outlier
//! candidates.

pub mod error;
pub mod features;
pub mod forest;
pub mod lightcurve;
pub mod pipeline;
pub mod synthetic;
pub mod votemodel;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod chapter0 {}
    #[doc = include_str!("../../../book/src/light-curves.md")]
    mod chapter1 {}
    #[doc = include_str!("../../../book/src/forest-votes.md")]
    mod chapter2 {}
    #[doc = include_str!("../../../book/src/vote-model.md")]
    mod chapter3 {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod chapter4 {}
    #[doc = include_str!("../../../book/src/triage.md")]
    mod chapter5 {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod chapter6 {}
}
