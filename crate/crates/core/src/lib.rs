//! Error probabilities of conformance tests that tell a reference lossy
//! channel from a defective one, with classical and twin-beam probes.
//!
//! The guide in `book/` walks through each module with runnable examples.

pub mod decision;
pub mod distributions;
pub mod error;
pub mod monte_carlo;
pub mod photon;
pub mod quadrature;
pub mod reweighting;
pub mod special;
pub mod strategies;

pub use distributions::{Histogram, TransmittanceDistribution};
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/photon-statistics.md")]
    mod photon_statistics {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/decision.md")]
    mod decision {}
    #[doc = include_str!("../../../book/src/monte-carlo.md")]
    mod monte_carlo {}
    #[doc = include_str!("../../../book/src/reweighting.md")]
    mod reweighting {}
}
