pub mod cli;
pub mod data;
pub mod density_ratio;
pub mod engression;
pub mod error;
pub mod learners;
mod linalg;
mod nn;
pub mod pipeline;
pub mod quantile_match;
pub mod simbench;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/engression.md")]
    mod engression {}
    #[doc = include_str!("../../../book/src/quantile_matching.md")]
    mod quantile_matching {}
    #[doc = include_str!("../../../book/src/density_ratio.md")]
    mod density_ratio {}
    #[doc = include_str!("../../../book/src/learners.md")]
    mod learners {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
