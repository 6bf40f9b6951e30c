pub mod cli;
pub mod correspondence;
pub mod dynamics;
pub mod error;
pub mod kms;
pub mod master;
pub mod multiworld;
pub mod operator;
pub mod perturbative;
pub mod qhe;
pub mod random;
pub mod report;

pub use error::{Error, Result};

/// The guide, one module per chapter.
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/conventions.md")]
    pub mod conventions {}
    #[doc = include_str!("../../../book/src/states.md")]
    pub mod states {}
    #[doc = include_str!("../../../book/src/evolution.md")]
    pub mod evolution {}
    #[doc = include_str!("../../../book/src/perturbation.md")]
    pub mod perturbation {}
    #[doc = include_str!("../../../book/src/rates.md")]
    pub mod rates {}
    #[doc = include_str!("../../../book/src/kms.md")]
    pub mod kms {}
    #[doc = include_str!("../../../book/src/patterns.md")]
    pub mod patterns {}
    #[doc = include_str!("../../../book/src/heat-engine.md")]
    pub mod heat_engine {}
    #[doc = include_str!("../../../book/src/correspondence.md")]
    pub mod correspondence {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
