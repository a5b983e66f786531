//! The guide under `book/`, one module per chapter, so `cargo test` runs
//! every Rust snippet in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../book/src/cohort.md")]
pub mod cohort {}
#[doc = include_str!("../../../book/src/features.md")]
pub mod features {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/shap.md")]
pub mod shap {}
#[doc = include_str!("../../../book/src/aggregation.md")]
pub mod aggregation {}
#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
#[doc = include_str!("../../../book/src/reproducibility.md")]
pub mod reproducibility {}
