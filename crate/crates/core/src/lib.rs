//! Regional overdose-risk analytics on synthetic prescription data.
//!
//! The crate covers the whole batch side of the pipeline:
//!
//! * [`geography`]: ZCTA-within-county region hierarchy and GeoJSON I/O.
//! * [`cohort`]: deterministic synthetic patients, fills and outcomes.
//! * [`features`]: the 20-variable weekly feature vector.
//! * [`model`]: boosted regression trees (inference, training, model files).
//! * [`explain`]: exact path-dependent tree SHAP plus a brute-force oracle.
//! * [`scoring`]: scaled risk scores and attributions per patient-week.
//! * [`aggregate`]: privacy-suppressed region-week rollups, the statewide
//!   decile baseline, and week-over-week change decomposition.
//! * [`store`]: the immutable on-disk aggregate store read by the service.
//! * [`training`]: outcome labels, the patient split, validation summaries.
//! * [`pipeline`]: every stage chained in memory.
//!
//! ```
//! use regionrisk::model::{Tree, TreeEnsemble};
//! use regionrisk::explain::tree_shap;
//!
//! let stump = Tree::split(0, 0.5, Tree::leaf(0.0, 50.0), Tree::leaf(1.0, 50.0));
//! let model = TreeEnsemble::new(vec![stump], 0.0).unwrap();
//! let mut x = [0.0; 20];
//! x[0] = 0.7;
//! let shap = tree_shap(&model, &x).unwrap();
//! assert_eq!(shap.base_value, 0.5);
//! assert_eq!(shap.phi[0], 0.5);
//! ```

pub mod aggregate;
pub mod cohort;
pub mod error;
pub mod explain;
pub mod features;
pub mod geography;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scoring;
pub mod store;
pub mod training;

pub use error::{Error, Result};

/// Logistic link.
pub fn sigmoid(margin: f64) -> f64 {
    if margin >= 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    }
}
