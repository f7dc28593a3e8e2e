//! Deformable 3D registration on discretised displacements.
//!
//! The pipeline runs in four stages, each in its own module:
//!
//! 1. [`features`]: modality invariant self-similarity descriptors or
//!    class-weighted one-hot encodings of label maps.
//! 2. [`correlation`]: dense sum-of-squared-differences cost volume over a
//!    discrete displacement lattice, with a per-node argmin.
//! 3. [`convex`]: coupled convex optimisation alternating a penalised
//!    argmin with global smoothing, plus forward/backward symmetrisation.
//! 4. [`instance`]: Adam refinement of a coarse control grid with
//!    smoothing, trilinear upsampling and diffusion regularisation.
//!
//! [`metrics`] warps volumes and scores results (Dice, HD95, TRE, SDlogJ).
//!
//! The crate is `no_std` (it needs `alloc`). The default `std` feature
//! enables rayon parallelism; every parallel loop writes disjoint output and
//! reduces partial sums in a fixed order, so results do not depend on the
//! number of threads.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(any(feature = "parallel", test))]
extern crate std;

pub mod convex;
pub mod correlation;
mod error;
pub mod features;
pub mod filter;
pub mod instance;
mod math;
pub mod metrics;
mod par;
pub mod sample;
pub mod volume;

pub use convex::{coupled_convex, inverse_consistency_residual, symmetrise, ConvexConfig};
pub use correlation::{argmin_field, build_cost_volume, CostVolume, SearchSpace, DISPLACEMENT_BUDGET};
pub use error::{Error, Result};
pub use features::{mind_ssc, seg_onehot_features, FeatureVolume, MindConfig};
pub use filter::box_filter;
pub use instance::{
    adam_minimise, adam_optimise, loss_and_gradient, smooth_and_upsample, AdamOutcome, AdamState,
    InstanceOptConfig, LossGradient, Objective,
};
pub use metrics::{
    cohort_stats, dice, evaluate, hd95, jacobian_determinant, sdlogj, tre, warp_labels,
    warp_volume, CohortSummary, DiceScores, Interp, MetricReport, SurfaceScores, TreScores,
};
pub use sample::trilinear_sample;
pub use volume::{Dims, DisplacementField, LabelVolume, LandmarkSet, Spacing, Volume3D};
