//! Fuzzy predicate-logic rule engine over 2-D truth masks.
//!
//! The crate evaluates rules such as "body parts belong to a person" against
//! object-detector outputs and concept-probe masks, producing pixel- and
//! region-level logical-consistency monitors, global consistency scores, and
//! calibration diagnostics. The pipeline is:
//!
//! 1. [`rule`] parses a rule, binds its predicates against a scene's channel
//!    manifest, and lowers it to a DAG of mask kernels.
//! 2. [`logic`] and [`mask`] supply the connective families of the four
//!    supported logics and the windowed spatial kernels.
//! 3. [`monitor`] derives pixel/region alarms and ground truth from the
//!    evaluated formula masks; [`metrics`] scores them.
//! 4. [`concept`] trains linear concept probes on activation stacks and
//!    calibrates them with a full-covariance Laplace posterior.
//! 5. [`datagen`] synthesizes scenes with controllable detection errors so
//!    the whole pipeline can be exercised without a detector in the loop.
//! 6. [`scene`] and [`io`] hold the scene container and the on-disk formats;
//!    the `fuzzmon` binary exposes everything as subcommands.

pub mod concept;
pub mod datagen;
pub mod io;
pub mod logic;
pub mod mask;
pub mod metrics;
pub mod monitor;
pub mod rule;
pub mod scene;

pub use logic::{
    ExistsMode, ForallMode, ImplicationStyle, LogicError, LogicFamily, LogicSystem, TruthValue,
};
pub use mask::{BoundingBox, CloseByParams, MaskError, NbCondMode, TruthMask};
