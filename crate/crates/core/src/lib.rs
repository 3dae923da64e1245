//! Motion profiles from dashcam footage and maneuver detection over them.
//!
//! A motion profile squeezes a video into a single `T × W` image: every frame
//! contributes one row, the vertical mean of a pixel belt just below the
//! horizon. Lane changes and overtakes leave characteristic traces in that
//! image, which this crate finds either with a small CoordConv one-stage
//! detector ([`nn`]) or with a gradient/Laplacian baseline ([`classic`]).
//! [`eval`] scores both against ground truth.

pub mod classic;
pub mod eval;
pub mod ingest;
pub mod maneuver;
pub mod nn;
pub mod profile;
pub mod synth;

pub use maneuver::{
    event_to_bbox, iou, DetectionBox, ManeuverClass, ManeuverEvent, ProfileDims, VanishingPoint,
};
pub use profile::{MotionProfile, Provenance};

// The guide's code blocks run as doctests, so the book cannot drift from the
// code. One module per chapter keeps failures traceable.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/motion-profiles.md")]
    mod motion_profiles {}
    #[doc = include_str!("../../../book/src/maneuvers.md")]
    mod maneuvers {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/detector.md")]
    mod detector {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/classic.md")]
    mod classic {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
