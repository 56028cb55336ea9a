//! Exemplar-driven colorization of grayscale images.
//!
//! A pool of color candidates is reduced to one composed reference by picking,
//! per segment of the input, the candidate whose luminance structure matches
//! best. Hint colors sampled from that reference are filtered per segment and
//! spread over the whole image by an affinity-weighted linear solve.

pub mod color;
pub mod descriptors;
pub mod error;
pub mod hints;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod propagation;
pub mod refinement;
pub mod segmentation;

pub use color::{lab_to_rgb, luminance_of, rgb_to_lab, GrayImage, LabImage, Plane, RgbImage};
pub use descriptors::{FeatureGrid, Metric, SegmentDescriptor};
pub use error::{Error, Result};
pub use hints::{HintPoint, HintSet, WarpResult};
pub use propagation::{Propagation, SolverConfig, SolverMeta};
pub use refinement::{Assignment, CandidateSet, ComposedReference, Source};
pub use segmentation::{Mask, SegmentMap};
