//! Fibrous-cap (FC) segmentation and quantification for intravascular OCT.
//!
//! The crate covers the full desk-scale pipeline over polar `(r, θ)` pullbacks:
//!
//! 1. [`pullback`] – frame/pullback/mask data model, `.ivp` + sidecar I/O, PGM masks,
//!    Cartesian rendering.
//! 2. [`preprocess`] – guidewire shadow detection, lumen segmentation, A-line pixel
//!    shifting, crop to 200 rows and 7×7 Gaussian filtering.
//! 3. [`augment`] – spiral-offset reframing and stochastic flip/scale/shift.
//! 4. [`tensornet`] – a small dense tensor engine with analytic backward passes and
//!    the SegResNet graph.
//! 5. [`train`] – Dice loss, AdamW, early-stopped training, transfer initialization,
//!    pullback-level folds and plurality voting.
//! 6. [`postprocess`] – thresholding, disk opening and 4-connected hole filling.
//! 7. [`quantify`] – cap thickness, arc, area, surface area, TCFA flag and heatmap export.
//! 8. [`stats`] – pixel metrics, fold aggregation, regression and Bland–Altman agreement.
//! 9. [`phantom`] – synthetic pullbacks with exact ground truth.
//! 10. [`cli`] – the `fibcap` workflow commands.
//!
//! Runnable examples for each stage live in `examples/`.

pub mod augment;
pub mod cli;
mod error;
pub mod phantom;
pub mod postprocess;
pub mod preprocess;
pub mod pullback;
pub mod quantify;
pub mod stats;
pub mod tensornet;
pub mod train;

pub use error::{Error, Result};
