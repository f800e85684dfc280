//! PCA facial makeup prior over 4-channel UV textures.
//!
//! * [`uvtex`]: texture model, PNG I/O and the blend / residual / mirror formulas
//! * [`prior`]: building, evaluating and persisting the linear prior
//! * [`fit`]: losses, gradients and coefficient estimation
//! * [`apps`]: transfer and interpolation
//! * [`metrics`]: RMSE, SSIM, histogram-matching distance and region masks
//! * [`synthetic`]: parametric corpus generator

pub mod apps;
pub mod error;
pub mod fit;
pub mod metrics;
pub mod prior;
pub mod synthetic;
pub mod uvtex;

pub use error::{Error, Result};
pub use fit::{FitConfig, FitResult, LossBreakdown};
pub use prior::{Coefficients, PcaPrior};
pub use uvtex::{FaceMask, MakeupLayer, UvMap};
