//! Moving-plane diagnostics, blow-up rescaling, bubble fits and
//! continuation in α.

mod continuation;
mod fit;
mod moving_plane;
mod rescale;

pub use continuation::{alpha_grid, continue_alpha, ContinuationOptions, ContinuationPath};
pub use fit::{bubble_fit, BubbleFit, FitOptions};
pub use moving_plane::{moving_plane_scan, reflect, reflect_axis, ChartField, FlatField, MovingPlaneReport, Reprojected, ScanOptions};
pub use rescale::{kernel_limit_gap, rescale, RescaledField};
