//! Möbius transformations of R^n ∪ {∞} and the Kleinian groups they generate.

mod group;
mod map;

pub use group::{
    dilation_deriv_spherical, FundamentalDomain, GroupElement, GroupKind, KleinianGroup, PoincareSum, DEDUP_TOL,
};
pub use map::{apply, compose, deriv_euclidean, deriv_spherical, random_rotation, MoebiusMap, Point};

/// Free-function form of [`KleinianGroup::poincare_partial_sum`].
pub fn poincare_partial_sum(group: &KleinianGroup, s: f64, x: &[f64], cutoff: usize) -> crate::Result<PoincareSum> {
    group.poincare_partial_sum(s, x, cutoff)
}

/// Free-function form of [`KleinianGroup::exponent_estimate`].
pub fn exponent_estimate(group: &KleinianGroup) -> crate::Result<f64> {
    group.exponent_estimate()
}
