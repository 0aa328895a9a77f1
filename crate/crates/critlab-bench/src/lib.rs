//! Shared fixtures for the benchmark targets.

use critlab_core::{Activation, Dataset, NetworkShape, ParamVector};

/// Widths (2,3,3,3,1): the configuration most measurements run on.
pub fn reference_shape() -> NetworkShape {
    NetworkShape::new(vec![2, 3, 3, 3, 1]).expect("valid widths")
}

/// The two-sample dataset (1,0) -> 1, (0,1) -> 3.
pub fn reference_data() -> Dataset {
    Dataset::new(
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![1.0], vec![3.0]],
    )
    .expect("valid dataset")
}

/// A wider, deeper configuration for scaling measurements.
pub fn wide_shape() -> NetworkShape {
    NetworkShape::new(vec![3, 8, 8, 8, 2]).expect("valid widths")
}

pub fn wide_data() -> Dataset {
    Dataset::random(6, 3, 2, 5).expect("valid dataset")
}

pub fn point(shape: &NetworkShape, seed: u64) -> ParamVector {
    ParamVector::random(shape, seed, 0.6)
}

pub const ACT: Activation = Activation::Tanh;
