//! Scalar abstraction shared by the geometry and optimizer kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, NumAssign};

/// Real number type the numeric kernels are generic over.
///
/// Implemented for `f32` and `f64`. The planner itself runs on `f64`; the
/// generic kernels exist so that geometry and least-squares code can be
/// exercised at reduced precision as well.
pub trait Real:
    Float + FloatConst + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only for types that cannot
    /// represent finite doubles at all.
    fn lit(x: f64) -> Self {
        Self::from(x).expect("scalar literal")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine-precision-scaled tolerance used by iterative geometry code.
    fn geom_eps() -> Self;
}

impl Real for f64 {
    fn geom_eps() -> Self {
        1e-12
    }
}

impl Real for f32 {
    fn geom_eps() -> Self {
        1e-6
    }
}

/// Wraps an angle to `[-π, π)`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let two_pi = T::TAU();
    let pi = T::PI();
    let mut a = (theta + pi) % two_pi;
    if a < T::zero() {
        a += two_pi;
    }
    let out = a - pi;
    // `%` can land exactly on +π after rounding.
    if out >= pi {
        out - two_pi
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        let pi = std::f64::consts::PI;
        assert_eq!(wrap_angle(pi), -pi);
        assert_eq!(wrap_angle(-pi), -pi);
        assert!((wrap_angle(3.0 * pi + 0.1) - (-pi + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(-0.2f64) + 0.2).abs() < 1e-15);
        assert!((wrap_angle(2.0f32 * std::f32::consts::PI) - 0.0).abs() < 1e-6);
    }
}
