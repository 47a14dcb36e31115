//! Scalar abstraction for the numeric core.
//!
//! All matrix and state routines are generic over a real scalar `T`; complex
//! values are `num_complex::Complex<T>`. `f32` and `f64` satisfy the bounds
//! out of the box, and the crate root exposes `f64` aliases for the common
//! case. Tolerances in the crate are specified as `f64` constants and
//! converted through [`Scalar::real`].

use num_complex::Complex;
use rand::distributions::uniform::SampleUniform;

/// Real scalar type usable as the matrix element field.
pub trait Scalar:
    nalgebra::RealField
    + num_traits::Num
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + SampleUniform
    + std::iter::Sum<Self>
    + Copy
    + Default
    + Send
    + Sync
{
    /// Lift an `f64` constant into `T`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant not representable in scalar type")
    }

    /// Lossy view back into `f64`, used when emitting results.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Scalar for T where
    T: nalgebra::RealField
        + num_traits::Num
        + num_traits::FromPrimitive
        + num_traits::ToPrimitive
        + SampleUniform
        + std::iter::Sum<T>
        + Copy
        + Default
        + Send
        + Sync
{
}

/// Complex number over the crate scalar.
pub type C<T> = Complex<T>;

/// `cos(angle) + i sin(angle)`.
pub fn cis<T: Scalar>(angle: T) -> C<T> {
    Complex::new(angle.cos(), angle.sin())
}

/// Complex zero.
pub fn czero<T: Scalar>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

/// Complex one.
pub fn cone<T: Scalar>() -> C<T> {
    Complex::new(T::one(), T::zero())
}

/// Purely real complex value.
pub fn creal<T: Scalar>(x: T) -> C<T> {
    Complex::new(x, T::zero())
}

/// Purely imaginary complex value.
pub fn cimag<T: Scalar>(x: T) -> C<T> {
    Complex::new(T::zero(), x)
}

/// |z|^2 without the sqrt.
pub fn cnorm_sqr<T: Scalar>(z: C<T>) -> T {
    z.re * z.re + z.im * z.im
}

/// |z|.
pub fn cabs<T: Scalar>(z: C<T>) -> T {
    cnorm_sqr(z).sqrt()
}
