//! Exact gradients of loss functions: the parameter-shift rule for rotation
//! angles and central differences for the data weights (whose controlled
//! generators have more than two eigenvalue gaps, so the two-point shift rule
//! does not apply).
//!
//! Parameters are addressed by a flat index: `0..theta_len` are rotation
//! angles, `theta_len..theta_len+phi_len` are data weights.

use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::scalar::Scalar;

/// Default central-difference step; balances truncation against round-off at
/// double precision.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Anything that maps a parameter vector to a scalar loss.
pub trait LossFunction<T: Scalar> {
    fn theta_len(&self) -> usize;
    fn phi_len(&self) -> usize;
    fn evaluate(&self, params: &ParameterVector<T>) -> Result<T>;

    fn param_count(&self) -> usize {
        self.theta_len() + self.phi_len()
    }
}

/// How to differentiate one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradMethod {
    ParameterShift,
    CentralDifference { step: f64 },
}

/// A single-derivative request against a flat parameter index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientRequest {
    pub index: usize,
    pub method: GradMethod,
}

fn shifted<T: Scalar>(params: &ParameterVector<T>, index: usize, delta: T) -> ParameterVector<T> {
    let mut out = params.clone();
    if index < out.theta.len() {
        out.theta[index] += delta;
    } else {
        let phi = out.phi.as_mut().expect("phi index without phi vector");
        phi[index - out.theta.len()] += delta;
    }
    out
}

fn check_index<T: Scalar>(
    f: &impl LossFunction<T>,
    params: &ParameterVector<T>,
    index: usize,
) -> Result<()> {
    if index >= f.param_count() {
        return Err(Error::InvalidArgument(format!(
            "parameter index {index} out of range {}",
            f.param_count()
        )));
    }
    if index >= f.theta_len() && params.phi.is_none() {
        return Err(Error::InvalidArgument(
            "phi index but parameters carry no phi vector".into(),
        ));
    }
    Ok(())
}

/// Exact derivative of a rotation angle under the `e^{-i theta P/2}`
/// convention: `[L(theta + pi/2) - L(theta - pi/2)] / 2`.
pub fn param_shift<T: Scalar>(
    f: &impl LossFunction<T>,
    params: &ParameterVector<T>,
    index: usize,
) -> Result<T> {
    check_index(f, params, index)?;
    if index >= f.theta_len() {
        return Err(Error::InvalidArgument(
            "parameter-shift rule only applies to rotation angles; use central differences for phi"
                .into(),
        ));
    }
    let half_pi = T::frac_pi_2();
    let plus = f.evaluate(&shifted(params, index, half_pi))?;
    let minus = f.evaluate(&shifted(params, index, -half_pi))?;
    Ok((plus - minus) * T::lit(0.5))
}

/// Two-point central difference `[L(+step) - L(-step)] / (2 step)`.
pub fn central_diff<T: Scalar>(
    f: &impl LossFunction<T>,
    params: &ParameterVector<T>,
    index: usize,
    step: T,
) -> Result<T> {
    check_index(f, params, index)?;
    if step <= T::zero() {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let plus = f.evaluate(&shifted(params, index, step))?;
    let minus = f.evaluate(&shifted(params, index, -step))?;
    Ok((plus - minus) / (T::lit(2.0) * step))
}

/// Dispatch on a [`GradientRequest`].
pub fn gradient_at<T: Scalar>(
    f: &impl LossFunction<T>,
    params: &ParameterVector<T>,
    request: GradientRequest,
) -> Result<T> {
    match request.method {
        GradMethod::ParameterShift => param_shift(f, params, request.index),
        GradMethod::CentralDifference { step } => {
            central_diff(f, params, request.index, T::lit(step))
        }
    }
}

/// Full gradient: parameter shift over every rotation angle, central
/// differences (default step) over every data weight present.
pub fn full_gradient<T: Scalar>(
    f: &impl LossFunction<T>,
    params: &ParameterVector<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(f.param_count());
    for idx in 0..f.theta_len() {
        out.push(param_shift(f, params, idx)?);
    }
    for idx in f.theta_len()..f.param_count() {
        out.push(central_diff(f, params, idx, T::lit(DEFAULT_FD_STEP))?);
    }
    Ok(out)
}
