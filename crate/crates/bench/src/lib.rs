//! Shared fixtures for the benchmarks.

use std::f64::consts::PI;

use bitensor_core::wavefield::{GridSpec, WaveField};
use num_complex::Complex64;

/// Smooth symmetrized two-argument field on a (2π)^4 box.
pub fn pair_field(points: usize) -> WaveField {
    let spec = GridSpec::uniform(2, 2, 2.0 * PI, points).expect("grid fits the memory cap");
    WaveField::from_fn(spec, |x| {
        let a = Complex64::from_polar(1.0, x[0] + x[1] - 2.0 * x[3]);
        let b = Complex64::from_polar(0.4, 2.0 * x[0] - x[2]);
        a + b
    })
    .expect("finite values")
    .symmetrize()
}

/// Right-moving null plane wave with one argument.
pub fn null_wave(points: usize) -> WaveField {
    let spec = GridSpec::uniform(1, 2, 2.0 * PI, points).expect("grid fits the memory cap");
    WaveField::plane_wave(spec, &[vec![2.0, 2.0]], None, false).expect("commensurate wavevector")
}
