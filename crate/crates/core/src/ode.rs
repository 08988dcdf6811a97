//! Explicit Runge–Kutta integrators for first-order systems y' = f(s, y).

/// Why an integration stopped early.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeFailure {
    /// The right-hand side refused the state (it left the chart) at `s`.
    LeftDomain(f64),
    /// Step size underflowed at `s`.
    StepFailure(f64),
}

/// Right-hand side: writes f(y) into `dy`, returning false if `y` is not admissible.
pub trait Rhs: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64], dy: &mut [f64]) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rtol: 1e-12,
            atol: 1e-12,
        }
    }
}

// Dormand–Prince 5(4) tableau; the systems here are autonomous so the nodes c_i are unused.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Adaptive Dormand–Prince integrator.
pub struct DormandPrince<'a, F: Rhs> {
    rhs: &'a F,
    tol: Tolerance,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    next: Vec<f64>,
    /// Step size carried between calls to [`DormandPrince::advance`].
    pub h: f64,
    /// Attempted steps allowed per call before giving up with `StepFailure`.
    pub max_steps: usize,
}

impl<'a, F: Rhs> DormandPrince<'a, F> {
    pub fn new(rhs: &'a F, tol: Tolerance) -> Self {
        let n = rhs.dim();
        DormandPrince {
            rhs,
            tol,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            next: vec![0.0; n],
            h: 0.0,
            max_steps: usize::MAX,
        }
    }

    fn stage(&mut self, y: &[f64], h: f64, coeffs: &[f64], out: usize) -> bool {
        for i in 0..y.len() {
            let mut acc = 0.0;
            for (j, c) in coeffs.iter().enumerate() {
                acc += c * self.k[j][i];
            }
            self.tmp[i] = y[i] + h * acc;
        }
        let (tmp, k) = (&self.tmp, &mut self.k[out]);
        self.rhs.eval(tmp, k)
    }

    /// Integrates `y` from `s0` to `s1` in place; `s1 < s0` is allowed.
    pub fn advance(&mut self, s0: f64, s1: f64, y: &mut [f64]) -> Result<(), OdeFailure> {
        let span = s1 - s0;
        if span == 0.0 {
            return Ok(());
        }
        let dir = span.signum();
        if self.h == 0.0 {
            self.h = 1e-2 * span.abs().min(1.0);
        }
        let mut s = s0;
        if !self.rhs.eval(y, &mut self.k[0]) {
            return Err(OdeFailure::LeftDomain(s));
        }
        let h_min = 1e-14 * span.abs().max(1.0);
        let mut attempts = 0usize;
        loop {
            attempts += 1;
            if attempts > self.max_steps {
                return Err(OdeFailure::StepFailure(s));
            }
            let remaining = (s1 - s) * dir;
            if remaining <= 1e-15 * span.abs() {
                return Ok(());
            }
            let last = self.h >= remaining;
            let h = dir * self.h.min(remaining);
            let ok = self.stage(y, h, &[A21], 1)
                && self.stage(y, h, &[A31, A32], 2)
                && self.stage(y, h, &[A41, A42, A43], 3)
                && self.stage(y, h, &[A51, A52, A53, A54], 4)
                && self.stage(y, h, &[A61, A62, A63, A64, A65], 5)
                && self.stage(y, h, &[B1, 0.0, B3, B4, B5, B6], 6);
            if !ok {
                // Probe a shorter step before declaring that the path left the domain.
                if self.h.abs() < h_min {
                    return Err(OdeFailure::LeftDomain(s));
                }
                self.h *= 0.25;
                continue;
            }
            self.next.copy_from_slice(&self.tmp);
            let mut err: f64 = 0.0;
            for i in 0..y.len() {
                let e = h
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
                let scale = self.tol.atol + self.tol.rtol * y[i].abs().max(self.next[i].abs());
                err = err.max((e / scale).abs());
            }
            if err <= 1.0 {
                s = if last { s1 } else { s + h };
                y.copy_from_slice(&self.next);
                self.k.swap(0, 6);
                let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    self.h *= grow;
                }
            } else {
                self.h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if self.h < h_min {
                    return Err(OdeFailure::StepFailure(s));
                }
            }
        }
    }
}

/// Fixed-step explicit midpoint rule, second order.
pub fn midpoint<F: Rhs>(rhs: &F, s0: f64, s1: f64, steps: usize, y: &mut [f64]) -> Result<(), OdeFailure> {
    let n = rhs.dim();
    let h = (s1 - s0) / steps as f64;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut mid = vec![0.0; n];
    for step in 0..steps {
        let s = s0 + step as f64 * h;
        if !rhs.eval(y, &mut k1) {
            return Err(OdeFailure::LeftDomain(s));
        }
        for i in 0..n {
            mid[i] = y[i] + 0.5 * h * k1[i];
        }
        if !rhs.eval(&mid, &mut k2) {
            return Err(OdeFailure::LeftDomain(s));
        }
        for i in 0..n {
            y[i] += h * k2[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator;

    impl Rhs for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, y: &[f64], dy: &mut [f64]) -> bool {
            dy[0] = y[1];
            dy[1] = -y[0];
            true
        }
    }

    struct Bounded;

    impl Rhs for Bounded {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, y: &[f64], dy: &mut [f64]) -> bool {
            dy[0] = 1.0;
            y[0] < 0.5
        }
    }

    #[test]
    fn harmonic_oscillator_is_accurate() {
        let mut y = [1.0, 0.0];
        let mut dp = DormandPrince::new(&Oscillator, Tolerance::default());
        dp.advance(0.0, 10.0, &mut y).unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-10);
        assert!((y[1] + 10f64.sin()).abs() < 1e-10);
        dp.advance(10.0, 0.0, &mut y).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10 && y[1].abs() < 1e-10);
    }

    #[test]
    fn leaving_the_domain_is_reported() {
        let mut y = [0.0];
        let mut dp = DormandPrince::new(&Bounded, Tolerance::default());
        let err = dp.advance(0.0, 1.0, &mut y).unwrap_err();
        assert!(matches!(err, OdeFailure::LeftDomain(s) if s <= 0.5));
    }

    #[test]
    fn midpoint_converges_at_second_order() {
        let err = |n| {
            let mut y = [1.0, 0.0];
            midpoint(&Oscillator, 0.0, 1.0, n, &mut y).unwrap();
            (y[0] - 1f64.cos()).abs()
        };
        let ratio = err(64) / err(128);
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }
}
