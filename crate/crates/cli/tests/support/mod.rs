//! Shared oracles for the acceptance suite.
//!
//! The adaptive Dormand-Prince integrator below is the independent route for
//! the Bernoulli time coefficient: it never touches the production bracket
//! (which evaluates `expm1`-based closed forms), only the differential
//! equation itself.

/// Adaptive RK45 (Dormand-Prince 5(4)) from `t0` to `t1` (either direction).
pub fn rk45(f: &dyn Fn(f64, f64) -> f64, t0: f64, y0: f64, t1: f64, tol: f64) -> f64 {
    // Butcher tableau.
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    // 5th-order weights equal the last A row; the 4th-order weights give the
    // embedded error estimate.
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let span = t1 - t0;
    if span == 0.0 {
        return y0;
    }
    let direction = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut h = span / 64.0;
    let mut steps = 0u32;

    while (t1 - t) * direction > 0.0 {
        if (t + h - t1) * direction > 0.0 {
            h = t1 - t;
        }
        let mut k = [0.0f64; 7];
        k[0] = f(t, y);
        for stage in 0..6 {
            let mut yi = y;
            for (j, &kj) in k.iter().enumerate().take(stage + 1) {
                yi += h * A[stage][j] * kj;
            }
            k[stage + 1] = f(t + C[stage] * h, yi);
        }
        let mut y5 = y;
        let mut y4 = y;
        for j in 0..7 {
            y5 += h * B5[j] * k[j];
            y4 += h * B4[j] * k[j];
        }
        let scale = tol * (1.0 + y.abs().max(y5.abs()));
        let err = (y5 - y4).abs() / scale;
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
        h *= factor;
        steps += 1;
        assert!(steps < 2_000_000, "rk45 failed to converge");
    }
    y
}

/// Independent evaluation of the time coefficient `a(t)` by backward
/// numerical integration of its defining ODE
/// `a' + (1-gamma) a^{gamma/(gamma-1)} + mu a = 0`, `a(T) = terminal`.
///
/// A zero terminal value makes the raw equation singular (the power has a
/// negative exponent), so that case integrates the equivalent substituted
/// variable `beta = a^{1/(1-gamma)}`, whose equation
/// `beta' = -1 - mu beta/(1-gamma)` is regular; positive terminal values
/// integrate the Bernoulli equation literally.
pub fn a_coefficient_by_integration(mu: f64, gamma: f64, t: f64, horizon: f64, terminal: f64) -> f64 {
    let tol = 1e-12;
    if terminal == 0.0 {
        let f = |_s: f64, beta: f64| -1.0 - mu * beta / (1.0 - gamma);
        let beta = rk45(&f, horizon, 0.0, t, tol);
        beta.powf(1.0 - gamma)
    } else {
        let f = |_s: f64, a: f64| -mu * a - (1.0 - gamma) * a.powf(gamma / (gamma - 1.0));
        rk45(&f, horizon, terminal, t, tol)
    }
}
