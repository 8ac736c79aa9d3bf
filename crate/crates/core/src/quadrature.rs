//! Gauss–Hermite rules for Gaussian expectations.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the weight
/// `exp(-x²)`, computed by Newton iteration on the orthonormal recurrence.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Quadrature("rule needs at least one node".into()));
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        // Initial guesses for the largest roots first.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut converged = false;
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Quadrature(format!(
                "Gauss-Hermite root {i} of {n} did not converge"
            )));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}

/// Rule for `E[g(X)]`, `X ~ N(0, sigma²)`: returns (offsets, probabilities).
pub fn gaussian_rule(n: usize, sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (x, w) = gauss_hermite(n)?;
    let scale = 2f64.sqrt() * sigma;
    let norm = PI.sqrt();
    Ok((
        x.iter().map(|v| v * scale).collect(),
        w.iter().map(|v| v / norm).collect(),
    ))
}
