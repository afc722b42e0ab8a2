use crate::{Error, Result};

/// One classical fourth-order Runge–Kutta step.
///
/// A non-finite stage or result is reported as [`Error::Integration`] with
/// `step = 0`; multi-step drivers rewrite the step index.
pub fn rk4_step<F>(field: F, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("RK4 step must be positive, got {dt}")));
    }
    let n = x.len();
    let stage = |base: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(b, k)| b + h * k).collect()
    };
    let k1 = field(x)?;
    check_len(&k1, n)?;
    let k2 = field(&stage(x, &k1, 0.5 * dt))?;
    check_len(&k2, n)?;
    let k3 = field(&stage(x, &k2, 0.5 * dt))?;
    check_len(&k3, n)?;
    let k4 = field(&stage(x, &k3, dt))?;
    check_len(&k4, n)?;
    let out: Vec<f64> = (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            step: 0,
            reason: "non-finite state".into(),
        });
    }
    Ok(out)
}

fn check_len(k: &[f64], n: usize) -> Result<()> {
    if k.len() != n {
        return Err(Error::DimensionMismatch {
            context: "vector field output",
            expected: n,
            got: k.len(),
        });
    }
    Ok(())
}

/// Integrates from `x0` with `substeps` RK4 steps between consecutive
/// observations and returns `n_obs` states, the first being `x0`.
pub fn integrate_observed<F>(
    field: F,
    x0: &[f64],
    interval: f64,
    substeps: usize,
    n_obs: usize,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let substeps = substeps.max(1);
    let dt = interval / substeps as f64;
    let mut out = Vec::with_capacity(n_obs);
    if n_obs == 0 {
        return Ok(out);
    }
    let mut x = x0.to_vec();
    out.push(x.clone());
    let mut step = 0;
    for _ in 1..n_obs {
        for _ in 0..substeps {
            step += 1;
            x = rk4_step(&field, &x, dt).map_err(|e| match e {
                Error::Integration { reason, .. } => Error::Integration { step, reason },
                Error::Singularity { radius } => Error::Integration {
                    step,
                    reason: format!("singular state (r = {radius:e})"),
                },
                other => other,
            })?;
        }
        out.push(x.clone());
    }
    Ok(out)
}
