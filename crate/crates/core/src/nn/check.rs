//! Central finite-difference gradient checking.

/// Maximum relative disagreement between analytic gradients and central
/// finite differences of `f` at `params`:
/// `max_i |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)`.
///
/// `f` must be a pure scalar function of the parameter vector. An empty
/// parameter vector returns 0.
pub fn max_rel_grad_error(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    step: f64,
) -> f64 {
    assert_eq!(
        params.len(),
        analytic.len(),
        "parameter/gradient length mismatch"
    );
    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let up = f(&work);
        work[i] = orig - step;
        let down = f(&work);
        work[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let ga = analytic[i];
        let rel = (ga - fd).abs() / (1e-8f64).max(ga.abs() + fd.abs());
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
