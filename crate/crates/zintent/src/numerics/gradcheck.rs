use crate::numerics::Matrix;

/// Central-difference gradient of a scalar function at `x`, perturbing one
/// entry at a time.
pub fn fd_grad(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = x.get(i, j);
            probe.set(i, j, orig + h);
            let fp = f(&probe);
            probe.set(i, j, orig - h);
            let fm = f(&probe);
            probe.set(i, j, orig);
            grad.set(i, j, (fp - fm) / (2.0 * h));
        }
    }
    grad
}

/// True when two gradient values agree to `rel_tol`, with a small absolute
/// floor so entries that are numerically zero on both sides pass.
pub fn grad_close(analytic: f64, fd: f64, rel_tol: f64) -> bool {
    (analytic - fd).abs() <= 1e-8 + rel_tol * analytic.abs().max(fd.abs())
}

/// Compares an analytic gradient against a finite-difference one entry by
/// entry; the error message names the worst entry.
pub fn check_grads(analytic: &Matrix, fd: &Matrix, rel_tol: f64) -> Result<(), String> {
    if analytic.shape() != fd.shape() {
        return Err(format!("shape mismatch: {:?} vs {:?}", analytic.shape(), fd.shape()));
    }
    let mut worst: Option<(usize, usize, f64, f64)> = None;
    for i in 0..analytic.rows() {
        for j in 0..analytic.cols() {
            let a = analytic.get(i, j);
            let f = fd.get(i, j);
            if !grad_close(a, f, rel_tol) {
                let gap = (a - f).abs();
                if worst.map_or(true, |(_, _, wa, wf)| gap > (wa - wf).abs()) {
                    worst = Some((i, j, a, f));
                }
            }
        }
    }
    match worst {
        None => Ok(()),
        Some((i, j, a, f)) => Err(format!(
            "gradient mismatch at ({i},{j}): analytic {a:e} vs finite-difference {f:e}"
        )),
    }
}
