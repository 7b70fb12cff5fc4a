use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::StreamRng;

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::dimension(
            "matmul",
            format!("{}x{} by {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        let arow = a.row(i);
        for (k, &aik) in arow.iter().enumerate() {
            let brow = b.row(k);
            let orow = out.row_mut(i);
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    debug_assert!(out.all_finite(), "matmul produced non-finite entries");
    Ok(out)
}

/// x * w + b, with the 1 x out bias broadcast over rows.
pub fn linear_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(Error::dimension(
            "linear_forward",
            format!("bias {}x{} does not match weight {}x{}", b.rows(), b.cols(), w.rows(), w.cols()),
        ));
    }
    let mut out = matmul(x, w)?;
    for i in 0..out.rows() {
        let orow = out.row_mut(i);
        for (o, &bj) in orow.iter_mut().zip(b.row(0)) {
            *o += bj;
        }
    }
    Ok(out)
}

/// Gradients of a linear layer: returns (grad_x, grad_w, grad_b).
pub fn linear_backward(x: &Matrix, w: &Matrix, grad_out: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    if grad_out.rows() != x.rows() || grad_out.cols() != w.cols() || x.cols() != w.rows() {
        return Err(Error::dimension(
            "linear_backward",
            format!(
                "x {}x{}, w {}x{}, grad_out {}x{}",
                x.rows(),
                x.cols(),
                w.rows(),
                w.cols(),
                grad_out.rows(),
                grad_out.cols()
            ),
        ));
    }
    let grad_x = matmul(grad_out, &w.transpose())?;
    let grad_w = matmul(&x.transpose(), grad_out)?;
    let mut grad_b = Matrix::zeros(1, w.cols());
    for i in 0..grad_out.rows() {
        for (gb, &g) in grad_b.row_mut(0).iter_mut().zip(grad_out.row(i)) {
            *gb += g;
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

/// Elementwise max(0, x).
pub fn relu_forward(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Masks grad_out where the forward input was <= 0.
pub fn relu_backward(x: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    if x.shape() != grad_out.shape() {
        return Err(Error::dimension(
            "relu_backward",
            format!("{:?} vs {:?}", x.shape(), grad_out.shape()),
        ));
    }
    let mut out = grad_out.clone();
    for (o, &xi) in out.data_mut().iter_mut().zip(x.data()) {
        if xi <= 0.0 {
            *o = 0.0;
        }
    }
    Ok(out)
}

/// Row-wise softmax, stabilized by subtracting each row's max.
pub fn softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean over rows of -log softmax(row)[label]; gradient is
/// (softmax - onehot) / N.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::dimension(
            "softmax_cross_entropy",
            format!("{} labels for {} rows", labels.len(), logits.rows()),
        ));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= logits.cols() {
            return Err(Error::index(
                "softmax_cross_entropy",
                format!("label {l} at row {i}, {} classes", logits.cols()),
            ));
        }
    }
    let n = logits.rows() as f64;
    let probs = softmax(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &l) in labels.iter().enumerate() {
        // log(p) computed from the stabilized probabilities; p > 0 always
        // because exp(x - max) >= exp(0) = 1 for the max entry.
        loss -= probs.get(i, l).ln();
        grad.set(i, l, grad.get(i, l) - 1.0);
    }
    let grad = grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

/// 1 x cols row of column means.
pub fn mean_pool(frames: &Matrix) -> Result<Matrix> {
    if frames.rows() == 0 {
        return Err(Error::Empty { op: "mean_pool" });
    }
    let mut out = Matrix::zeros(1, frames.cols());
    for i in 0..frames.rows() {
        for (o, &v) in out.row_mut(0).iter_mut().zip(frames.row(i)) {
            *o += v;
        }
    }
    Ok(out.scale(1.0 / frames.rows() as f64))
}

/// Broadcast of the pooled gradient back over `n_rows` frames.
pub fn mean_pool_backward(grad_out: &Matrix, n_rows: usize) -> Matrix {
    let mut out = Matrix::zeros(n_rows, grad_out.cols());
    let scaled: Vec<f64> = grad_out.row(0).iter().map(|&g| g / n_rows as f64).collect();
    for i in 0..n_rows {
        out.row_mut(i).copy_from_slice(&scaled);
    }
    out
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|&v| v * v).sum::<f64>().sqrt()
}

/// Normalizes each row to unit Euclidean norm.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let norm = row_norm(out.row(i));
        if norm == 0.0 {
            return Err(Error::Degenerate { op: "l2_normalize" });
        }
        for v in out.row_mut(i).iter_mut() {
            *v /= norm;
        }
    }
    Ok(out)
}

/// Gradient of row-wise normalization: for u = x/|x|,
/// dL/dx = (g - u (u . g)) / |x|.
pub fn l2_normalize_rows_backward(x: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    if x.shape() != grad_out.shape() {
        return Err(Error::dimension(
            "l2_normalize_rows_backward",
            format!("{:?} vs {:?}", x.shape(), grad_out.shape()),
        ));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let norm = row_norm(x.row(i));
        if norm == 0.0 {
            return Err(Error::Degenerate { op: "l2_normalize_rows_backward" });
        }
        let dot: f64 = x.row(i).iter().zip(grad_out.row(i)).map(|(&xi, &g)| xi * g).sum();
        let dot_uu = dot / (norm * norm);
        for (o, (&xi, &g)) in out.row_mut(i).iter_mut().zip(x.row(i).iter().zip(grad_out.row(i))) {
            *o = (g - xi * dot_uu) / norm;
        }
    }
    Ok(out)
}

/// Unit-normalizes a single row vector.
pub fn l2_normalize(v: &Matrix) -> Result<Matrix> {
    if v.rows() != 1 {
        return Err(Error::dimension("l2_normalize", format!("expected row vector, got {:?}", v.shape())));
    }
    l2_normalize_rows(v)
}

/// Cosine similarity of two equal-length row vectors.
pub fn cosine_similarity(u: &Matrix, v: &Matrix) -> Result<f64> {
    if u.rows() != 1 || v.rows() != 1 || u.cols() != v.cols() {
        return Err(Error::dimension(
            "cosine_similarity",
            format!("{:?} vs {:?}", u.shape(), v.shape()),
        ));
    }
    let nu = row_norm(u.row(0));
    let nv = row_norm(v.row(0));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate { op: "cosine_similarity" });
    }
    let dot: f64 = u.row(0).iter().zip(v.row(0)).map(|(&a, &b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Inverted dropout. In training mode each entry is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); eval mode is the identity.
/// The returned mask holds the multiplier applied to each entry, so the
/// backward pass is grad_out (elementwise*) mask.
pub fn dropout_forward(
    x: &Matrix,
    rate: f64,
    rng: &mut StreamRng,
    training: bool,
) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} not in [0, 1)")));
    }
    if !training || rate == 0.0 {
        let mask = Matrix::zeros(x.rows(), x.cols()).map(|_| 1.0);
        return Ok((x.clone(), mask));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut mask = Matrix::zeros(x.rows(), x.cols());
    for v in mask.data_mut() {
        *v = if rng.uniform() < rate { 0.0 } else { keep_scale };
    }
    Ok((x.hadamard(&mask)?, mask))
}

pub fn dropout_backward(mask: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    grad_out.hadamard(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_grads, fd_grad};

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let i = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&i, &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().get(0, 0), 11.0);
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = StreamRng::new(17);
        let a = Matrix::randn(3, 4, 1.0, &mut rng);
        let b = Matrix::randn(4, 2, 1.0, &mut rng);
        let got = matmul(&a, &b).unwrap();
        assert!(got.max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("4x2"), "{err}");
    }

    #[test]
    fn linear_forward_identity_and_scalar() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Matrix::zeros(1, 2);
        assert_eq!(linear_forward(&x, &w, &b).unwrap(), x);

        let x = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![3.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert_eq!(linear_forward(&x, &w, &b).unwrap().get(0, 0), 7.0);
    }

    #[test]
    fn linear_forward_matches_naive_oracle() {
        let mut rng = StreamRng::new(23);
        let x = Matrix::randn(2, 3, 1.0, &mut rng);
        let w = Matrix::randn(3, 2, 1.0, &mut rng);
        let b = Matrix::randn(1, 2, 1.0, &mut rng);
        let got = linear_forward(&x, &w, &b).unwrap();
        let mut want = naive_matmul(&x, &w);
        for i in 0..want.rows() {
            for j in 0..want.cols() {
                want.set(i, j, want.get(i, j) + b.get(0, j));
            }
        }
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn linear_backward_trivial_cases() {
        let x = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![3.0]]).unwrap();

        let zero = Matrix::zeros(1, 1);
        let (gx, gw, gb) = linear_backward(&x, &w, &zero).unwrap();
        assert_eq!(gx.get(0, 0), 0.0);
        assert_eq!(gw.get(0, 0), 0.0);
        assert_eq!(gb.get(0, 0), 0.0);

        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let (gx, gw, gb) = linear_backward(&x, &w, &one).unwrap();
        assert_eq!(gx.get(0, 0), 3.0);
        assert_eq!(gw.get(0, 0), 2.0);
        assert_eq!(gb.get(0, 0), 1.0);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = StreamRng::new(100 + seed);
            let x = Matrix::randn(3, 4, 1.0, &mut rng);
            let w = Matrix::randn(4, 2, 1.0, &mut rng);
            let b = Matrix::randn(1, 2, 1.0, &mut rng);
            // Scalar objective: sum of squares of the outputs.
            let loss = |x: &Matrix, w: &Matrix, b: &Matrix| {
                let y = linear_forward(x, w, b).unwrap();
                y.data().iter().map(|v| v * v).sum::<f64>()
            };
            let y = linear_forward(&x, &w, &b).unwrap();
            let grad_out = y.scale(2.0);
            let (gx, gw, gb) = linear_backward(&x, &w, &grad_out).unwrap();

            let fd_x = fd_grad(&x, 1e-6, |m| loss(m, &w, &b));
            let fd_w = fd_grad(&w, 1e-6, |m| loss(&x, m, &b));
            let fd_b = fd_grad(&b, 1e-6, |m| loss(&x, &w, m));
            check_grads(&gx, &fd_x, 1e-4).unwrap();
            check_grads(&gw, &fd_w, 1e-4).unwrap();
            check_grads(&gb, &fd_b, 1e-4).unwrap();
        }
    }

    #[test]
    fn relu_masks_negatives() {
        let x = Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.row(0), &[0.0, 2.0]);

        let all_pos = Matrix::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let g = Matrix::from_rows(&[vec![0.5, -0.5]]).unwrap();
        assert_eq!(relu_backward(&all_pos, &g).unwrap(), g);
    }

    #[test]
    fn relu_backward_matches_finite_differences_away_from_kink() {
        let mut rng = StreamRng::new(31);
        let mut x = Matrix::randn(3, 3, 1.0, &mut rng);
        for v in x.data_mut() {
            if v.abs() < 1e-4 {
                *v = 0.5;
            }
        }
        let loss = |m: &Matrix| relu_forward(m).data().iter().map(|v| v * v).sum::<f64>();
        let grad_out = relu_forward(&x).scale(2.0);
        let analytic = relu_backward(&x, &grad_out).unwrap();
        let fd = fd_grad(&x, 1e-6, loss);
        check_grads(&analytic, &fd, 1e-4).unwrap();
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = StreamRng::new(37);
        let x = Matrix::randn(4, 6, 3.0, &mut rng);
        let p = softmax(&x);
        for i in 0..p.rows() {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let logits = Matrix::zeros(2, 4);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-9);

        let mut big = Matrix::zeros(1, 4);
        big.set(0, 2, 50.0);
        let (loss, _) = softmax_cross_entropy(&big, &[2]).unwrap();
        assert!(loss < 1e-9);
        assert!(loss >= 0.0);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Matrix::zeros(2, 4);
        assert!(softmax_cross_entropy(&logits, &[0, 4]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = StreamRng::new(200 + seed);
            let logits = Matrix::randn(3, 5, 1.5, &mut rng);
            let labels = [1usize, 4, 0];
            let (_, analytic) = softmax_cross_entropy(&logits, &labels).unwrap();
            let fd = fd_grad(&logits, 1e-6, |m| softmax_cross_entropy(m, &labels).unwrap().0);
            check_grads(&analytic, &fd, 1e-4).unwrap();
        }
    }

    #[test]
    fn mean_pool_basics() {
        let single = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(mean_pool(&single).unwrap(), single);

        let two = Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(mean_pool(&two).unwrap().row(0), &[1.0, 1.0]);

        assert!(mean_pool(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn mean_pool_matches_oracle_and_backward_is_fd_exact() {
        let mut rng = StreamRng::new(41);
        let frames = Matrix::randn(5, 3, 1.0, &mut rng);
        let pooled = mean_pool(&frames).unwrap();
        for j in 0..3 {
            let mut s = 0.0;
            for i in 0..5 {
                s += frames.get(i, j);
            }
            assert!((pooled.get(0, j) - s / 5.0).abs() < 1e-12);
        }

        let loss = |m: &Matrix| {
            let p = mean_pool(m).unwrap();
            p.data().iter().map(|v| v * v).sum::<f64>()
        };
        let grad_out = pooled.scale(2.0);
        let analytic = mean_pool_backward(&grad_out, 5);
        let fd = fd_grad(&frames, 1e-6, loss);
        check_grads(&analytic, &fd, 1e-4).unwrap();
    }

    #[test]
    fn l2_normalize_cases() {
        let v = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let n = l2_normalize(&v).unwrap();
        assert!(n.max_abs_diff(&Matrix::from_rows(&[vec![0.6, 0.8]]).unwrap()) < 1e-12);

        let unit = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(l2_normalize(&unit).unwrap().max_abs_diff(&unit) < 1e-12);

        let mut rng = StreamRng::new(43);
        let r = Matrix::randn(1, 7, 2.0, &mut rng);
        let n = l2_normalize(&r).unwrap();
        let norm: f64 = n.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        assert!(l2_normalize(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn l2_normalize_rows_backward_matches_finite_differences() {
        let mut rng = StreamRng::new(47);
        let x = Matrix::randn(3, 4, 1.0, &mut rng);
        // Objective: sum of entries of the normalized rows times fixed noise.
        let c = Matrix::randn(3, 4, 1.0, &mut rng);
        let loss = |m: &Matrix| {
            let n = l2_normalize_rows(m).unwrap();
            n.data().iter().zip(c.data()).map(|(&a, &b)| a * b).sum::<f64>()
        };
        let analytic = l2_normalize_rows_backward(&x, &c).unwrap();
        let fd = fd_grad(&x, 1e-6, loss);
        check_grads(&analytic, &fd, 1e-4).unwrap();
    }

    #[test]
    fn cosine_similarity_cases() {
        let u = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-12);

        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(cosine_similarity(&a, &b).unwrap().abs() < 1e-12);

        let v = Matrix::from_rows(&[vec![4.0, 5.0, 6.0]]).unwrap();
        // Hand value: 32 / (sqrt(14) * sqrt(77)).
        assert!((cosine_similarity(&u, &v).unwrap() - 0.974_631_846).abs() < 1e-9);

        assert!(cosine_similarity(&u, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn cosine_similarity_scale_invariant() {
        let mut rng = StreamRng::new(53);
        let u = Matrix::randn(1, 6, 1.0, &mut rng);
        let v = Matrix::randn(1, 6, 1.0, &mut rng);
        let base = cosine_similarity(&u, &v).unwrap();
        let scaled = cosine_similarity(&u.scale(3.7), &v.scale(0.002)).unwrap();
        assert!((base - scaled).abs() < 1e-12);
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let mut rng = StreamRng::new(59);
        let x = Matrix::randn(3, 3, 1.0, &mut rng);
        let (y, mask) = dropout_forward(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y, x);
        assert!(mask.data().iter().all(|&m| m == 1.0));

        let (y, mask) = dropout_forward(&x, 0.9, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert!(mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn dropout_survivor_fraction_near_rate() {
        let x = Matrix::zeros(100, 100).map(|_| 1.0);
        let mut rng = StreamRng::new(61);
        let (y, mask) = dropout_forward(&x, 0.5, &mut rng, true).unwrap();
        let survivors = mask.data().iter().filter(|&&m| m != 0.0).count();
        let frac = survivors as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02, "survivor fraction {frac}");
        // Inverted scaling: surviving entries are 1/(1-rate).
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let x = Matrix::zeros(1, 1);
        let mut rng = StreamRng::new(67);
        assert!(dropout_forward(&x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_backward_applies_mask() {
        let x = Matrix::zeros(4, 4).map(|_| 1.0);
        let mut rng = StreamRng::new(71);
        let (_, mask) = dropout_forward(&x, 0.5, &mut rng, true).unwrap();
        let g = Matrix::zeros(4, 4).map(|_| 3.0);
        let back = dropout_backward(&mask, &g).unwrap();
        for (b, m) in back.data().iter().zip(mask.data()) {
            assert_eq!(*b, 3.0 * m);
        }
    }
}
