use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Softmax along `axis`, computed with max-subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::arg(format!(
            "softmax axis {axis} out of range for rank {}",
            shape.len()
        )));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    let mut buf = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = data[base + j * inner];
            }
            softmax_in_place(&mut buf);
            for (j, b) in buf.iter().enumerate() {
                data[base + j * inner] = *b;
            }
        }
    }
    Ok(out)
}

/// Softmax of a contiguous row. A row that is entirely `-inf` becomes all zeros.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Log-softmax of a contiguous row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Layer normalization over the last dimension: `gain * (x - mean) / sqrt(var + eps) + bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, epsilon: f64) -> Result<Tensor> {
    let width = x.last_dim();
    if gain.len() != width || bias.len() != width {
        return Err(Error::arg(format!(
            "layer_norm: gain/bias length {}/{} vs last dimension {width}",
            gain.len(),
            bias.len()
        )));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::arg("layer_norm: epsilon must be > 0"));
    }
    let rows = if width == 0 { 0 } else { x.len() / width };
    let (y, _) = layer_norm_rows(x.data(), rows, gain.data(), bias.data(), epsilon);
    Tensor::new(x.shape().to_vec(), y)
}

/// Saved statistics of a layer-norm forward pass.
#[derive(Clone, Debug)]
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_rows(
    x: &[f64],
    rows: usize,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> (Vec<f64>, LayerNormCache) {
    let width = gain.len();
    let mut y = vec![0.0; rows * width];
    let mut xhat = vec![0.0; rows * width];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for c in 0..width {
            let h = (row[c] - mean) * inv;
            xhat[r * width + c] = h;
            y[r * width + c] = gain[c] * h + bias[c];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `dx`; accumulates into `dgain`/`dbias`.
pub(crate) fn layer_norm_rows_backward(
    dy: &[f64],
    cache: &LayerNormCache,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let width = gain.len();
    let rows = cache.inv_std.len();
    let mut dx = vec![0.0; rows * width];
    let n = width as f64;
    let mut dxhat = vec![0.0; width];
    for r in 0..rows {
        let off = r * width;
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for c in 0..width {
            let g = dy[off + c];
            let h = cache.xhat[off + c];
            dgain[c] += g * h;
            dbias[c] += g;
            dxhat[c] = g * gain[c];
            sum_d += dxhat[c];
            sum_dx += dxhat[c] * h;
        }
        let inv = cache.inv_std[r];
        for c in 0..width {
            dx[off + c] = inv / n * (n * dxhat[c] - sum_d - cache.xhat[off + c] * sum_dx);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::from_slice(&[0.0, 0.0]), 0).unwrap();
        assert!(close(s.data(), &[0.5, 0.5], 1e-15));
        let s = softmax(&Tensor::from_slice(&[1000.0, 0.0]), 0).unwrap();
        assert!(close(s.data(), &[1.0, 0.0], 1e-12));
        let s = softmax(&Tensor::from_slice(&[0.0, 3f64.ln()]), 0).unwrap();
        assert!(close(s.data(), &[0.25, 0.75], 1e-15));
    }

    #[test]
    fn softmax_along_first_axis_of_matrix() {
        let x = Tensor::new(vec![2, 2], vec![0.0, 5.0, 0.0, 5.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        assert!(close(s.data(), &[0.5, 0.5, 0.5, 0.5], 1e-15));
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn all_masked_row_is_zero() {
        let mut row = vec![f64::NEG_INFINITY; 3];
        softmax_in_place(&mut row);
        assert_eq!(row, vec![0.0; 3]);
    }

    #[test]
    fn layer_norm_examples() {
        let one = |n| Tensor::full(&[n], 1.0);
        let zero = |n| Tensor::zeros(&[n]);
        let y = layer_norm(&Tensor::from_slice(&[1.0, 1.0, 1.0]), &one(3), &zero(3), 1e-5).unwrap();
        assert!(close(y.data(), &[0.0, 0.0, 0.0], 1e-12));
        let y = layer_norm(&Tensor::from_slice(&[-1.0, 1.0]), &one(2), &zero(2), 1e-14).unwrap();
        assert!(close(y.data(), &[-1.0, 1.0], 1e-9));
        let y = layer_norm(
            &Tensor::from_slice(&[0.0, 2.0]),
            &Tensor::full(&[2], 2.0),
            &one(2),
            1e-14,
        )
        .unwrap();
        assert!(close(y.data(), &[-1.0, 3.0], 1e-9));
    }

    #[test]
    fn layer_norm_rejects_bad_shapes() {
        let x = Tensor::from_slice(&[1.0, 2.0]);
        let g = Tensor::full(&[3], 1.0);
        assert!(matches!(
            layer_norm(&x, &g, &g, 1e-5),
            Err(Error::Argument(_))
        ));
    }

    /// Central difference of `f` at every coordinate of `x`.
    fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let mut x = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = x[i];
                x[i] = orig + h;
                let up = f(&x);
                x[i] = orig - h;
                let down = f(&x);
                x[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let rows = rng.gen_range(1..=8);
            let width = rng.gen_range(2..=8);
            let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
            let x = draw(rows * width);
            let gain = draw(width);
            let bias = draw(width);
            let w = draw(rows * width);
            let loss = |x: &[f64], g: &[f64], b: &[f64]| {
                let (y, _) = layer_norm_rows(x, rows, g, b, 1e-5);
                y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, cache) = layer_norm_rows(&x, rows, &gain, &bias, 1e-5);
            let mut dgain = vec![0.0; width];
            let mut dbias = vec![0.0; width];
            let dx = layer_norm_rows_backward(&w, &cache, &gain, &mut dgain, &mut dbias);
            assert!(rel_err(&dx, &numeric_grad(&x, |x| loss(x, &gain, &bias))) < 1e-4);
            assert!(rel_err(&dgain, &numeric_grad(&gain, |g| loss(&x, g, &bias))) < 1e-4);
            assert!(rel_err(&dbias, &numeric_grad(&bias, |b| loss(&x, &gain, b))) < 1e-4);
        }
    }
}
