//! Scalar abstraction and dense kernels shared by the f32 training path and
//! the f64 gradient check.

use core::fmt::Debug;
use core::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Real:
    Float + Default + Debug + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    /// Conversion with rounding.
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
    fn erf(self) -> Self;

    /// `C = alpha * A B + beta * C` over strided views.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );
}

fn check_view(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) * rs + (cols - 1) * cs;
        assert!(last < len, "matrix view exceeds buffer ({last} >= {len})");
    }
}

macro_rules! impl_real {
    ($t:ty, $erf:path, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn erf(self) -> Self {
                $erf(self)
            }

            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                check_view(a.len(), m, k, rsa, csa);
                check_view(b.len(), k, n, rsb, csb);
                check_view(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every view was bounds-checked above and `c` is
                // exclusively borrowed, so it cannot alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }
        }
    };
}

impl_real!(f32, libm::erff, matrixmultiply::sgemm);
impl_real!(f64, libm::erf, matrixmultiply::dgemm);

/// Row-major `C (m×n) = op(A) op(B) + beta C`, where `op(A)` is `m×k`.
///
/// With `ta`, `a` is stored `k×m`; with `tb`, `b` is stored `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(ta: bool, tb: bool, m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    let (rsa, csa) = if ta { (1, m) } else { (k, 1) };
    let (rsb, csb) = if tb { (1, k) } else { (n, 1) };
    T::gemm_raw(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c, n, 1);
}

/// `y = x W + b` for `x: rows×fan_in`, `W: fan_in×fan_out`.
pub fn linear<T: Real>(x: &[T], w: &[T], b: &[T], rows: usize, fan_in: usize, fan_out: usize) -> alloc::vec::Vec<T> {
    let mut y = alloc::vec![T::zero(); rows * fan_out];
    for row in y.chunks_exact_mut(fan_out) {
        row.copy_from_slice(b);
    }
    gemm(false, false, rows, fan_in, fan_out, x, w, T::one(), &mut y);
    y
}

/// Accumulates parameter gradients of [`linear`] and, when `dx` is given,
/// adds the input gradient into it.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    rows: usize,
    fan_in: usize,
    fan_out: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    gemm(true, false, fan_in, rows, fan_out, x, dy, T::one(), dw);
    for row in dy.chunks_exact(fan_out) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
    if let Some(dx) = dx {
        gemm(false, true, rows, fan_out, fan_in, dy, w, T::one(), dx);
    }
}

pub const LN_EPS: f64 = 1e-12;

/// Saved statistics for the layer-norm backward pass.
#[derive(Debug, Clone, Default)]
pub struct NormCache<T> {
    pub xhat: alloc::vec::Vec<T>,
    pub rstd: alloc::vec::Vec<T>,
}

pub fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: &[T], width: usize) -> (alloc::vec::Vec<T>, NormCache<T>) {
    let rows = x.len() / width;
    let mut y = alloc::vec![T::zero(); x.len()];
    let mut cache = NormCache {
        xhat: alloc::vec![T::zero(); x.len()],
        rstd: alloc::vec![T::zero(); rows],
    };
    let inv_w = 1.0 / width as f64;
    for r in 0..rows {
        let xs = &x[r * width..(r + 1) * width];
        let mean = xs.iter().map(|v| v.f64()).sum::<f64>() * inv_w;
        let var = xs.iter().map(|v| (v.f64() - mean) * (v.f64() - mean)).sum::<f64>() * inv_w;
        let rstd = 1.0 / libm::sqrt(var + LN_EPS);
        cache.rstd[r] = T::of(rstd);
        for j in 0..width {
            let xh = T::of((xs[j].f64() - mean) * rstd);
            cache.xhat[r * width + j] = xh;
            y[r * width + j] = xh * gain[j] + bias[j];
        }
    }
    (y, cache)
}

/// Returns `dx` and accumulates gain/bias gradients.
pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    gain: &[T],
    cache: &NormCache<T>,
    width: usize,
    dgain: &mut [T],
    dbias: &mut [T],
) -> alloc::vec::Vec<T> {
    let rows = dy.len() / width;
    let mut dx = alloc::vec![T::zero(); dy.len()];
    let inv_w = T::of(1.0 / width as f64);
    for r in 0..rows {
        let dys = &dy[r * width..(r + 1) * width];
        let xh = &cache.xhat[r * width..(r + 1) * width];
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for j in 0..width {
            let g = dys[j] * gain[j];
            sum_g += g;
            sum_gx += g * xh[j];
            dgain[j] += dys[j] * xh[j];
            dbias[j] += dys[j];
        }
        let mean_g = sum_g * inv_w;
        let mean_gx = sum_gx * inv_w;
        let rstd = cache.rstd[r];
        for j in 0..width {
            dx[r * width + j] = rstd * (dys[j] * gain[j] - mean_g - xh[j] * mean_gx);
        }
    }
    dx
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu<T: Real>(u: T) -> T {
    T::of(0.5) * u * (T::one() + (u * T::of(FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn gelu_grad<T: Real>(u: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (u * T::of(FRAC_1_SQRT_2)).erf());
    let pdf = T::of(FRAC_1_SQRT_2PI) * (-(u * u) * T::of(0.5)).exp();
    cdf + u * pdf
}

/// Softmax cross-entropy over rows of `logits`.
///
/// Returns the summed loss (accumulated in f64) and, in `grad`, the
/// gradient of `loss_sum * scale` with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(
    logits: &[T],
    classes: usize,
    labels: &[usize],
    scale: f64,
    grad: Option<&mut [T]>,
) -> f64 {
    let mut total = 0.0;
    let mut grad = grad;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let sum: f64 = row.iter().map(|v| libm::exp(v.f64() - max)).sum();
        let lse = max + libm::log(sum);
        total += lse - row[label].f64();
        if let Some(g) = grad.as_deref_mut() {
            let g = &mut g[r * classes..(r + 1) * classes];
            for (c, (gv, v)) in g.iter_mut().zip(row).enumerate() {
                let p = libm::exp(v.f64() - lse);
                let target = if c == label { 1.0 } else { 0.0 };
                *gv = T::of((p - target) * scale);
            }
        }
    }
    total
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn naive(ta: bool, tb: bool, m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_in_all_transpositions() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        for ta in [false, true] {
            for tb in [false, true] {
                let mut c = vec![0.0; m * n];
                gemm(ta, tb, m, k, n, &a, &b, 0.0, &mut c);
                let expect = naive(ta, tb, m, k, n, &a, &b);
                for (x, y) in c.iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn layer_norm_normalizes() {
        let x = [1.0f64, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0];
        let (y, _) = layer_norm(&x, &[1.0; 4], &[0.0; 4], 4);
        for row in y.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &u in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn uniform_logits_cost_log_classes() {
        let logits = [0.0f64; 8];
        let loss = softmax_cross_entropy(&logits, 4, &[1, 3], 1.0, None);
        assert!((loss / 2.0 - libm::log(4.0)).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5f32, 0.9, 0.9, 0.1]), 1);
        assert_eq!(argmax(&[1.0f64, 1.0]), 0);
    }
}
