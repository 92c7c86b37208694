//! Truncated, normalized Gaussian filtering with zero padding.

/// `k x k` kernel, row-major, summing to one. `k` must be odd.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Vec<f64> {
    assert!(k % 2 == 1, "kernel size must be odd");
    let r = (k / 2) as f64;
    let mut kern: Vec<f64> = (0..k * k)
        .map(|i| {
            let (y, x) = ((i / k) as f64 - r, (i % k) as f64 - r);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = kern.iter().sum();
    kern.iter_mut().for_each(|v| *v /= total);
    kern
}

/// Correlate `x` (`h x w`) with the `k x k` Gaussian; outside pixels count as zero.
pub fn gaussian_blur(x: &[f64], h: usize, w: usize, k: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(x.len(), h * w);
    // The kernel is an outer product, so filter rows then columns.
    let r = k / 2;
    let g: Vec<f64> = {
        let raw: Vec<f64> = (0..k).map(|i| (-((i as f64 - r as f64).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for xo in 0..w {
            let mut acc = 0.0;
            for (t, &gv) in g.iter().enumerate() {
                let xi = xo as isize + t as isize - r as isize;
                if xi >= 0 && (xi as usize) < w {
                    acc += gv * x[y * w + xi as usize];
                }
            }
            tmp[y * w + xo] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for yo in 0..h {
        for xo in 0..w {
            let mut acc = 0.0;
            for (t, &gv) in g.iter().enumerate() {
                let yi = yo as isize + t as isize - r as isize;
                if yi >= 0 && (yi as usize) < h {
                    acc += gv * tmp[yi as usize * w + xo];
                }
            }
            out[yo * w + xo] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(7, 5.0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[48]);
        assert_eq!(k[6], k[42]);
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let mut x = vec![0.0; 81];
        x[40] = 1.0;
        let y = gaussian_blur(&x, 9, 9, 7, 5.0);
        let k = gaussian_kernel(7, 5.0);
        for ky in 0..7 {
            for kx in 0..7 {
                assert!((y[(ky + 1) * 9 + kx + 1] - k[ky * 7 + kx]).abs() < 1e-15);
            }
        }
        assert_eq!(y[0], 0.0);
    }

    #[test]
    fn constant_input_dims_at_borders() {
        let y = gaussian_blur(&[1.0; 100], 10, 10, 7, 5.0);
        assert!((y[55] - 1.0).abs() < 1e-12);
        assert!(y[0] < 0.9);
        assert!(y.iter().all(|&v| v <= 1.0 + 1e-12));
    }
}
