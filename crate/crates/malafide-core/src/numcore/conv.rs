//! 2D same-size convolution and its kernel gradient.
//!
//! True convolution (kernel flipped), zero padding, output spatial size
//! equal to input. One shared L x L kernel is applied independently to each
//! channel. With the kernel center aligned to the output pixel, the delta
//! kernel is an exact identity.
//!
//! Both routines are organized as L^2 shifted row passes so the inner loop
//! runs over contiguous (x, channel) spans.

use super::{NumError, Tensor};

fn check_kernel(l: usize, h: usize, w: usize) -> Result<(), NumError> {
    if l == 0 || l % 2 == 0 {
        return Err(NumError::EvenKernel(l));
    }
    let min_dim = h.min(w);
    if l > 2 * min_dim + 1 {
        return Err(NumError::KernelTooLarge { kernel: l, min_dim });
    }
    Ok(())
}

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize), NumError> {
    match image.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(NumError::BadRank {
            expected: 3,
            shape: other.to_vec(),
        }),
    }
}

/// Convolve an H x W x C image with a single L x L kernel (L odd), applied
/// per channel, zero-padded so the output is again H x W x C.
///
/// out[y, x, c] = sum over (u, v) of kernel[u, v] * image[y + r - u, x + r - v, c]
/// with r = (L - 1) / 2 and out-of-bounds image samples taken as zero.
pub fn conv2d_same(image: &Tensor, kernel: &Tensor) -> Result<Tensor, NumError> {
    let (h, w, ch) = image_dims(image)?;
    let l = match kernel.shape() {
        [a, b] if a == b => *a,
        other => {
            return Err(NumError::BadRank {
                expected: 2,
                shape: other.to_vec(),
            })
        }
    };
    check_kernel(l, h, w)?;
    if !kernel.all_finite() || !image.all_finite() {
        return Err(NumError::NonFinite("conv2d_same input".into()));
    }

    let r = (l - 1) / 2;
    let row = w * ch;
    let img = image.values();
    let mut out = Tensor::zeros(&[h, w, ch]);
    {
        let o = out.values_mut();
        for u in 0..l {
            let dy = r as isize - u as isize;
            let y0 = (-dy).max(0) as usize;
            let y1 = ((h as isize - dy).min(h as isize)).max(0) as usize;
            for v in 0..l {
                let kuv = kernel.values()[u * l + v];
                if kuv == 0.0 {
                    continue;
                }
                let dx = r as isize - v as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                let span = (x1 - x0) * ch;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let dst = y * row + x0 * ch;
                    let src = sy * row + ((x0 as isize + dx) as usize) * ch;
                    let (d, s) = (&mut o[dst..dst + span], &img[src..src + span]);
                    for i in 0..span {
                        d[i] += kuv * s[i];
                    }
                }
            }
        }
    }
    if !out.all_finite() {
        return Err(NumError::NonFinite("conv2d_same output".into()));
    }
    Ok(out)
}

/// Gradient of `<upstream, conv2d_same(image, k)>` with respect to the
/// kernel `k`, summed over channels. Returns an L x L tensor.
pub fn conv2d_kernel_grad(image: &Tensor, upstream: &Tensor, l: usize) -> Result<Tensor, NumError> {
    let (h, w, ch) = image_dims(image)?;
    if image.shape() != upstream.shape() {
        return Err(NumError::IncompatibleShapes {
            left: image.shape().to_vec(),
            right: upstream.shape().to_vec(),
        });
    }
    check_kernel(l, h, w)?;

    let r = (l - 1) / 2;
    let row = w * ch;
    let img = image.values();
    let up = upstream.values();
    let mut grad = Tensor::zeros(&[l, l]);
    {
        let g = grad.values_mut();
        for u in 0..l {
            let dy = r as isize - u as isize;
            let y0 = (-dy).max(0) as usize;
            let y1 = ((h as isize - dy).min(h as isize)).max(0) as usize;
            for v in 0..l {
                let dx = r as isize - v as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                let span = (x1 - x0) * ch;
                let mut acc = 0.0;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let udx = y * row + x0 * ch;
                    let sdx = sy * row + ((x0 as isize + dx) as usize) * ch;
                    let (a, b) = (&up[udx..udx + span], &img[sdx..sdx + span]);
                    for i in 0..span {
                        acc += a[i] * b[i];
                    }
                }
                g[u * l + v] = acc;
            }
        }
    }
    if !grad.all_finite() {
        return Err(NumError::NonFinite("conv2d_kernel_grad output".into()));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn delta(l: usize) -> Tensor {
        let mut v = vec![0.0; l * l];
        v[(l / 2) * l + l / 2] = 1.0;
        Tensor::new(&[l, l], v).unwrap()
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop convolution, the independent oracle.
    fn conv_oracle(image: &Tensor, kernel: &Tensor) -> Tensor {
        let (h, w, ch) = (image.shape()[0], image.shape()[1], image.shape()[2]);
        let l = kernel.shape()[0];
        let r = (l as isize - 1) / 2;
        let mut out = vec![0.0; h * w * ch];
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for u in 0..l {
                        for v in 0..l {
                            let sy = y as isize + r - u as isize;
                            let sx = x as isize + r - v as isize;
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                acc += kernel.idx2(u, v) * image.idx3(sy as usize, sx as usize, c);
                            }
                        }
                    }
                    out[(y * w + x) * ch + c] = acc;
                }
            }
        }
        Tensor::new(&[h, w, ch], out).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = rand_tensor(&mut rng, &[5, 7, 3]);
        let out = conv2d_same(&img, &delta(3)).unwrap();
        assert_eq!(out.values(), img.values());
    }

    #[test]
    fn all_ones_kernel_on_constant_image() {
        let c = 0.375; // exactly representable so 4c/6c/9c are exact
        let img = Tensor::filled(&[4, 4, 1], c);
        let ones = Tensor::filled(&[3, 3], 1.0);
        let out = conv2d_same(&img, &ones).unwrap();
        // zero padding: interior 9c, edges 6c, corners 4c
        assert_eq!(out.idx3(1, 1, 0), 9.0 * c);
        assert_eq!(out.idx3(1, 2, 0), 9.0 * c);
        assert_eq!(out.idx3(0, 1, 0), 6.0 * c);
        assert_eq!(out.idx3(2, 0, 0), 6.0 * c);
        assert_eq!(out.idx3(0, 0, 0), 4.0 * c);
        assert_eq!(out.idx3(3, 3, 0), 4.0 * c);
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = rand_tensor(&mut rng, &[8, 8, 1]);
        let k = rand_tensor(&mut rng, &[3, 3]);
        let fast = conv2d_same(&img, &k).unwrap();
        let slow = conv_oracle(&img, &k);
        for (a, b) in fast.values().iter().zip(slow.values()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_even_and_oversized_kernels() {
        let img = Tensor::zeros(&[4, 4, 1]);
        assert!(matches!(
            conv2d_same(&img, &Tensor::zeros(&[2, 2])),
            Err(NumError::EvenKernel(2))
        ));
        // 2 * min(4,4) + 1 = 9, so 11 is degenerate
        assert!(matches!(
            conv2d_same(&img, &Tensor::zeros(&[11, 11])),
            Err(NumError::KernelTooLarge { .. })
        ));
        assert!(conv2d_same(&img, &Tensor::zeros(&[9, 9])).is_ok());
    }

    #[test]
    fn kernel_grad_zero_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = rand_tensor(&mut rng, &[6, 6, 2]);
        let up = Tensor::zeros(&[6, 6, 2]);
        let g = conv2d_kernel_grad(&img, &up, 5).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kernel_grad_1x1_is_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = rand_tensor(&mut rng, &[5, 4, 3]);
        let up = rand_tensor(&mut rng, &[5, 4, 3]);
        let g = conv2d_kernel_grad(&img, &up, 1).unwrap();
        let expect = img.dot(&up).unwrap();
        assert!((g.values()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn kernel_grad_rejects_shape_mismatch() {
        let img = Tensor::zeros(&[6, 6, 1]);
        let up = Tensor::zeros(&[6, 5, 1]);
        assert!(conv2d_kernel_grad(&img, &up, 3).is_err());
    }

    #[test]
    fn kernel_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = rand_tensor(&mut rng, &[6, 6, 1]);
        let up = rand_tensor(&mut rng, &[6, 6, 1]);
        let l = 3;
        let k = rand_tensor(&mut rng, &[l, l]);
        let g = conv2d_kernel_grad(&img, &up, l).unwrap();
        let step = 1e-6;
        for i in 0..l * l {
            let mut kp = k.values().to_vec();
            let mut km = k.values().to_vec();
            kp[i] += step;
            km[i] -= step;
            let fp = conv2d_same(&img, &Tensor::new(&[l, l], kp).unwrap())
                .unwrap()
                .dot(&up)
                .unwrap();
            let fm = conv2d_same(&img, &Tensor::new(&[l, l], km).unwrap())
                .unwrap()
                .dot(&up)
                .unwrap();
            let fd = (fp - fm) / (2.0 * step);
            let rel = (g.values()[i] - fd).abs() / g.values()[i].abs().max(1e-9);
            assert!(rel < 1e-6, "entry {i}: analytic {} fd {fd}", g.values()[i]);
        }
    }

    #[test]
    fn adjoint_consistency() {
        // <conv(I, k), U> == <k, kernel_grad(I, U, L)>
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let img = rand_tensor(&mut rng, &[7, 5, 2]);
            let up = rand_tensor(&mut rng, &[7, 5, 2]);
            let k = rand_tensor(&mut rng, &[3, 3]);
            let lhs = conv2d_same(&img, &k).unwrap().dot(&up).unwrap();
            let rhs = k.dot(&conv2d_kernel_grad(&img, &up, 3).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let i1 = rand_tensor(&mut rng, &[9, 9, 1]);
        let i2 = rand_tensor(&mut rng, &[9, 9, 1]);
        let k = rand_tensor(&mut rng, &[5, 5]);
        let (a, b) = (0.7, -1.3);
        let mixed = Tensor::new(
            &[9, 9, 1],
            i1.values()
                .iter()
                .zip(i2.values())
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
        .unwrap();
        let lhs = conv2d_same(&mixed, &k).unwrap();
        let c1 = conv2d_same(&i1, &k).unwrap();
        let c2 = conv2d_same(&i2, &k).unwrap();
        for ((l, x), y) in lhs.values().iter().zip(c1.values()).zip(c2.values()) {
            assert!((l - (a * x + b * y)).abs() < 1e-10);
        }
    }
}
