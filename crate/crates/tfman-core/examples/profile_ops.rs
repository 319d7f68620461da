use std::time::Instant;
use tfman_core::ops;
use tfman_core::rng::Rng;
use tfman_core::tensor::Tensor;

fn t(label: &str, mut f: impl FnMut()) {
    let n = 10;
    let start = Instant::now();
    for _ in 0..n { f(); }
    println!("{label:<34} {:>8.1} ms", start.elapsed().as_secs_f64() * 1000.0 / n as f64);
}

fn main() {
    let mut rng = Rng::from_seed(1);
    let mut gen = |shape: &[usize]| Tensor::<f32>::generate(shape, || rng.uniform_in(-1.0, 1.0) as f32);

    // Attention pieces at 48x48, C1=16
    let q = gen(&[2304, 16]);
    let k = gen(&[16, 2304]);
    let a = gen(&[2304, 2304]);
    t("matmul qk (2304x16 * 16x2304)", || { ops::matmul(&q, &k).unwrap(); });
    t("softmax rows (2304x2304)", || { ops::softmax(&a, 1).unwrap(); });
    t("softmax_grad (2304x2304)", || { ops::softmax_grad(&a, &a, 1); });
    t("matmul av (2304x2304 * 2304x16)", || { ops::matmul(&a, &gen(&[2304, 16])).unwrap(); });
    t("matmul_grad_a", || { ops::matmul_grad_a(&a, &k); });

    // Plumbing convs at toy scale
    let x48 = gen(&[1, 16, 48, 48]);
    let x96 = gen(&[1, 16, 96, 96]);
    let k33 = gen(&[16, 16, 3, 3]);
    let k66 = gen(&[16, 16, 6, 6]);
    t("conv3x3 16->16 @96", || { ops::conv2d(&x96, &k33, 1, 1).unwrap(); });
    t("deconv6x6 s2 16->16 @48->96", || { ops::conv_transpose2d(&x48, &k66, 2, 2).unwrap(); });
    t("conv6x6 s2 16->16 @96->48", || { ops::conv2d(&x96, &k66, 2, 2).unwrap(); });
    t("conv2d_grad_input 3x3 @96", || { ops::conv2d_grad_input(&x96, &k33, &[1,16,96,96], 1, 1); });
    t("conv2d_grad_kernel 3x3 @96", || { ops::conv2d_grad_kernel(&x96, &x96, &[16,16,3,3], 1, 1); });

    // TFM matching conv: batch 16 channels as batch, N=32 kernels 3x3 over 48x48
    let fm = gen(&[16, 1, 48, 48]);
    let k1 = gen(&[32, 1, 3, 3]);
    t("tfm score conv (16b,32k,3x3@48)", || { ops::conv2d(&fm, &k1, 1, 1).unwrap(); });
    let w = gen(&[16, 32, 48, 48]);
    let k2 = gen(&[32, 1, 6, 6]);
    t("tfm deconv (16b,32->1,6x6 s2)", || { ops::conv_transpose2d(&w, &k2, 2, 2).unwrap(); });
    t("tfm softmax (16,32,48,48) ax1", || { ops::softmax(&w, 1).unwrap(); });
}
