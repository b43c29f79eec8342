//! Central finite-difference checks of every differentiable operation.

use pose2imu::nn::{mse_loss, softmax_cross_entropy, Conv1d, TcnBlock, TcnNetwork, Topology, ValueBlock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 24;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    // below this both are numerically zero
    if scale < 1e-6 {
        return (analytic - numeric).abs();
    }
    (analytic - numeric).abs() / scale
}

fn random_block(rng: &mut ChaCha8Rng, b: usize, t: usize, c: usize) -> ValueBlock<f64> {
    let data = (0..b * t * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    ValueBlock::from_vec(b, t, c, data).unwrap()
}

/// Worst relative error over `coords`, skipping probes whose two sides
/// straddle a rectifier kink.
fn check<F>(x: &mut [f64], analytic: &[f64], coords: &[usize], mut eval: F) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<bool>),
{
    let (_, base_pattern) = eval(x);
    let mut worst = 0.0f64;
    for &i in coords {
        let keep = x[i];
        x[i] = keep + H;
        let (up, p_up) = eval(x);
        x[i] = keep - H;
        let (down, p_down) = eval(x);
        x[i] = keep;
        if p_up != base_pattern || p_down != base_pattern {
            continue;
        }
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

fn sample_coords(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|_| rng.random_range(0..n)).collect()
}

/// Weighted sum of outputs, a loss with a dense known upstream gradient.
fn weighted(out: &ValueBlock<f64>, w: &[f64]) -> f64 {
    out.data.iter().zip(w).map(|(a, b)| a * b).sum()
}

#[test]
fn conv1d_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = [1, 3, 5][seed as usize % 3];
        let dilation = 1 + seed as usize % 4;
        let (cin, cout, b, t) = (rng.random_range(1..4), rng.random_range(1..4), 2, rng.random_range(3..12));
        let mut conv: Conv1d<f64> = Conv1d::init(width, dilation, cin, cout, &mut rng).unwrap();
        for v in &mut conv.bias {
            *v = rng.random_range(-0.5..0.5);
        }
        let x = random_block(&mut rng, b, t, cin);
        let w: Vec<f64> = (0..b * t * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gy = ValueBlock::from_vec(b, t, cout, w.clone()).unwrap();

        let (_, cache) = conv.forward(&x).unwrap();
        let mut grads = pose2imu::nn::ConvGrads::zeros_like(&conv);
        let dx = conv.backward(&cache, &gy, &mut grads);

        let coords = sample_coords(&mut rng, x.data.len(), 40);
        let worst = check(&mut x.data.clone(), &dx.data, &coords, |d| {
            let xb = ValueBlock::from_vec(b, t, cin, d.to_vec()).unwrap();
            (weighted(&conv.forward(&xb).unwrap().0, &w), Vec::new())
        });
        assert!(worst <= TOL, "seed {seed}: input gradient error {worst}");

        let mut kernel = conv.kernel.clone();
        let coords = sample_coords(&mut rng, kernel.len(), 40);
        let worst = check(&mut kernel, &grads.kernel, &coords, |k| {
            let mut c = conv.clone();
            c.kernel = k.to_vec();
            (weighted(&c.forward(&x).unwrap().0, &w), Vec::new())
        });
        assert!(worst <= TOL, "seed {seed}: kernel gradient error {worst}");

        let mut bias = conv.bias.clone();
        let coords: Vec<usize> = (0..bias.len()).collect();
        let worst = check(&mut bias, &grads.bias, &coords, |bv| {
            let mut c = conv.clone();
            c.bias = bv.to_vec();
            (weighted(&c.forward(&x).unwrap().0, &w), Vec::new())
        });
        assert!(worst <= TOL, "seed {seed}: bias gradient error {worst}");
    }
}

#[test]
fn loss_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (b, t, c) = (2, rng.random_range(2..6), rng.random_range(2..6));
        let mut logits = random_block(&mut rng, b, t, c);
        for v in &mut logits.data {
            *v *= 3.0;
        }
        let labels: Vec<usize> = (0..b * t).map(|_| rng.random_range(0..c)).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let coords: Vec<usize> = (0..logits.data.len()).collect();
        let worst = check(&mut logits.data.clone(), &g.data, &coords, |d| {
            let l = ValueBlock::from_vec(b, t, c, d.to_vec()).unwrap();
            (softmax_cross_entropy(&l, &labels).unwrap().0, Vec::new())
        });
        assert!(worst <= TOL, "seed {seed}: cross-entropy gradient error {worst}");

        let target: Vec<f64> = (0..b * t * c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, g) = mse_loss(&logits, &target).unwrap();
        let worst = check(&mut logits.data.clone(), &g.data, &coords, |d| {
            let p = ValueBlock::from_vec(b, t, c, d.to_vec()).unwrap();
            (mse_loss(&p, &target).unwrap().0, Vec::new())
        });
        assert!(worst <= TOL, "seed {seed}: mse gradient error {worst}");
    }
}

#[test]
fn residual_block_input_gradient() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let cin = rng.random_range(1..4);
        let cout = if seed % 2 == 0 { cin } else { cin + 2 };
        let dropout = if seed % 3 == 0 { 0.3 } else { 0.0 };
        let block: TcnBlock<f64> =
            TcnBlock::init(cin, cout, 3, 1 + seed as usize % 3, dropout, &mut rng).unwrap();
        let (b, t) = (2, rng.random_range(4..10));
        let x = random_block(&mut rng, b, t, cin);
        let w: Vec<f64> = (0..b * t * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask_seed = 900 + seed;
        let run = |xb: &ValueBlock<f64>| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
            block.forward(xb, Some(&mut mask_rng)).unwrap()
        };
        let (_, cache) = run(&x);
        let mut grads: Vec<_> = [&block.conv1, &block.conv2]
            .into_iter()
            .chain(block.residual.as_ref())
            .map(pose2imu::nn::ConvGrads::zeros_like)
            .collect();
        let gy = ValueBlock::from_vec(b, t, cout, w.clone()).unwrap();
        let dx = block.backward(&cache, &gy, &mut grads);
        let coords: Vec<usize> = (0..x.data.len()).collect();
        let worst = check(&mut x.data.clone(), &dx.data, &coords, |d| {
            let xb = ValueBlock::from_vec(b, t, cin, d.to_vec()).unwrap();
            let (out, _) = run(&xb);
            // first rectifier's state; the second one is hidden in the cache
            let (h1, _) = block.conv1.forward(&xb).unwrap();
            (weighted(&out, &w), h1.data.iter().map(|v| *v > 0.0).collect())
        });
        assert!(worst <= TOL, "seed {seed}: block input gradient error {worst}");
    }
}

#[test]
fn network_parameter_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let classify = seed % 2 == 1;
        let depth = 1 + seed as usize % 3;
        let topo = Topology {
            input_channels: rng.random_range(1..4),
            output_channels: if classify { 3 } else { 1 },
            kernel_width: 3,
            widths: (0..depth).map(|_| rng.random_range(2..6)).collect(),
            dilations: (0..depth).map(|i| 1 << i).collect(),
            dropout: 0.2,
        };
        let net: TcnNetwork<f64> = TcnNetwork::init(&topo, seed).unwrap();
        let (b, t) = (2, rng.random_range(6..14));
        let x = random_block(&mut rng, b, t, topo.input_channels);
        let labels: Vec<usize> = (0..b * t).map(|_| rng.random_range(0..3)).collect();
        let target: Vec<f64> = (0..b * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask_seed = 700 + seed;
        let loss_of = |n: &TcnNetwork<f64>| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
            let (out, cache) = n.forward(&x, Some(&mut mask_rng)).unwrap();
            let (loss, g) = if classify {
                softmax_cross_entropy(&out, &labels).unwrap()
            } else {
                mse_loss(&out, &target).unwrap()
            };
            (loss, g, cache)
        };
        let (_, g, cache) = loss_of(&net);
        let grads = net.backward(&cache, &g);
        let flat: Vec<Vec<f64>> = grads.flat().iter().map(|s| s.to_vec()).collect();

        for (p, analytic) in flat.iter().enumerate() {
            let mut values = net.params()[p].to_vec();
            let coords = sample_coords(&mut rng, values.len(), 12);
            let worst = check(&mut values, analytic, &coords, |v| {
                let mut n = net.clone();
                n.params_mut()[p].copy_from_slice(v);
                let (loss, _, c) = loss_of(&n);
                (loss, c.activation_pattern())
            });
            assert!(worst <= TOL, "seed {seed}: tensor {p} gradient error {worst}");
        }
    }
}
