use puf_moe::baselines::{LrProductModel, SharedBottom};
use puf_moe::mixture::{Architecture, MixtureNetwork};
use puf_moe::nn::{grad_check, Matrix, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(rows: usize, n: usize, tasks: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..rows * n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let y = (0..rows * tasks).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect();
    (Matrix::from_vec(rows, n, x), Matrix::from_vec(rows, tasks, y))
}

fn arch(experts: usize, tasks: usize, tau: f64) -> Architecture {
    Architecture { n: 10, experts, tasks, expert_hidden: [6, 5], tower_hidden: 4, tau }
}

#[test]
fn mixture_gradients_match_finite_differences() {
    for (experts, tasks, tau) in [(4, 1, 0.0), (4, 1, 1e-4), (3, 2, 1e-4), (5, 3, 0.05)] {
        let net = MixtureNetwork::new(arch(experts, tasks, tau), 11).unwrap();
        let (x, y) = batch(16, 10, tasks, 5);
        let r = grad_check(&net, &x, &y, None, 1e-5, 1e-6);
        assert!(r.checked > r.skipped * 10, "{r:?}");
        assert!(r.max_rel_error <= 1e-4, "K={experts} T={tasks} tau={tau}: {:?}", r);
    }
}

#[test]
fn lr_product_gradients_match_finite_differences() {
    for k in 1..=4 {
        let m = LrProductModel::new(10, k, 3 + k as u64).unwrap();
        let (x, y) = batch(24, 10, 1, 8);
        let r = grad_check(&m, &x, &y, None, 1e-5, 1e-6);
        assert_eq!(r.skipped, 0);
        assert!(r.max_rel_error <= 1e-4, "k={k}: {r:?}");
    }
}

#[test]
fn shared_bottom_gradients_match_finite_differences() {
    for (k, tasks) in [(4, 1), (3, 2)] {
        let m = SharedBottom::new(10, tasks, k, 21).unwrap();
        let (x, y) = batch(16, 10, tasks, 4);
        let r = grad_check(&m, &x, &y, None, 1e-5, 1e-6);
        assert!(r.checked > r.skipped * 10, "{r:?}");
        assert!(r.max_rel_error <= 1e-4, "k={k} T={tasks}: {r:?}");
    }
}

#[test]
fn masked_rows_carry_no_gradient() {
    let net = MixtureNetwork::new(arch(3, 2, 1e-4), 2).unwrap();
    let (x, y) = batch(12, 10, 2, 6);
    let mut mask = Matrix::zeros(12, 2);
    for r in 0..12 {
        mask.set(r, 0, 1.0);
        if r < 5 {
            mask.set(r, 1, 1.0);
        }
    }
    let r = grad_check(&net, &x, &y, Some(&mask), 1e-5, 1e-6);
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
    // Labels of task 1 beyond row 5 are ignored.
    let mut y2 = y.clone();
    for r in 5..12 {
        y2.set(r, 1, 1.0 - y.get(r, 1));
    }
    assert_eq!(net.loss(&x, &y, Some(&mask)), net.loss(&x, &y2, Some(&mask)));
}
