//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use drst::neural::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Perturb every parameter a little so biases and gains are not at their
/// initial constants (otherwise their gradients are degenerate).
pub fn jitter(model: &mut Model<f64>, seed: u64, amount: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut().unwrap() {
        *p += amount * (rng.gen::<f64>() - 0.5);
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-12 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Worst relative error between `grad` and central differences (step 1e-5)
/// on 20 random parameters whose analytic gradient is not vanishingly small.
pub fn worst_fd_error(model: &Model<f64>, grad: &[f64], loss: &dyn Fn(&Model<f64>) -> f64, seed: u64) -> f64 {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > 1e-6).collect();
    assert!(candidates.len() >= 20, "too few parameters with signal");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let i = candidates[rng.gen_range(0..candidates.len())];
        let mut plus = model.clone();
        plus.params_mut().unwrap()[i] += h;
        let mut minus = model.clone();
        minus.params_mut().unwrap()[i] -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}

pub fn finite_difference_check(model: &Model<f64>, grad: &[f64], loss: &dyn Fn(&Model<f64>) -> f64, seed: u64) {
    let worst = worst_fd_error(model, grad, loss, seed);
    assert!(worst < 1e-4, "relative error {worst:e}");
}

/// Brute-force content reward: scan every contiguous slice of the source
/// window for each n-gram of order 1 to 3 touching position `t`.
pub fn content_reward_oracle(y: &[usize], x: &[usize], mask: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let window: Vec<usize> = if t >= x.len() {
            x[x.len() - x.len().min(5)..].to_vec()
        } else {
            let lo = t.saturating_sub(2);
            let hi = (t + 2).min(x.len() - 1);
            x[lo..=hi].to_vec()
        };
        // (start, end) inclusive spans: unigram, bigrams, trigrams.
        let spans: [(i64, i64); 5] = [(0, 0), (-1, 0), (0, 1), (-2, 0), (0, 2)];
        let mut total = 0i64;
        let mut count = 0i64;
        for (a, b) in spans {
            let (s, e) = (t as i64 + a, t as i64 + b);
            if s < 0 || e >= n as i64 {
                continue;
            }
            let gram = &y[s as usize..=e as usize];
            let mut found = false;
            for start in 0..window.len() {
                if start + gram.len() <= window.len() && window[start..start + gram.len()] == *gram {
                    found = true;
                }
            }
            total += if found { 1 } else { -1 };
            count += 1;
        }
        out.push((1.0 - mask[t]) * (total as f64 / count as f64));
    }
    out
}
