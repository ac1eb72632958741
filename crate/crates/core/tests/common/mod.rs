//! Test-only oracles, written independently of the library code paths.

#![allow(dead_code)]

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizes a unimodal scalar function on `[lo, hi]`: a dense grid
/// locates the basin, golden-section search refines it.
pub fn grid_golden_min<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, grid: usize) -> f64 {
    let h = (hi - lo) / (grid - 1) as f64;
    let (mut best, mut best_val) = (0, f64::INFINITY);
    for i in 0..grid {
        let v = f(lo + h * i as f64);
        if v < best_val {
            best = i;
            best_val = v;
        }
    }
    let mut a = lo + h * best.saturating_sub(1) as f64;
    let mut b = lo + h * (best + 1).min(grid - 1) as f64;
    while b - a > 1e-12 * (1.0 + a.abs().max(b.abs())) {
        let c = b - INV_PHI * (b - a);
        let d = a + INV_PHI * (b - a);
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Loss values written out directly from their textbook definitions.
pub fn loss_value(kind: &str, param: f64, z: f64) -> f64 {
    match kind {
        "l1" => z.abs(),
        "l2" => z * z,
        "lp" => z.abs().powf(param),
        "huber" => {
            if z.abs() <= param {
                z * z
            } else {
                2.0 * param * z.abs() - param * param
            }
        }
        _ => unreachable!(),
    }
}

/// argmin_a f(a) + (a - b)^2 / (2 tau) by brute force.
pub fn prox_oracle(kind: &str, param: f64, tau: f64, b: f64) -> f64 {
    let lo = -b.abs() - 1.0;
    let hi = b.abs() + 1.0;
    grid_golden_min(|a| loss_value(kind, param, a) + (a - b) * (a - b) / (2.0 * tau), lo, hi, 100_000)
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
