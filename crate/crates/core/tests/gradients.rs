//! Correlation gradients against central differences.

mod common;

use common::*;

const POINTS: u64 = 20;
const FD_TOL: f64 = 1e-5;

#[test]
fn grassmann_gradient_matches_differences() {
    for (name, f) in target_families() {
        let q = f.q();
        for i in 0..POINTS {
            let m = random_contraction(&mut rng(i), q, q);
            let e = grassmann_fd_error(&f, &m);
            assert!(e <= FD_TOL, "{name} point {i}: {e:e}");
        }
    }
}

#[test]
fn stiefel_gradient_matches_differences() {
    for (name, f) in target_families() {
        let q = f.q();
        for i in 0..POINTS {
            let m = random_contraction(&mut rng(100 + i), q, q);
            let e = stiefel_fd_error(&f, &m);
            assert!(e <= FD_TOL, "{name} point {i}: {e:e}");
        }
    }
}

#[test]
fn grassmann_gradient_is_psd() {
    for (name, f) in target_families() {
        let q = f.q();
        for i in 0..POINTS {
            let m = random_contraction(&mut rng(200 + i), q, q);
            let e = grad_g_min_eigenvalue(&f, &m);
            assert!(e >= -1e-10, "{name} point {i}: {e:e}");
        }
    }
}
