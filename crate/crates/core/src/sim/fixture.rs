//! The five-mode benchmark system (n = 5, m = 3) and its reference switching signal.

use super::{Mode, Schedule};
use nalgebra::{DMatrix, DVector};

const A: [[f64; 25]; 5] = [
    [
        -0.73, -0.68, -0.03, -1.34, -0.20, //
        -0.26, 0.27, 0.18, -0.02, 0.79, //
        -0.00, -0.15, -0.09, -0.13, 0.46, //
        0.55, 0.01, 0.47, 0.85, 0.42, //
        -0.24, 0.38, -0.17, 0.81, 0.05,
    ],
    [
        0.26, -0.03, 0.67, 0.77, -0.00, //
        -0.02, 0.46, 0.10, 0.48, 0.54, //
        -0.15, -0.07, -0.17, 0.51, -0.15, //
        0.43, -0.37, -1.01, -0.36, 0.32, //
        0.00, 0.21, 0.90, 0.11, 0.12,
    ],
    [
        -0.25, 0.52, 0.39, 1.15, -0.29, //
        0.29, 0.28, -0.21, 0.18, 0.36, //
        -0.19, -0.40, -0.16, 1.19, -0.08, //
        -0.03, 0.72, -0.80, 0.21, -0.66, //
        0.19, 0.09, -0.08, 0.00, 0.22,
    ],
    [
        0.18, 0.22, 0.16, -0.20, 0.64, //
        -0.07, 0.58, 0.99, -0.12, 0.66, //
        0.41, 0.27, 0.24, 0.40, -0.36, //
        0.36, -0.33, 0.80, -0.05, 0.35, //
        0.04, 0.09, -0.83, -0.21, 0.04,
    ],
    [
        0.27, 0.09, 0.87, 0.28, -0.10, //
        -0.54, 0.44, 0.25, 0.35, 0.04, //
        0.53, -0.37, 0.00, 0.36, -0.49, //
        0.16, 0.20, 0.00, 0.67, 0.26, //
        -0.10, -0.42, -0.08, -0.48, -0.14,
    ],
];

const B: [[f64; 15]; 5] = [
    [
        -0.38, 0.56, 0.70, //
        -0.36, -0.91, -0.81, //
        0.42, -1.15, 0.57, //
        0.54, -0.52, 1.69, //
        0.38, -0.80, -0.88,
    ],
    [
        1.59, 1.26, -1.04, //
        0.73, 1.62, -0.42, //
        0.96, -0.54, 0.73, //
        0.85, 0.90, 1.51, //
        -0.12, -0.78, 0.00,
    ],
    [
        2.04, -0.29, 0.10, //
        0.20, -2.00, -0.19, //
        -0.12, -2.62, 0.50, //
        0.76, 0.71, 0.34, //
        -2.52, 0.01, 0.94,
    ],
    [
        0.47, 0.95, -0.41, //
        -1.07, 0.37, 0.53, //
        -0.50, 1.14, 1.77, //
        -0.61, 0.12, -1.93, //
        -0.99, 1.88, 2.02,
    ],
    [
        -0.86, 0.58, -1.38, //
        1.52, -0.54, -2.46, //
        -0.74, -1.00, 0.16, //
        -2.31, 1.47, -0.55, //
        0.44, -1.91, 0.16,
    ],
];

pub const N: usize = 5;
pub const M: usize = 3;
pub const P: usize = 5;
pub const LAMBDA: f64 = 0.8;
pub const HORIZON: usize = 200;

pub const NOISELESS_T: usize = 7;
pub const NOISELESS_C: f64 = 0.1;
pub const NOISY_T: usize = 9;
pub const NOISY_C: f64 = 1.0;
pub const NOISY_Q: f64 = 0.01;

/// First initialization seeds passing the informativity and pairwise-incompatibility checks.
pub const NOISELESS_INIT_SEED: u64 = 0;
pub const NOISY_INIT_SEED: u64 = 0;

/// Reference switching signal, 1-based modes: about one switch per 20 steps.
pub const SCHEDULE: [(usize, usize); 10] =
    [(0, 2), (23, 5), (46, 4), (70, 3), (85, 1), (102, 4), (123, 5), (143, 4), (164, 3), (199, 5)];

pub fn modes() -> Vec<Mode> {
    (0..P).map(|i| Mode { a: DMatrix::from_row_slice(N, N, &A[i]), b: DMatrix::from_row_slice(N, M, &B[i]) }).collect()
}

pub fn schedule() -> Schedule {
    Schedule { segments: SCHEDULE.iter().map(|&(t, m)| (t, m - 1)).collect() }
}

pub fn x0() -> DVector<f64> {
    DVector::from_vec(vec![1000.0, 0.0, 0.0, 0.0, 0.0])
}
