//! Randomized invariant checks with a fixed proptest seed. Each returns the
//! failure message of the first counterexample.
#![allow(dead_code)]

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use simmotion::features::{feature, rank1_factors, unvec, vec_matrix, FeatureKind};
use simmotion::learner::{init, train, LearnerState, Mode, TrainOptions};
use simmotion::preprocess::{fit_zca, mean_and_covariance};
use simmotion::stimuli::FrameSequence;

pub const CASES: u32 = 1000;
const SEED: [u8; 32] = *b"simmotion-invariants-fixed-seed!";

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &SEED))
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Sm), Just(Mode::Nsm)]
}

/// A learner with random W and a lateral matrix whose rows sum to less than
/// one in absolute value, plus a random feature vector.
fn random_state() -> impl Strategy<Value = (LearnerState, Vec<f64>)> {
    (1usize..=4, 3usize..=6, mode(), -3.0f64..3.0).prop_flat_map(|(k, n, mode, log_scale)| {
        (
            vec(-2.0f64..2.0, k * n * n),
            vec(-1.0f64..1.0, k * k),
            vec(-1.0f64..1.0, n * n),
        )
            .prop_map(move |(w, m, chi)| {
                let mut s = init(k, n, 0, mode).unwrap();
                s.w = w;
                for a in 0..k {
                    for b in 0..k {
                        s.m[a * k + b] = if a == b { 0.0 } else { 0.9 * m[a * k + b] / k as f64 };
                    }
                }
                let scale = 10f64.powf(log_scale);
                (s, chi.into_iter().map(|v| v * scale).collect())
            })
    })
}

fn frame_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=7).prop_flat_map(|n| (vec(-5.0f64..5.0, n), vec(-5.0f64..5.0, n)))
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

/// SM: ‖(I+M)Θ − Wχ‖ ≤ 1e−10‖Wχ‖. NSM: ‖Θ − max(Wχ − MΘ, 0)‖ ≤ 1e−8 and Θ ≥ 0.
pub fn fixed_point_residuals(cases: u32) -> Result<(), String> {
    run(cases, random_state(), |(s, chi)| {
        let drive = s.drive(&chi).unwrap();
        let r = s.respond(&chi).unwrap();
        let res = s.fixed_point_residual(&drive, &r.theta);
        match s.mode {
            Mode::Sm => {
                let dn = drive.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(res <= 1e-10 * dn + f64::MIN_POSITIVE, "SM residual {res} vs drive norm {dn}");
            }
            Mode::Nsm => {
                prop_assert!(r.converged);
                prop_assert!(res <= 1e-8, "NSM residual {res}");
                prop_assert!(r.theta.iter().all(|&v| v >= 0.0));
            }
        }
        Ok(())
    })
}

/// Drive and response through the per-pixel rank-1 path equal the flat path.
pub fn rank1_path_equivalence(cases: u32) -> Result<(), String> {
    let strat = (random_state(), prop_oneof![Just(FeatureKind::Standard), Just(FeatureKind::Midpoint)])
        .prop_flat_map(|((s, _), kind)| {
            let n = s.n;
            (Just(s), Just(kind), vec(-3.0f64..3.0, n), vec(-3.0f64..3.0, n))
        });
    run(cases, strat, |(s, kind, x, xn)| {
        let chi = feature(kind, &x, &xn).unwrap();
        let (u, v) = rank1_factors(kind, &x, &xn).unwrap();
        let flat = s.drive(&chi).unwrap();
        let r1 = s.drive_rank1(&u, &v).unwrap();
        let scale: f64 = s.w.iter().map(|w| w.abs()).sum::<f64>() * chi.iter().map(|c| c.abs()).fold(0.0, f64::max);
        for (a, b) in flat.iter().zip(&r1) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + scale), "drive {a} vs {b}");
        }
        let ta = s.respond(&chi).unwrap().theta;
        let tb = s.respond_rank1(&u, &v).unwrap().theta;
        for (a, b) in ta.iter().zip(&tb) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + scale), "theta {a} vs {b}");
        }
        Ok(())
    })
}

/// Along short random streams: Θ̂ never decreases and grows exactly when Θ
/// is nonzero, so 1/Θ̂ never increases; NSM outputs stay nonnegative; M keeps
/// a zero diagonal; everything stays finite.
pub fn update_monotonicity(cases: u32) -> Result<(), String> {
    let strat = (1usize..=3, 3usize..=5, mode(), 2usize..=30, any::<u64>()).prop_flat_map(|(k, n, mode, t, seed)| {
        (Just(k), Just(n), Just(mode), Just(seed), vec(-2.0f64..2.0, n * t))
    });
    run(cases, strat, |(k, n, mode, seed, frames)| {
        let mut s = init(k, n, seed, mode).unwrap();
        for pair in frames.chunks(n).collect::<Vec<_>>().windows(2) {
            let chi = feature(FeatureKind::Standard, pair[0], pair[1]).unwrap();
            let theta = s.respond(&chi).unwrap().theta;
            if mode == Mode::Nsm {
                prop_assert!(theta.iter().all(|&v| v >= 0.0));
            }
            let before = s.theta_hat.clone();
            s.update(&chi, &theta).unwrap();
            for a in 0..k {
                prop_assert!(s.theta_hat[a] >= before[a]);
                prop_assert!(1.0 / s.theta_hat[a] <= 1.0 / before[a]);
                let grew = s.theta_hat[a] > before[a];
                if theta[a] == 0.0 {
                    prop_assert!(!grew);
                }
                // θ² below half an ulp of Θ̂ is lost to rounding.
                if theta[a] * theta[a] > before[a] * f64::EPSILON {
                    prop_assert!(grew, "a={a}: θ={} left Θ̂ unchanged", theta[a]);
                }
                prop_assert_eq!(s.m[a * k + a], 0.0);
            }
            prop_assert!(s.w.iter().chain(&s.m).all(|v| v.is_finite()));
        }
        Ok(())
    })
}

/// NSM training on random streams emits only nonnegative magnitudes.
pub fn nsm_training_nonnegative(cases: u32) -> Result<(), String> {
    let strat = (1usize..=3, 3usize..=5, 2usize..=25, any::<u64>())
        .prop_flat_map(|(k, n, t, seed)| (Just(k), Just(n), Just(t), Just(seed), vec(-2.0f64..2.0, n * t)));
    run(cases, strat, |(k, n, t, seed, flat)| {
        let frames: Vec<Vec<f64>> = flat.chunks(n).map(|c| c.to_vec()).collect();
        let seq = FrameSequence::from_frames(frames, 1, vec![vec![0.0]; t - 1]).unwrap();
        let opts = TrainOptions {
            mode: Mode::Nsm,
            k,
            seed,
            trace_every: 1,
            ..Default::default()
        };
        let (_, trace) = train(&seq, None, &opts).unwrap();
        prop_assert_eq!(trace.thetas.len(), t - 1);
        prop_assert!(trace.thetas.iter().all(|(_, th)| th.iter().all(|&v| v >= 0.0)));
        Ok(())
    })
}

/// Full-rank frames whitened with a zero floor have identity covariance to
/// 1e−8; the matrix is symmetric; a second fit is the identity to 1e−4.
pub fn zca_identity_covariance(cases: u32) -> Result<(), String> {
    let strat = (2usize..=6).prop_flat_map(|n| (Just(n), vec(-1.0f64..1.0, n * n), vec(-1.0f64..1.0, 40 * n * n)));
    run(cases, strat, |(n, mix, raw)| {
        let frames: Vec<Vec<f64>> = raw
            .chunks(n)
            .map(|z| {
                (0..n)
                    .map(|i| (0..n).map(|j| (if i == j { 2.0 } else { 0.0 } + 0.5 * mix[i * n + j]) * z[j]).sum::<f64>() + 1.0)
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = frames.iter().map(|f| f.as_slice()).collect();
        let z = fit_zca(&refs, 0.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((z.matrix[(i, j)] - z.matrix[(j, i)]).abs() <= 1e-10);
            }
        }
        let out: Vec<Vec<f64>> = frames.iter().map(|f| z.apply(f).unwrap()).collect();
        let orefs: Vec<&[f64]> = out.iter().map(|f| f.as_slice()).collect();
        let (_, c) = mean_and_covariance(&orefs).unwrap();
        let dev = (c - nalgebra::DMatrix::<f64>::identity(n, n)).amax();
        prop_assert!(dev <= 1e-8, "covariance deviates by {dev}");
        let z2 = fit_zca(&orefs, 0.0).unwrap();
        let dev2 = (z2.matrix - nalgebra::DMatrix::<f64>::identity(n, n)).amax();
        prop_assert!(dev2 <= 1e-4, "second fit deviates by {dev2}");
        Ok(())
    })
}

/// Each feature kind reshapes to its defining matrix, vec∘unvec is the
/// identity, and the antisymmetric kind satisfies A + Aᵀ = 0 exactly.
pub fn feature_reshape_round_trip(cases: u32) -> Result<(), String> {
    run(cases, frame_pair(), |(x, xn)| {
        let n = x.len();
        let d: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let sum: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a + b).collect();
        for kind in [FeatureKind::Standard, FeatureKind::Midpoint, FeatureKind::Antisymmetric] {
            let chi = feature(kind, &x, &xn).unwrap();
            let m = unvec(&chi).unwrap();
            prop_assert_eq!(&vec_matrix(&m), &chi);
            for i in 0..n {
                for j in 0..n {
                    let want = match kind {
                        FeatureKind::Standard => d[i] * x[j],
                        FeatureKind::Midpoint => sum[i] * d[j],
                        FeatureKind::Antisymmetric => xn[i] * x[j] - x[i] * xn[j],
                    };
                    prop_assert_eq!(m[i][j], want);
                    prop_assert_eq!(chi[i * n + j], want);
                    if kind == FeatureKind::Antisymmetric {
                        prop_assert_eq!(m[i][j] + m[j][i], 0.0);
                    }
                }
            }
        }
        Ok(())
    })
}

pub fn all() -> Vec<(&'static str, fn(u32) -> Result<(), String>)> {
    vec![
        ("fixed-point residuals", fixed_point_residuals),
        ("rank-1 path equivalence", rank1_path_equivalence),
        ("cumulative activity monotonicity", update_monotonicity),
        ("NSM nonnegativity in training", nsm_training_nonnegative),
        ("ZCA identity covariance", zca_identity_covariance),
        ("feature reshape round-trips", feature_reshape_round_trip),
    ]
}
