use lfxlms::acoustics::ImpulseResponse;
use lfxlms::anc::{
    converge_filter, fxlms_block_update, generate_noise, run_anc_trial, Block, Controller,
    FilterWeights, FxLmsController, NoiseSource, PathChange, StopConfig, TrialSetup,
};
use lfxlms::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 16000.0;

fn ir(taps: Vec<f64>) -> ImpulseResponse {
    ImpulseResponse::new(taps, FS).unwrap()
}

fn decaying(len: usize, seed: u64) -> ImpulseResponse {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ir((0..len)
        .map(|i| rng.gen_range(-1.0..1.0) * (-(i as f64) / (len as f64 / 4.0)).exp())
        .collect())
}

/// Causal convolution truncated to the length of `x`.
fn conv(h: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| (0..h.len().min(n + 1)).map(|j| h[j] * x[n - j]).sum())
        .collect()
}

/// Controller with frozen weights that keeps every block it sees.
struct Recorder {
    w: Vec<f64>,
    blocks: Vec<Block>,
}

impl Controller for Recorder {
    fn weights(&self) -> &[f64] {
        &self.w
    }
    fn update(&mut self, block: &Block) -> Result<()> {
        self.blocks.push(block.clone());
        Ok(())
    }
}

fn block_mse_oracle(e: &[f64], preroll: usize, b: usize, n_blocks: usize) -> Vec<f64> {
    (0..n_blocks)
        .map(|k| {
            let s = &e[preroll + k * b..preroll + (k + 1) * b];
            s.iter().map(|v| v * v).sum::<f64>() / b as f64
        })
        .collect()
}

#[test]
fn frozen_filter_matches_triple_convolution() {
    let l = 16;
    let (p, g, w) = (decaying(l, 1), decaying(l, 2), decaying(l, 3));
    let noise = generate_noise(&NoiseSource::white(1.0, 9), 2 * l + 20 * 50).unwrap();
    let schedule = [PathChange { block: 0, path: p.clone() }];
    let setup = TrialSetup {
        schedule: &schedule,
        g: &g,
        g_hat: &g,
        noise: &noise,
        n_blocks: 20,
        block_size: 50,
        preroll: 2 * l,
        divergence_limit: None,
    };
    let mut rec = Recorder { w: w.taps.clone(), blocks: vec![] };
    let trace = run_anc_trial(&setup, &mut rec).unwrap();
    let y = conv(&w.taps, &noise);
    let e: Vec<f64> = conv(&p.taps, &noise)
        .iter()
        .zip(conv(&g.taps, &y))
        .map(|(a, b)| a + b)
        .collect();
    let expect = block_mse_oracle(&e, 2 * l, 50, 20);
    for (a, b) in trace.block_mse.iter().zip(&expect) {
        assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{a} vs {b}");
    }
    // Error samples recorded per block match too.
    for (k, blk) in rec.blocks.iter().enumerate() {
        for (n, ev) in blk.errors.iter().enumerate() {
            assert!((ev - e[2 * l + k * 50 + n]).abs() < 1e-12);
        }
    }
}

#[test]
fn filtered_reference_of_delayed_impulse_is_delayed_input() {
    let (l, d) = (8, 3);
    let noise = generate_noise(&NoiseSource::white(1.0, 4), 2 * l + 4 * 10).unwrap();
    let p = decaying(l, 5);
    let g_hat = ImpulseResponse::delta(l, d, FS);
    let schedule = [PathChange { block: 0, path: p }];
    let setup = TrialSetup {
        schedule: &schedule,
        g: &g_hat,
        g_hat: &g_hat,
        noise: &noise,
        n_blocks: 4,
        block_size: 10,
        preroll: 2 * l,
        divergence_limit: None,
    };
    let mut rec = Recorder { w: vec![0.0; l], blocks: vec![] };
    run_anc_trial(&setup, &mut rec).unwrap();
    for (k, blk) in rec.blocks.iter().enumerate() {
        for n in 0..10 {
            let t = 2 * l + k * 10 + n;
            for (j, v) in blk.xhat_row(n).iter().enumerate() {
                let expect = if t >= d + j { noise[t - d - j] } else { 0.0 };
                assert_eq!(*v, expect);
            }
        }
    }
}

#[test]
fn anc_off_block_energy_equals_primary_convolution() {
    let l = 32;
    let p = decaying(l, 6);
    let g = decaying(l, 7);
    let noise = generate_noise(&NoiseSource::white(1.0, 8), 2 * l + 200 * 100).unwrap();
    let schedule = [PathChange { block: 0, path: p.clone() }];
    let setup = TrialSetup {
        schedule: &schedule,
        g: &g,
        g_hat: &g,
        noise: &noise,
        n_blocks: 200,
        block_size: 100,
        preroll: 2 * l,
        divergence_limit: None,
    };
    let mut off = FxLmsController::new(l, 0.0, 1e-8).unwrap();
    let trace = run_anc_trial(&setup, &mut off).unwrap();
    let expect = block_mse_oracle(&conv(&p.taps, &noise), 2 * l, 100, 200);
    for (a, b) in trace.block_mse.iter().zip(&expect) {
        assert!((a - b).abs() <= 1e-12 * b);
    }
    // Long-run mean tends to σ²‖p‖² for white input.
    let mean = trace.block_mse.iter().sum::<f64>() / 200.0;
    assert!((mean / p.energy() - 1.0).abs() < 0.05, "{mean} vs {}", p.energy());
}

#[test]
fn unit_secondary_path_fixed_point_is_negated_primary() {
    let l = 16;
    let p = decaying(l, 10);
    let delta = ImpulseResponse::delta(l, 0, FS);
    let stop = StopConfig { max_blocks: 2000, ..StopConfig::default() };
    let w = converge_filter(&p, &delta, &delta, &NoiseSource::white(1.0, 3), 0.5, &stop).unwrap();
    let err: f64 = w.iter().zip(&p.taps).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
    let rel = err / p.energy().sqrt();
    assert!(rel < 0.05, "relative error {rel}");
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

#[test]
fn four_tap_filter_converges_to_wiener_solution() {
    // e = (p + g∗w)∗x; for white x the optimum solves GᵀG w = −Gᵀp with G
    // the 7×4 convolution matrix of g.
    let p = [0.3, -0.8, 0.5, 0.2];
    let g = [1.0, 0.5, -0.2, 0.1];
    let rows = 7;
    let gm: Vec<Vec<f64>> = (0..rows)
        .map(|i| (0..4).map(|j| if i >= j && i - j < 4 { g[i - j] } else { 0.0 }).collect())
        .collect();
    let p_pad: Vec<f64> = (0..rows).map(|i| if i < 4 { p[i] } else { 0.0 }).collect();
    let gtg: Vec<Vec<f64>> = (0..4)
        .map(|a| (0..4).map(|b| (0..rows).map(|i| gm[i][a] * gm[i][b]).sum()).collect())
        .collect();
    let rhs: Vec<f64> = (0..4).map(|a| -(0..rows).map(|i| gm[i][a] * p_pad[i]).sum::<f64>()).collect();
    let wiener = solve(gtg, rhs);

    let (pi, gi) = (ir(p.to_vec()), ir(g.to_vec()));
    let stop = StopConfig { max_blocks: 3000, tol: 0.0, ..StopConfig::default() };
    let w = converge_filter(&pi, &gi, &gi, &NoiseSource::white(1.0, 12), 0.02, &stop).unwrap();
    let err: f64 = w.iter().zip(&wiener).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = wiener.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(err / norm < 0.05, "adaptive {:?} vs wiener {wiener:?}", w.0);
}

#[test]
fn trial_traces_are_deterministic() {
    let l = 16;
    let run = || {
        let p = decaying(l, 1);
        let g = decaying(l, 2);
        let noise = generate_noise(&NoiseSource::white(1.0, 77), 2 * l + 30 * 100).unwrap();
        let schedule = [
            PathChange { block: 0, path: p },
            PathChange { block: 15, path: decaying(l, 3) },
        ];
        let setup = TrialSetup {
            schedule: &schedule,
            g: &g,
            g_hat: &g,
            noise: &noise,
            n_blocks: 30,
            block_size: 100,
            preroll: 2 * l,
            divergence_limit: None,
        };
        let mut c = FxLmsController::new(l, 0.5, 1e-8).unwrap();
        run_anc_trial(&setup, &mut c).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.block_mse.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.block_mse.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn divergence_limit_aborts_with_block_index() {
    let l = 8;
    let p = decaying(l, 1);
    let g = decaying(l, 2);
    // Sign-flipped estimate drives the filter the wrong way.
    let g_bad = ir(g.taps.iter().map(|v| -v).collect());
    let noise = generate_noise(&NoiseSource::white(1.0, 5), 2 * l + 200 * 100).unwrap();
    let schedule = [PathChange { block: 0, path: p.clone() }];
    let setup = TrialSetup {
        schedule: &schedule,
        g: &g,
        g_hat: &g_bad,
        noise: &noise,
        n_blocks: 200,
        block_size: 100,
        preroll: 2 * l,
        divergence_limit: Some(10.0 * p.energy()),
    };
    let mut c = FxLmsController::new(l, 1.0, 1e-8).unwrap();
    match run_anc_trial(&setup, &mut c) {
        Err(lfxlms::Error::Instability { block, .. }) => assert!(block > 0),
        other => panic!("expected instability, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn per_sample_increments_are_bounded(
        seed in any::<u64>(),
        len in 1usize..12,
        rows in 1usize..20,
        mu in 0.0f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = 1e-8;
        let mut bound = 0.0;
        let mut block = Block::new(0, len);
        for _ in 0..rows {
            let e = rng.gen_range(-10.0..10.0);
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let n2: f64 = x.iter().map(|v| v * v).sum();
            let single = {
                let mut b = Block::new(0, len);
                b.push(e, &x);
                fxlms_block_update(&FilterWeights::zeros(len), mu, eps, &b).unwrap()
            };
            // ‖Δw_n‖ ≤ μ |e_n| / ‖x̂_n‖
            if n2 > 0.0 {
                prop_assert!(single.norm() <= mu * e.abs() / n2.sqrt() * (1.0 + 1e-12));
            }
            bound += mu * e.abs() * n2.sqrt() / (eps + n2);
            block.push(e, &x);
        }
        let w = fxlms_block_update(&FilterWeights::zeros(len), mu, eps, &block).unwrap();
        prop_assert!(w.norm() <= bound / rows as f64 * (1.0 + 1e-12) + 1e-300);
    }
}
