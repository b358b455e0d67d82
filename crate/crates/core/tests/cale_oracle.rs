mod support;

use entroseg::cale::{self, Matrix};
use entroseg::Segmentation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::fixtures::{self, CaleInstance};
use support::oracles;

fn assert_matches_oracle(inst: &CaleInstance) {
    let got = inst.forward();
    let want = oracles::cale_forward_oracle(&inst.params, &inst.tokens, &inst.boundaries);
    assert_eq!(got.rows(), want.len());
    for (j, row) in want.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            let g = got[(j, c)];
            assert!(
                (g - w).abs() <= 1e-10 * w.abs().max(1.0),
                "group {j} dim {c}: library {g} vs oracle {w}"
            );
        }
    }
}

#[test]
fn forward_matches_straight_line_oracle() {
    for seed in 0..24 {
        assert_matches_oracle(&fixtures::cale_instance(seed, 32, 8, 3));
    }
}

#[test]
fn forward_matches_oracle_on_singleton_groups() {
    for seed in 100..104 {
        let mut inst = fixtures::cale_instance(seed, 32, 8, 3);
        inst.boundaries = (0..=inst.tokens.len()).collect();
        assert_matches_oracle(&inst);
    }
}

#[test]
fn zero_output_projection_keeps_max_pool() {
    let mut inst = fixtures::cale_instance(7, 32, 8, 3);
    for layer in &mut inst.params.layers {
        layer.w_o = Matrix::zeros(layer.w_o.rows(), layer.w_o.cols());
    }
    let got = inst.forward();
    let want = oracles::cale_forward_oracle(&inst.params, &inst.tokens, &inst.boundaries);
    for (j, g) in inst.boundaries.windows(2).enumerate() {
        for c in 0..got.cols() {
            let pooled = (g[0]..g[1])
                .map(|i| inst.params.embedding[(inst.tokens[i] as usize, c)])
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(got[(j, c)], pooled);
            assert_eq!(want[j][c], pooled);
        }
    }
}

/// Oracle output for one fixed instance, frozen so a change to either side
/// is caught.
#[test]
fn frozen_oracle_instance() {
    let mut params = cale::init_params::<f64>(4, 3, 2, 5, 1.0).unwrap();
    params.layers[1].ln_q.beta = vec![0.1, -0.2, 0.3];
    let tokens = [0, 3, 3, 1, 2, 0, 1];
    let boundaries = [0, 1, 4, 7];
    let want = oracles::cale_forward_oracle(&params, &tokens, &boundaries);
    let frozen = FROZEN;
    for (j, row) in want.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            assert!((w - frozen[j][c]).abs() <= 1e-12, "oracle drifted at ({j},{c}): {w}");
        }
    }
    let inst = CaleInstance {
        params,
        tokens: tokens.to_vec(),
        boundaries: boundaries.to_vec(),
    };
    assert_matches_oracle(&inst);
}

const FROZEN: [[f64; 3]; 3] = [
    [-0.9363521590631168, 1.2349910763027512, 0.08110261858260959],
    [0.8431585101091126, -1.3093149089965366, 0.4897299189853389],
    [1.4743642000975972, 2.4818339676546572, 0.6261959078199995],
];

fn check_gradients(inst: &CaleInstance, seed: u64) -> f64 {
    let segm = Segmentation::from_boundaries(inst.boundaries.clone()).unwrap();
    let out = cale::forward(&inst.params, &inst.tokens, &segm, true).unwrap();
    let m = segm.num_groups();
    let d = inst.params.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upstream = Matrix::from_vec(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect());
    let grads = cale::backward(&inst.params, &out, &upstream).unwrap();

    for v in 0..inst.params.vocab_size() {
        if !inst.tokens.contains(&(v as u32)) {
            assert!(
                grads.embedding.row(v).iter().all(|&g| g == 0.0),
                "untouched row {v} has gradient"
            );
        }
    }

    let analytic = oracles::flatten_grads(&grads);
    let numeric = oracles::finite_difference_gradients(&inst.params, &inst.tokens, &inst.boundaries, &upstream, 1e-5);
    let mut worst = 0.0f64;
    for (t, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        assert_eq!(a.len(), n.len(), "tensor {t}");
        for (x, y) in a.iter().zip(n) {
            worst = worst.max(oracles::relative_error(*x, *y));
        }
    }
    worst
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..6 {
        let inst = fixtures::cale_instance(200 + seed, 8, 4, 2);
        let worst = check_gradients(&inst, seed);
        assert!(worst <= 1e-4, "instance {seed}: max relative error {worst}");
    }
}

#[test]
fn out_of_group_tokens_do_not_affect_a_group() {
    for seed in 0..20 {
        let inst = fixtures::cale_instance(300 + seed, 32, 8, 3);
        let base = inst.forward();
        let k = inst.params.vocab_size() as u32;
        for (j, g) in inst.boundaries.windows(2).enumerate() {
            let mut tokens = inst.tokens.clone();
            for i in (0..g[0]).chain(g[1]..inst.tokens.len()) {
                tokens[i] = (tokens[i] + 1) % k;
            }
            let changed = inst.with_tokens(tokens);
            let out = changed.forward();
            assert_eq!(out.row(j), base.row(j), "seed {seed} group {j}");
        }
    }
}

#[test]
fn in_group_permutation_is_invariant() {
    for seed in 0..20 {
        let inst = fixtures::cale_instance(400 + seed, 32, 8, 3);
        let base = inst.forward();
        for (j, g) in inst.boundaries.windows(2).enumerate() {
            let mut permuted = inst.tokens.clone();
            permuted[g[0]..g[1]].reverse();
            if g[1] - g[0] > 2 {
                permuted[g[0]..g[1]].rotate_left(1);
            }
            let changed = inst.with_tokens(permuted);
            let out = changed.forward();
            for (a, b) in out.row(j).iter().zip(base.row(j)) {
                assert!((a - b).abs() <= 1e-12, "seed {seed} group {j}: {a} vs {b}");
            }
        }
    }
}
