//! Independent reference computations used by integration and acceptance
//! tests. Nothing here calls into the code paths being checked, except
//! `finite_difference_gradients`, which only uses the forward pass as a
//! black-box loss.

#![allow(dead_code, clippy::needless_range_loop)]

use entroseg::cale::{self, CaleParams, Matrix};
use entroseg::corpus::AlignmentRef;

/// Straight-line forward pass with explicit index loops.
pub fn cale_forward_oracle(params: &CaleParams<f64>, tokens: &[u32], boundaries: &[usize]) -> Vec<Vec<f64>> {
    let d = params.embedding.cols();
    let n = tokens.len();
    let eps = params.eps;

    let mut e = vec![vec![0.0; d]; n];
    for i in 0..n {
        for c in 0..d {
            e[i][c] = params.embedding[(tokens[i] as usize, c)];
        }
    }

    let m = boundaries.len() - 1;
    let mut p = vec![vec![0.0; d]; m];
    for j in 0..m {
        for c in 0..d {
            let mut best = f64::NEG_INFINITY;
            for i in boundaries[j]..boundaries[j + 1] {
                if e[i][c] > best {
                    best = e[i][c];
                }
            }
            p[j][c] = best;
        }
    }

    fn project(w: &Matrix<f64>, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut out = vec![0.0; d];
        for r in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += w[(r, c)] * x[c];
            }
            out[r] = acc;
        }
        out
    }

    fn norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
        let d = x.len() as f64;
        let mut mean = 0.0;
        for v in x {
            mean += v;
        }
        mean /= d;
        let mut var = 0.0;
        for v in x {
            var += (v - mean) * (v - mean);
        }
        var /= d;
        let denom = (var + eps).sqrt();
        let mut out = Vec::with_capacity(x.len());
        for c in 0..x.len() {
            out.push(gamma[c] * (x[c] - mean) / denom + beta[c]);
        }
        out
    }

    for layer in &params.layers {
        let mut next = p.clone();
        for j in 0..m {
            let q = norm(&project(&layer.w_q, &p[j]), &layer.ln_q.gamma, &layer.ln_q.beta, eps);
            let range: Vec<usize> = (boundaries[j]..boundaries[j + 1]).collect();
            let mut scores = Vec::new();
            let mut values = Vec::new();
            for &i in &range {
                let k = norm(&project(&layer.w_k, &e[i]), &layer.ln_k.gamma, &layer.ln_k.beta, eps);
                let v = norm(&project(&layer.w_v, &e[i]), &layer.ln_v.gamma, &layer.ln_v.beta, eps);
                let mut s = 0.0;
                for c in 0..d {
                    s += q[c] * k[c];
                }
                scores.push(s / (d as f64).sqrt());
                values.push(v);
            }
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in &scores {
                total += (s - mx).exp();
            }
            let mut z = vec![0.0; d];
            for (t, s) in scores.iter().enumerate() {
                let a = (s - mx).exp() / total;
                for c in 0..d {
                    z[c] += a * values[t][c];
                }
            }
            let delta = project(&layer.w_o, &z);
            for c in 0..d {
                next[j][c] = p[j][c] + delta[c];
            }
        }
        p = next;
    }
    p
}

pub fn loss(params: &CaleParams<f64>, tokens: &[u32], boundaries: &[usize], upstream: &Matrix<f64>) -> f64 {
    let segm = entroseg::Segmentation::from_boundaries(boundaries.to_vec()).unwrap();
    let out = cale::forward(params, tokens, &segm, false).unwrap().embeddings.vectors;
    out.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum()
}

/// Central differences of `<upstream, forward(params)>` for every entry of
/// every tensor, in the order: embedding, then per layer the ten tensors of
/// `CaleLayer::tensors`.
pub fn finite_difference_gradients(
    params: &CaleParams<f64>,
    tokens: &[u32],
    boundaries: &[usize],
    upstream: &Matrix<f64>,
    h: f64,
) -> Vec<Vec<f64>> {
    let mut work = params.clone();
    let mut out = Vec::new();

    let mut grad = vec![0.0; work.embedding.as_slice().len()];
    for (idx, g) in grad.iter_mut().enumerate() {
        let orig = work.embedding.as_slice()[idx];
        work.embedding.as_mut_slice()[idx] = orig + h;
        let up = loss(&work, tokens, boundaries, upstream);
        work.embedding.as_mut_slice()[idx] = orig - h;
        let down = loss(&work, tokens, boundaries, upstream);
        work.embedding.as_mut_slice()[idx] = orig;
        *g = (up - down) / (2.0 * h);
    }
    out.push(grad);

    for l in 0..work.layers.len() {
        for t in 0..10 {
            let len = work.layers[l].tensors()[t].len();
            let mut grad = vec![0.0; len];
            for (idx, g) in grad.iter_mut().enumerate() {
                let orig = work.layers[l].tensors()[t][idx];
                work.layers[l].tensors_mut()[t][idx] = orig + h;
                let up = loss(&work, tokens, boundaries, upstream);
                work.layers[l].tensors_mut()[t][idx] = orig - h;
                let down = loss(&work, tokens, boundaries, upstream);
                work.layers[l].tensors_mut()[t][idx] = orig;
                *g = (up - down) / (2.0 * h);
            }
            out.push(grad);
        }
    }
    out
}

/// Flatten analytic gradients in the same order as `finite_difference_gradients`.
pub fn flatten_grads(g: &cale::CaleGrads<f64>) -> Vec<Vec<f64>> {
    let mut out = vec![g.embedding.as_slice().to_vec()];
    for layer in &g.layers {
        for t in layer.tensors() {
            out.push(t.to_vec());
        }
    }
    out
}

/// Relative error with a floor on the denominator so entries that are both
/// essentially zero do not dominate.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Boundary indices by direct application of the criterion definitions.
pub fn brute_segment(values: &[f64], theta_g: Option<f64>, theta_r: Option<f64>) -> Vec<usize> {
    let mut b = vec![0];
    for i in 1..values.len() {
        let mut fire = false;
        if let Some(t) = theta_g {
            if values[i] > t {
                fire = true;
            }
        }
        if let Some(t) = theta_r {
            if values[i] - values[i - 1] > t {
                fire = true;
            }
        }
        if fire {
            b.push(i);
        }
    }
    b.push(values.len());
    b
}

/// Number of adjacent unequal pairs plus one.
pub fn brute_run_count(tokens: &[u32]) -> usize {
    let mut count = 1;
    for i in 1..tokens.len() {
        if tokens[i] != tokens[i - 1] {
            count += 1;
        }
    }
    count
}

/// Corpus rate for every distinct threshold plateau of a global or relative
/// criterion: returns `(theta, rate)` for a theta below every score and for
/// each distinct score.
pub fn rate_plateaus(traces: &[Vec<f64>], relative: bool, frame_rate_hz: f64) -> Vec<(f64, f64)> {
    let mut scores = Vec::new();
    for t in traces {
        for i in 1..t.len() {
            scores.push(if relative { t[i] - t[i - 1] } else { t[i] });
        }
    }
    let seconds: f64 = traces.iter().map(|t| t.len() as f64 / frame_rate_hz).sum();
    let mut thetas: Vec<f64> = scores.clone();
    thetas.push(scores.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0);
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    thetas
        .into_iter()
        .map(|theta| {
            let fired = scores.iter().filter(|&&s| s > theta).count();
            (theta, (traces.len() + fired) as f64 / seconds)
        })
        .collect()
}

/// Every unit start/end of a tier, by linear scan.
pub fn reference_times(reference: &AlignmentRef, tier: entroseg::Tier) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for u in reference.tier(tier) {
        for t in [u.start_s, u.end_s] {
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
    out
}

/// Exhaustive nearest-neighbour alignment: (precision %, MTD ms).
pub fn nearest_neighbor_score(pred: &[f64], reference: &[f64], window_ms: f64) -> (f64, Option<f64>) {
    if pred.is_empty() {
        return (0.0, None);
    }
    let mut hits = 0;
    let mut total = 0.0;
    for &p in pred {
        let mut best = f64::INFINITY;
        for &r in reference {
            let dist = (p - r).abs() * 1000.0;
            if dist < best {
                best = dist;
            }
        }
        total += best;
        if best <= window_ms + entroseg::metrics::WINDOW_SLACK_MS {
            hits += 1;
        }
    }
    (100.0 * hits as f64 / pred.len() as f64, Some(total / pred.len() as f64))
}
