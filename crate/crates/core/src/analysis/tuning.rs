use rand::seq::index::sample;

use super::stats::median;
use crate::seed::Rng;

/// Cosine similarity with its degenerate-input flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// One or both vectors were zero.
    pub flagged: bool,
}

/// Two zero vectors count as identical (a collapsed pair); one zero vector gives 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Cosine {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (true, true) => Cosine {
            value: (dot / (na * nb)).clamp(-1.0, 1.0),
            flagged: false,
        },
        (false, false) => Cosine {
            value: 1.0,
            flagged: true,
        },
        _ => Cosine {
            value: 0.0,
            flagged: true,
        },
    }
}

/// `n` unordered pairs of distinct states, fixed by the stream.
pub fn sample_state_pairs(n_states: usize, n: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    (0..n)
        .map(|_| {
            let v = sample(rng, n_states, 2);
            (v.index(0), v.index(1))
        })
        .collect()
}

/// Mean cosine similarity of the given state pairs at each checkpoint.
/// `latents[c][s]` is the representation of state `s` at checkpoint `c`.
pub fn pairwise_cosine_trajectory(
    latents: &[Vec<Vec<f64>>],
    pairs: &[(usize, usize)],
) -> Vec<(f64, usize)> {
    latents
        .iter()
        .map(|states| {
            let mut flagged = 0;
            let sum: f64 = pairs
                .iter()
                .map(|(i, j)| {
                    let c = cosine(&states[*i], &states[*j]);
                    flagged += usize::from(c.flagged);
                    c.value
                })
                .sum();
            (sum / pairs.len().max(1) as f64, flagged)
        })
        .collect()
}

/// The six unordered pairs of corner cells of a `width x height` arena,
/// as row-major state indices.
pub fn corner_pairs(width: usize, height: usize) -> Vec<((usize, usize), (usize, usize))> {
    let corners = [
        (0, 0),
        (width - 1, 0),
        (0, height - 1),
        (width - 1, height - 1),
    ];
    let mut out = Vec::with_capacity(6);
    for i in 0..4 {
        for j in i + 1..4 {
            out.push((corners[i], corners[j]));
        }
    }
    out
}

/// Cosine series of every corner pair across checkpoints; `latents[c][s]` with row-major states.
pub fn corner_separation(
    latents: &[Vec<Vec<f64>>],
    width: usize,
    height: usize,
) -> Vec<(((usize, usize), (usize, usize)), Vec<f64>)> {
    corner_pairs(width, height)
        .into_iter()
        .map(|(a, b)| {
            let (ia, ib) = (a.1 * width + a.0, b.1 * width + b.0);
            (
                (a, b),
                latents
                    .iter()
                    .map(|states| cosine(&states[ia], &states[ib]).value)
                    .collect(),
            )
        })
        .collect()
}

fn first_argmax(xs: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    let tied = xs.iter().filter(|v| **v == xs[best]).count() > 1;
    (best, tied)
}

fn is_flat(xs: &[f64]) -> bool {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    !(max - min > 1e-12)
}

/// Signed circular offset `to - from` in `(-n/2, n/2]`, as a fraction of `n`.
fn ring_offset(from: usize, to: usize, n: usize) -> f64 {
    let mut d = (to as i64 - from as i64).rem_euclid(n as i64);
    if d > n as i64 / 2 {
        d -= n as i64;
    }
    d as f64 / n as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeakShift {
    /// Per unit; `None` for units with a flat map before or after.
    pub shifts: Vec<Option<f64>>,
    /// Units whose peak was tied between states.
    pub tied: Vec<usize>,
    pub median: Option<f64>,
}

/// Displacement of each unit's peak between two sets of ring maps, as a
/// fraction of the ring, positive in the direction of increasing state index.
pub fn field_peak_shift(pre: &[Vec<f64>], post: &[Vec<f64>]) -> PeakShift {
    let mut shifts = Vec::with_capacity(pre.len());
    let mut tied = Vec::new();
    for (u, (a, b)) in pre.iter().zip(post).enumerate() {
        if is_flat(a) || is_flat(b) {
            shifts.push(None);
            continue;
        }
        let (pa, ta) = first_argmax(a);
        let (pb, tb) = first_argmax(b);
        if ta || tb {
            tied.push(u);
        }
        shifts.push(Some(ring_offset(pa, pb, a.len())));
    }
    let valid: Vec<f64> = shifts.iter().flatten().copied().collect();
    PeakShift {
        median: median(&valid),
        shifts,
        tied,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardDistance {
    /// Per unit; negative means the peak comes before the reward along the running direction.
    pub distances: Vec<Option<f64>>,
    pub median: Option<f64>,
}

/// Signed ring distance from each unit's peak to the reward state.
pub fn peak_reward_distance(maps: &[Vec<f64>], reward_state: usize) -> RewardDistance {
    let distances: Vec<Option<f64>> = maps
        .iter()
        .map(|m| {
            if is_flat(m) {
                None
            } else {
                Some(ring_offset(reward_state, first_argmax(m).0, m.len()))
            }
        })
        .collect();
    let valid: Vec<f64> = distances.iter().flatten().copied().collect();
    RewardDistance {
        median: median(&valid),
        distances,
    }
}

/// Cosine similarity between two conditions' population vectors at each
/// position; `None` where either vector is zero.
pub fn split_similarity_profile(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Option<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let c = cosine(x, y);
            (!c.flagged).then_some(c.value)
        })
        .collect()
}

/// `(R_V - R_A) / (R_V + R_A)`; `None` when the summed response is below 1e-6.
pub fn selectivity_index(r_v: f64, r_a: f64) -> Option<f64> {
    let s = r_v + r_a;
    (s >= 1e-6).then(|| (r_v - r_a) / s)
}

/// `[post(P_k) - post(N_k)] - [pre(P_k) - pre(N_k)]` for each probe pair.
pub fn swap_response_delta(pre: &[(f64, f64)], post: &[(f64, f64)]) -> Vec<f64> {
    pre.iter()
        .zip(post)
        .map(|((pp, pn), (qp, qn))| (qp - qn) - (pp - pn))
        .collect()
}
