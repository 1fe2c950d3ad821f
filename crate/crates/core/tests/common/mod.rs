//! Independent reference implementations used as test oracles. None of this
//! calls into the crate's numeric code paths; it only reads model parameters.

#![allow(dead_code)]

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use truthprobe::probe::{Params, ProbeModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain nested-Vec copy of the parameters: `w[l][i][j]` maps input `i` to
/// output `j` of affine layer `l`.
#[derive(Clone)]
pub struct RefNet {
    pub w: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
}

impl RefNet {
    pub fn from_model(model: &ProbeModel) -> Self {
        let w = model
            .params
            .weights
            .iter()
            .map(|m| m.outer_iter().map(|row| row.to_vec()).collect())
            .collect();
        let b = model.params.biases.iter().map(|v| v.to_vec()).collect();
        Self { w, b }
    }

    /// Straight-line forward pass; returns the output probability and the
    /// on/off pattern of every hidden ReLU.
    pub fn forward(&self, x: &[f64]) -> (f64, Vec<bool>) {
        let mut a = x.to_vec();
        let mut mask = Vec::new();
        let last = self.w.len() - 1;
        for l in 0..self.w.len() {
            let fan_out = self.b[l].len();
            let mut z: Vec<f64> = (0..fan_out)
                .map(|j| self.b[l][j] + a.iter().zip(&self.w[l]).map(|(ai, row)| ai * row[j]).sum::<f64>())
                .collect();
            if l < last {
                for v in z.iter_mut() {
                    mask.push(*v > 0.0);
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            a = z;
        }
        let p = 1.0 / (1.0 + (-a[0]).exp());
        (p, mask)
    }

    /// Mean clamped binary cross-entropy, plus the combined ReLU pattern and
    /// whether any prediction hit the clamp.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[bool]) -> (f64, Vec<bool>, bool) {
        let mut total = 0.0;
        let mut masks = Vec::new();
        let mut clamped = false;
        for (x, &y) in xs.iter().zip(ys) {
            let (p, m) = self.forward(x);
            masks.extend(m);
            let eps = 1e-7;
            if p <= eps || p >= 1.0 - eps {
                clamped = true;
            }
            let pc = p.max(eps).min(1.0 - eps);
            total += if y { -pc.ln() } else { -(1.0 - pc).ln() };
        }
        (total / xs.len() as f64, masks, clamped)
    }
}

/// Per-example forward values of the unperturbed network.
pub struct ForwardCache {
    /// `z[e][l]`: pre-activations of layer `l` for example `e`.
    z: Vec<Vec<Vec<f64>>>,
    /// `a[e][l]`: input to layer `l` (so `a[e][0]` is the example itself).
    a: Vec<Vec<Vec<f64>>>,
}

fn affine(w: &[Vec<f64>], b: &[f64], a: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (zj, wij) in z.iter_mut().zip(&w[i]) {
            *zj += ai * wij;
        }
    }
    z
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

fn clamped_bce(logit: f64, y: bool) -> (f64, bool) {
    let p = 1.0 / (1.0 + (-logit).exp());
    let eps = 1e-7;
    let clamped = p <= eps || p >= 1.0 - eps;
    let pc = p.max(eps).min(1.0 - eps);
    (if y { -pc.ln() } else { -(1.0 - pc).ln() }, clamped)
}

impl RefNet {
    pub fn cache(&self, xs: &[Vec<f64>]) -> ForwardCache {
        let last = self.w.len() - 1;
        let mut z_all = Vec::new();
        let mut a_all = Vec::new();
        for x in xs {
            let mut zs = Vec::new();
            let mut as_ = vec![x.clone()];
            for l in 0..self.w.len() {
                let z = affine(&self.w[l], &self.b[l], &as_[l]);
                if l < last {
                    as_.push(relu(&z));
                }
                zs.push(z);
            }
            z_all.push(zs);
            a_all.push(as_);
        }
        ForwardCache { z: z_all, a: a_all }
    }

    /// Loss after adding `delta` to one parameter, recomputing only what the
    /// change reaches. Also reports whether any ReLU switched state or any
    /// prediction fell in the clamp band.
    pub fn perturbed_loss(&self, cache: &ForwardCache, ys: &[bool], coord: Coord, delta: f64) -> (f64, bool, bool) {
        let last = self.w.len() - 1;
        let (layer, unit) = match coord {
            Coord::Weight { layer, j, .. } | Coord::Bias { layer, j } => (layer, j),
        };
        let mut total = 0.0;
        let mut kink = false;
        let mut clamped = false;
        for (e, &y) in ys.iter().enumerate() {
            let input = match coord {
                Coord::Weight { i, .. } => cache.a[e][layer][i],
                Coord::Bias { .. } => 1.0,
            };
            let old_z = cache.z[e][layer][unit];
            let new_z = old_z + delta * input;
            let logit = if layer == last {
                new_z
            } else {
                if (old_z > 0.0) != (new_z > 0.0) {
                    kink = true;
                }
                let d_act = new_z.max(0.0) - old_z.max(0.0);
                // Next layer: only row `unit` of its weights sees the change.
                let mut z = cache.z[e][layer + 1].clone();
                for (zj, wj) in z.iter_mut().zip(&self.w[layer + 1][unit]) {
                    *zj += d_act * wj;
                }
                let mut l = layer + 1;
                while l < last {
                    for (new, old) in z.iter().zip(&cache.z[e][l]) {
                        if (*new > 0.0) != (*old > 0.0) {
                            kink = true;
                        }
                    }
                    z = affine(&self.w[l + 1], &self.b[l + 1], &relu(&z));
                    l += 1;
                }
                z[0]
            };
            let (loss, c) = clamped_bce(logit, y);
            total += loss;
            clamped |= c;
        }
        (total / ys.len() as f64, kink, clamped)
    }
}

/// Same as [`central_difference_check`] but evaluates each stencil point
/// incrementally from cached activations. Needed to cover every coordinate of
/// a 256-wide network in reasonable time.
pub fn central_difference_check_cached(
    net: &RefNet,
    xs: &[Vec<f64>],
    ys: &[bool],
    grads: &Params,
    coords: &[Coord],
    h: f64,
) -> GradCheck {
    let cache = net.cache(xs);
    let (_, _, base_clamped) = net.loss(xs, ys);
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    for &c in coords {
        let (lp, kp, cp) = net.perturbed_loss(&cache, ys, c, h);
        let (lm, km, cm) = net.perturbed_loss(&cache, ys, c, -h);
        if kp || km || cp || cm || base_clamped {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        max_rel_err = max_rel_err.max(relative_error(c.analytic(grads), numeric));
        checked += 1;
    }
    GradCheck { max_rel_err, checked, skipped }
}

#[derive(Clone, Copy, Debug)]
pub enum Coord {
    Weight { layer: usize, i: usize, j: usize },
    Bias { layer: usize, j: usize },
}

impl Coord {
    pub fn get<'a>(&self, net: &'a mut RefNet) -> &'a mut f64 {
        match *self {
            Coord::Weight { layer, i, j } => &mut net.w[layer][i][j],
            Coord::Bias { layer, j } => &mut net.b[layer][j],
        }
    }

    pub fn analytic(&self, grads: &Params) -> f64 {
        match *self {
            Coord::Weight { layer, i, j } => grads.weights[layer][[i, j]],
            Coord::Bias { layer, j } => grads.biases[layer][j],
        }
    }
}

/// Every bias plus up to `per_layer` uniformly sampled weights from each
/// weight matrix.
pub fn sample_coords<R: Rng>(net: &RefNet, per_layer: usize, rng: &mut R) -> Vec<Coord> {
    let mut out = Vec::new();
    for layer in 0..net.w.len() {
        let fan_in = net.w[layer].len();
        let fan_out = net.b[layer].len();
        let total = fan_in * fan_out;
        for k in sample(rng, total, per_layer.min(total)) {
            out.push(Coord::Weight { layer, i: k / fan_out, j: k % fan_out });
        }
        for j in 0..fan_out {
            out.push(Coord::Bias { layer, j });
        }
    }
    out
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose ±h stencil crossed a ReLU kink or the clamp band,
    /// where the loss is not differentiable and central differences are void.
    pub skipped: usize,
}

/// Relative error used for gradient checks. Pairs where both values are
/// exactly zero (dead units) count as agreement.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central differences with step `h` at each coordinate.
pub fn central_difference_check(
    net: &RefNet,
    xs: &[Vec<f64>],
    ys: &[bool],
    grads: &Params,
    coords: &[Coord],
    h: f64,
) -> GradCheck {
    let (_, base_mask, base_clamped) = net.loss(xs, ys);
    let mut work = net.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    for c in coords {
        let orig = *c.get(&mut work);
        *c.get(&mut work) = orig + h;
        let (lp, mp, cp) = work.loss(xs, ys);
        *c.get(&mut work) = orig - h;
        let (lm, mm, cm) = work.loss(xs, ys);
        *c.get(&mut work) = orig;
        if mp != base_mask || mm != base_mask || cp || cm || base_clamped {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        max_rel_err = max_rel_err.max(relative_error(c.analytic(grads), numeric));
        checked += 1;
    }
    GradCheck { max_rel_err, checked, skipped }
}

/// P(score+ > score-) + P(tie)/2 by enumerating every positive/negative pair.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if !yi {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Accuracy by explicit counting with the strict `>` rule.
pub fn count_accuracy(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let mut correct = 0usize;
    for k in 0..scores.len() {
        let predicted = scores[k] > t;
        if predicted == labels[k] {
            correct += 1;
        }
    }
    correct as f64 / scores.len() as f64
}

/// Best accuracy over every threshold that can change a prediction: each
/// observed score itself, and one value below all of them.
pub fn brute_force_best_accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut best = count_accuracy(scores, labels, min - 1.0);
    for &s in scores {
        best = best.max(count_accuracy(scores, labels, s));
    }
    best
}

/// Random score/label set with both classes and deliberate ties.
pub fn random_scored_set<R: Rng>(rng: &mut R, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.gen_range(2..=max_n);
        let coarse = rng.gen_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    f64::from(rng.gen_range(0..6u8)) / 5.0
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        if labels.iter().any(|&y| y) && labels.iter().any(|&y| !y) {
            return (scores, labels);
        }
    }
}
