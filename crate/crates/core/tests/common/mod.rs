#![allow(dead_code)]

use std::path::Path;

use moefuse::fusion::{Expert, GateOutput, MoeConfig, FUSED_LAYERS, STORED_LAYERS};
use moefuse::metrics::ScoredTrial;
use moefuse::numkit::{Graph, NodeId, Op, Tensor};
use moefuse::{Label, LayerFeatureBatch, MoeFusionModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn rand_batch(rng: &mut impl Rng, b: usize, t: usize, s: usize) -> LayerFeatureBatch {
    let layers = (0..STORED_LAYERS)
        .map(|_| rand_tensor(rng, &[b, t, s], 1.0))
        .collect();
    LayerFeatureBatch::new(layers).unwrap()
}

pub fn rand_experts(rng: &mut impl Rng, cfg: &MoeConfig) -> Vec<Vec<Expert>> {
    (0..FUSED_LAYERS)
        .map(|_| {
            (0..cfg.experts_per_layer)
                .map(|_| Expert::init(rng, cfg.feature_dim, cfg.hidden_dim))
                .collect()
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Piecewise-linear regime of a tape: sign of every ReLU input and every
/// Top-K mask. Within one regime the loss is smooth.
pub fn regime(g: &Graph) -> Vec<bool> {
    let mut out = Vec::new();
    for node in g.nodes() {
        match node.op() {
            Op::Relu(x) => out.extend(g.value(*x).data().iter().map(|&v| v > 0.0)),
            Op::MaskedSoftmax(_, mask) => out.extend_from_slice(mask),
            _ => {}
        }
    }
    out
}

/// Smallest |ReLU input| on the tape.
pub fn kink_distance(g: &Graph) -> f64 {
    g.nodes()
        .iter()
        .filter_map(|n| match n.op() {
            Op::Relu(x) => Some(
                g.value(*x)
                    .data()
                    .iter()
                    .fold(f64::INFINITY, |m, v| m.min(v.abs())),
            ),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min)
}

pub struct GradReport {
    pub max_rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences over every entry of `inputs`. `build` places the
/// inputs as leaves (in order) and returns a scalar root. Coordinates whose
/// ±h probes land in a different ReLU / Top-K regime are skipped.
pub fn check_graph(
    inputs: &[Tensor],
    build: impl Fn(&mut Graph, &[NodeId]) -> NodeId,
) -> GradReport {
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let root = build(&mut g, &ids);
        (g, ids, root)
    };
    let (mut g, ids, root) = eval(inputs);
    g.backward(root).unwrap();
    let base = regime(&g);
    let mut report = GradReport {
        max_rel: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = inputs.to_vec();
    for (p, id) in ids.iter().enumerate() {
        for i in 0..inputs[p].numel() {
            let orig = inputs[p].data()[i];
            probe[p].data_mut()[i] = orig + FD_STEP;
            let (gp, _, rp) = eval(&probe);
            probe[p].data_mut()[i] = orig - FD_STEP;
            let (gm, _, rm) = eval(&probe);
            probe[p].data_mut()[i] = orig;
            if regime(&gp) != base || regime(&gm) != base {
                report.skipped += 1;
                continue;
            }
            let numeric = (gp.value(rp).data()[0] - gm.value(rm).data()[0]) / (2.0 * FD_STEP);
            let analytic = g.grad(*id).data()[i];
            report.max_rel = report.max_rel.max(rel_err(analytic, numeric));
            report.checked += 1;
        }
    }
    report
}

/// Same as [`check_graph`] for every parameter of a model.
pub fn check_model(
    model: &MoeFusionModel,
    batch: &LayerFeatureBatch,
    labels: &[Label],
    weights: [f64; 2],
) -> GradReport {
    let (_, grads) = model.loss_and_grads(batch, labels, weights).unwrap();
    let (g0, _) = model.trace(batch, labels, weights).unwrap();
    let base = regime(&g0);
    let mut probe = model.clone();
    let mut report = GradReport {
        max_rel: 0.0,
        checked: 0,
        skipped: 0,
    };
    let sizes: Vec<usize> = model.params().iter().map(|t| t.numel()).collect();
    let eval = |m: &MoeFusionModel| {
        let (g, root) = m.trace(batch, labels, weights).unwrap();
        (regime(&g), g.value(root).data()[0])
    };
    for (p, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let orig = model.params()[p].data()[i];
            probe.params_mut()[p].data_mut()[i] = orig + FD_STEP;
            let (reg_p, lp) = eval(&probe);
            probe.params_mut()[p].data_mut()[i] = orig - FD_STEP;
            let (reg_m, lm) = eval(&probe);
            probe.params_mut()[p].data_mut()[i] = orig;
            if reg_p != base || reg_m != base {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            report.max_rel = report.max_rel.max(rel_err(grads[p].data()[i], numeric));
            report.checked += 1;
        }
    }
    report
}

/// Every expert on every row, weighted by the full gate matrix.
pub fn dense_fuse(
    cfg: &MoeConfig,
    experts: &[Vec<Expert>],
    gate: &GateOutput,
    flat: &[Tensor],
) -> Vec<Tensor> {
    (0..FUSED_LAYERS)
        .map(|i| {
            let (d, s) = flat[i].dims2("oracle").unwrap();
            let mut y = vec![0.0; d * s];
            for (j, expert) in experts[i].iter().enumerate() {
                let out = expert.apply(&flat[i]).unwrap();
                let e = cfg.expert_index(i, j);
                for r in 0..d {
                    let w = gate.weight(r, e);
                    for c in 0..s {
                        y[r * s + c] += w * out.data()[r * s + c];
                    }
                }
            }
            Tensor::new(vec![d, s], y).unwrap()
        })
        .collect()
}

/// Exhaustive EER: every score and `+∞` as a threshold, counted from
/// scratch, lowest threshold among ties in `|FAR − FRR|`.
pub fn brute_eer(trials: &[ScoredTrial]) -> (f64, f64) {
    let ns = trials.iter().filter(|t| t.label == Label::Spoof).count() as f64;
    let nb = trials.len() as f64 - ns;
    let mut cands: Vec<f64> = trials.iter().map(|t| t.score).collect();
    cands.push(f64::INFINITY);
    let mut best: Option<(f64, f64, f64)> = None;
    for &th in &cands {
        let fa = trials
            .iter()
            .filter(|t| t.label == Label::Spoof && t.score >= th)
            .count() as f64;
        let fr = trials
            .iter()
            .filter(|t| t.label == Label::Bonafide && t.score < th)
            .count() as f64;
        let (far, frr) = (fa / ns, fr / nb);
        let gap = (far - frr).abs();
        let better = match best {
            None => true,
            Some((bg, bth, _)) => gap < bg || (gap == bg && th < bth),
        };
        if better {
            best = Some((gap, th, (far + frr) / 2.0));
        }
    }
    let (_, th, e) = best.unwrap();
    (e, th)
}

pub fn rand_trials(rng: &mut impl Rng, n: usize, levels: u32) -> Vec<ScoredTrial> {
    let mut trials: Vec<ScoredTrial> = (0..n)
        .map(|i| {
            let label = if rng.random_bool(0.5) {
                Label::Bonafide
            } else {
                Label::Spoof
            };
            let score = f64::from(rng.random_range(0..levels)) / 4.0 - 5.0;
            ScoredTrial::new(format!("t{i}"), score, label)
        })
        .collect();
    trials[0].label = Label::Bonafide;
    trials[1].label = Label::Spoof;
    trials
}

pub fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}
