//! Test oracles shared by the integration suites: central finite-difference
//! gradient checking and brute-force scalar versions of the metrics.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stackface::autograd::{Tape, Var};
use stackface::nn::{DepthNet, DepthNetConfig, Fan, FanConfig, Mode, ParamStore, Session, StageConfig};
use stackface::{LandmarkSet, Result, Tensor};

pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error. Central differences of a loss
/// of magnitude ~10² carry round-off near 1e-8, so gradients smaller than
/// the floor are compared on an absolute scale instead.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel: f64,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel < tol
    }
}

/// Checks the gradient of `sum(w ⊙ f(inputs))` with respect to every input
/// entry, where `w` is a fixed random weighting so that no output direction
/// is privileged.
pub fn gradcheck<F>(name: &str, inputs: &[Tensor<f64>], f: F) -> GradReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let weight_for = |shape: &[usize]| {
        let mut r = rng(0xC0FFEE);
        random_tensor(&mut r, shape, 0.5, 1.5)
    };
    let eval = |values: &[Tensor<f64>]| -> (f64, Tape<f64>, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward");
        let w = weight_for(tape.value(out).shape());
        let wv = tape.leaf(w);
        let prod = tape.mul(out, wv).unwrap();
        let loss = tape.sum(prod);
        (tape.value(loss).item(), tape, vars, loss)
    };

    let (_, tape, vars, loss) = eval(inputs);
    let grads = tape.backward(loss).unwrap();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(&tape, vars[k]);
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * FD_STEP);
            max_rel = max_rel.max(rel_err(analytic.data()[j], numeric));
            checked += 1;
        }
    }
    GradReport {
        name: name.to_string(),
        checked,
        max_rel,
    }
}

/// Miniature alignment network used for end-to-end gradient checks:
/// 1 stack, hourglass depth 1, width 8, 2 landmarks, 16×16 input.
pub fn mini_fan_config() -> FanConfig {
    use stackface::nn::{BlockKind, HourglassConfig, StemConfig};
    FanConfig {
        n_stacks: 1,
        m_landmarks: 2,
        input_hw: (16, 16),
        heatmap_hw: (4, 4),
        hourglass: HourglassConfig {
            depth: 1,
            width: 8,
            block: BlockKind::Hpm,
        },
        stem: StemConfig {
            channels: 8,
            mid_channels: 8,
        },
    }
}

/// Finite-difference check of a whole network in train mode against the
/// loss `Σ_k sum(w_k ⊙ out_k)` over its outputs. Every input entry is
/// checked, plus `per_param` random entries of every trainable parameter
/// tensor (all entries of smaller tensors).
pub fn network_gradcheck<M, P, F>(
    name: &str,
    model: &mut M,
    params: P,
    inputs: &[Tensor<f64>],
    per_param: usize,
    seed: u64,
    forward: F,
) -> GradReport
where
    P: Fn(&mut M) -> &mut ParamStore<f64>,
    F: Fn(&M, &mut Session<f64>, &[Var]) -> Result<Vec<Var>>,
{
    let mut r = rng(seed ^ 0x5EED);
    // non-trivial affine parameters so that no gradient vanishes by symmetry
    for p in params(model).iter_mut() {
        let gamma = p.name.ends_with("gamma");
        if p.trainable && (gamma || p.name.ends_with("beta") || p.name.ends_with("bias")) {
            for v in p.tensor.data_mut() {
                *v = r.gen_range(-0.5..0.5) + if gamma { 1.0 } else { 0.0 };
            }
        }
    }

    let loss_of = |model: &M, values: &[Tensor<f64>]| -> (f64, Session<f64>, Vec<Var>, Var) {
        let mut s = Session::new(Mode::Train);
        let xs: Vec<Var> = values.iter().map(|v| s.input(v.clone())).collect();
        let outs = forward(model, &mut s, &xs).unwrap();
        let mut total = None;
        for (i, o) in outs.iter().enumerate() {
            let wt = random_tensor(&mut rng(100 + i as u64), s.tape.value(*o).shape(), 0.5, 1.5);
            let wv = s.tape.leaf(wt);
            let prod = s.tape.mul(*o, wv).unwrap();
            let part = s.tape.sum(prod);
            total = Some(match total {
                None => part,
                Some(t) => s.tape.add(t, part).unwrap(),
            });
        }
        let loss = total.unwrap();
        (s.tape.value(loss).item(), s, xs, loss)
    };

    let (_, s, xs, loss) = loss_of(model, inputs);
    params(model).zero_grad();
    let input_grads: Vec<Tensor<f64>> = {
        let g = s.backward(loss, params(model)).unwrap();
        xs.iter().map(|&x| g.wrt(&s.tape, x)).collect()
    };
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            let numeric = (loss_of(model, &plus).0 - loss_of(model, &minus).0) / (2.0 * FD_STEP);
            max_rel = max_rel.max(rel_err(input_grads[k].data()[j], numeric));
            checked += 1;
        }
    }
    for id in 0..params(model).len() {
        let (trainable, n) = {
            let p = params(model).get(id);
            (p.trainable, p.tensor.len())
        };
        if !trainable {
            continue;
        }
        let picks: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| r.gen_range(0..n)).collect()
        };
        for j in picks {
            let analytic = params(model).get(id).grad.data()[j];
            let orig = params(model).get(id).tensor.data()[j];
            params(model).get_mut(id).tensor.data_mut()[j] = orig + FD_STEP;
            let lp = loss_of(model, inputs).0;
            params(model).get_mut(id).tensor.data_mut()[j] = orig - FD_STEP;
            let lm = loss_of(model, inputs).0;
            params(model).get_mut(id).tensor.data_mut()[j] = orig;
            max_rel = max_rel.max(rel_err(analytic, (lp - lm) / (2.0 * FD_STEP)));
            checked += 1;
        }
    }
    GradReport {
        name: name.to_string(),
        checked,
        max_rel,
    }
}

/// End-to-end check of the alignment network on a random image batch.
pub fn fan_gradcheck(config: FanConfig, batch: usize, per_param: usize, seed: u64) -> GradReport {
    let (h, w) = config.input_hw;
    let image = random_tensor(&mut rng(seed), &[batch, 3, h, w], -1.0, 1.0);
    let mut fan = Fan::<f64>::new(config, seed).unwrap();
    network_gradcheck(
        "alignment network end to end",
        &mut fan,
        |f| &mut f.params,
        &[image],
        per_param,
        seed,
        |f, s, x| f.forward(s, x[0]),
    )
}

/// End-to-end check of a small depth network: 8×8 input, 2 landmarks.
pub fn depth_gradcheck(per_param: usize, seed: u64) -> GradReport {
    let config = DepthNetConfig {
        n_landmarks: 2,
        input_channels: 5,
        input_hw: (8, 8),
        tower: vec![StageConfig { width: 4, blocks: 1 }, StageConfig { width: 8, blocks: 1 }],
        output_dim: 2,
    };
    let mut r = rng(seed);
    let image = random_tensor(&mut r, &[2, 3, 8, 8], -1.0, 1.0);
    let heat = random_tensor(&mut r, &[2, 2, 8, 8], 0.0, 1.0);
    let mut net = DepthNet::<f64>::new(config, seed).unwrap();
    network_gradcheck(
        "depth network end to end",
        &mut net,
        |n| &mut n.params,
        &[image, heat],
        per_param,
        seed,
        |n, s, x| Ok(vec![n.forward(s, x[0], x[1])?]),
    )
}

/// Finite-difference checks of every differentiable tape operation, each on
/// random inputs of a few small geometries.
pub fn op_suite() -> Vec<GradReport> {
    let mut r = rng(42);
    let mut t = |shape: &[usize]| random_tensor(&mut r, shape, -1.0, 1.0);
    let mut out = Vec::new();
    for &(cin, cout, k, stride, pad, size, bias) in &[
        (2, 3, 3, 1, 1, 5, true),
        (2, 2, 3, 2, 0, 5, false),
        (3, 2, 1, 1, 0, 4, true),
        (3, 2, 7, 2, 3, 8, true),
        (2, 2, 2, 2, 1, 5, true),
    ] {
        let mut inputs = vec![t(&[2, cin, size, size]), t(&[cout, cin, k, k])];
        if bias {
            inputs.push(t(&[cout]));
        }
        out.push(gradcheck(
            &format!("conv2d {cin}->{cout} k{k} s{stride} p{pad}"),
            &inputs,
            |tp, v| tp.conv2d(v[0], v[1], v.get(2).copied(), stride, pad),
        ));
    }
    for &(window, stride) in &[(2, 2), (3, 1), (3, 2)] {
        out.push(gradcheck(
            &format!("max_pool2d w{window} s{stride}"),
            &[t(&[2, 2, 6, 6])],
            |tp, v| tp.max_pool2d(v[0], window, stride),
        ));
    }
    for factor in [1, 2, 3] {
        out.push(gradcheck(&format!("upsample_nearest x{factor}"), &[t(&[1, 2, 3, 2])], |tp, v| {
            tp.upsample_nearest(v[0], factor)
        }));
    }
    out.push(gradcheck("batch_norm train", &[t(&[2, 3, 3, 3]), t(&[3]), t(&[3])], |tp, v| {
        Ok(tp.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0)
    }));
    out.push(gradcheck("batch_norm eval", &[t(&[2, 3, 2, 2]), t(&[3]), t(&[3])], |tp, v| {
        tp.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)
    }));
    out.push(gradcheck("relu", &[t(&[2, 3, 4])], |tp, v| Ok(tp.relu(v[0]))));
    out.push(gradcheck("add", &[t(&[2, 3]), t(&[2, 3])], |tp, v| tp.add(v[0], v[1])));
    out.push(gradcheck("sub", &[t(&[2, 3]), t(&[2, 3])], |tp, v| tp.sub(v[0], v[1])));
    out.push(gradcheck("mul", &[t(&[2, 3]), t(&[2, 3])], |tp, v| tp.mul(v[0], v[1])));
    out.push(gradcheck("mul self", &[t(&[5])], |tp, v| tp.mul(v[0], v[0])));
    out.push(gradcheck("scale", &[t(&[4])], |tp, v| Ok(tp.scale(v[0], -2.5))));
    out.push(gradcheck("sum", &[t(&[3, 2])], |tp, v| Ok(tp.sum(v[0]))));
    out.push(gradcheck(
        "concat_channels",
        &[t(&[2, 1, 2, 2]), t(&[2, 3, 2, 2]), t(&[2, 2, 2, 2])],
        |tp, v| tp.concat_channels(v),
    ));
    out.push(gradcheck("linear", &[t(&[3, 5]), t(&[4, 5]), t(&[4])], |tp, v| {
        tp.linear(v[0], v[1], Some(v[2]))
    }));
    out.push(gradcheck("linear no bias", &[t(&[2, 3]), t(&[2, 3])], |tp, v| {
        tp.linear(v[0], v[1], None)
    }));
    out.push(gradcheck("global_avg_pool", &[t(&[2, 3, 3, 2])], |tp, v| tp.global_avg_pool(v[0])));
    out.push(gradcheck("branch reuse", &[t(&[1, 2, 4, 4])], |tp, v| {
        let p = tp.max_pool2d(v[0], 2, 2)?;
        let u = tp.upsample_nearest(p, 2)?;
        let a = tp.relu(v[0]);
        tp.add(u, a)
    }));
    out
}

/// Heatmap MSE (masked and unmasked), stack sum and depth L2 losses.
pub fn loss_suite() -> Vec<GradReport> {
    use stackface::training::{depth_l2, fan_loss, heatmap_mse};
    let mut r = rng(7);
    let target = random_tensor(&mut r, &[2, 3, 4, 4], 0.0, 1.0);
    let pred = random_tensor(&mut r, &[2, 3, 4, 4], -0.5, 1.5);
    let pred2 = random_tensor(&mut r, &[2, 3, 4, 4], -0.5, 1.5);
    let mask = [true, false, true, true, true, false];
    let dt = random_tensor(&mut r, &[2, 3], -5.0, 5.0);
    let dp = random_tensor(&mut r, &[2, 3], -5.0, 5.0);
    vec![
        gradcheck("heatmap_mse", std::slice::from_ref(&pred), |tp, v| {
            Ok(heatmap_mse(tp, v[0], &target, None)?.value)
        }),
        gradcheck("heatmap_mse masked", std::slice::from_ref(&pred), |tp, v| {
            Ok(heatmap_mse(tp, v[0], &target, Some(&mask))?.value)
        }),
        gradcheck("fan_loss two stacks", &[pred, pred2], |tp, v| {
            Ok(fan_loss(tp, v, &target, Some(&mask))?.value)
        }),
        gradcheck("depth_l2 masked", &[dp], |tp, v| {
            Ok(depth_l2(tp, v[0], &dt, Some(&[true, true, false, true, false, true]))?.value)
        }),
    ]
}

/// Input gradients through single residual blocks of every learnable kind.
pub fn block_suite() -> Vec<GradReport> {
    use stackface::nn::{params::seeded_rng, Block, BlockConfig, BlockKind, Builder};
    let mut out = Vec::new();
    for (kind, cin, cout) in [
        (BlockKind::Bottleneck, 4, 4),
        (BlockKind::Bottleneck, 3, 6),
        (BlockKind::Hpm, 8, 8),
        (BlockKind::Hpm, 4, 8),
    ] {
        let mut store = ParamStore::<f64>::new();
        let mut prng = seeded_rng(3);
        let block = Block::build(
            &mut Builder::new(&mut store, &mut prng),
            BlockConfig {
                kind,
                in_channels: cin,
                out_channels: cout,
            },
        )
        .unwrap();
        let x = random_tensor(&mut rng(9), &[2, cin, 4, 4], -1.0, 1.0);
        let mut model = (block, store);
        out.push(network_gradcheck(
            &format!("{kind:?} block {cin}->{cout}"),
            &mut model,
            |m| &mut m.1,
            &[x],
            8,
            5,
            |m, s, v| Ok(vec![m.0.forward(s, &m.1, v[0])?]),
        ));
    }
    out
}

// ---- brute-force metric oracles -------------------------------------------

/// Face size from the explicit min/max of each coordinate.
pub fn oracle_face_size(gt: &LandmarkSet) -> Option<f64> {
    let vis: Vec<[f64; 2]> = (0..gt.len()).filter(|&i| gt.visible[i]).map(|i| gt.points[i]).collect();
    if vis.len() < 2 {
        return None;
    }
    let mut xs: Vec<f64> = vis.iter().map(|p| p[0]).collect();
    let mut ys: Vec<f64> = vis.iter().map(|p| p[1]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let w = xs[xs.len() - 1] - xs[0];
    let h = ys[ys.len() - 1] - ys[0];
    Some((w * h).sqrt())
}

pub fn oracle_nme(pred: &LandmarkSet, gt: &LandmarkSet) -> Option<f64> {
    let size = oracle_face_size(gt)?;
    if size <= 0.0 {
        return None;
    }
    let mut errors = Vec::new();
    for i in 0..gt.len() {
        if gt.visible[i] {
            let dx = pred.points[i][0] - gt.points[i][0];
            let dy = pred.points[i][1] - gt.points[i][1];
            errors.push((dx * dx + dy * dy).sqrt());
        }
    }
    if errors.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for e in &errors {
        total += e;
    }
    Some(total / errors.len() as f64 / size)
}

pub fn oracle_ced(nmes: &[f64], thresholds: &[f64]) -> Vec<f64> {
    thresholds
        .iter()
        .map(|&t| {
            let mut c = 0usize;
            for &e in nmes {
                if e <= t {
                    c += 1;
                }
            }
            c as f64 / nmes.len() as f64
        })
        .collect()
}

/// Piecewise-linear interpolant of the samples, constant past the last one.
fn interpolate(ts: &[f64], fs: &[f64], t: f64) -> f64 {
    if t >= ts[ts.len() - 1] {
        return fs[fs.len() - 1];
    }
    let i = ts.iter().rposition(|&x| x <= t).unwrap();
    let u = (t - ts[i]) / (ts[i + 1] - ts[i]);
    fs[i] * (1.0 - u) + fs[i + 1] * u
}

/// Normalised area under the interpolated curve on `[0, cutoff]` by
/// Simpson's rule between consecutive breakpoints, which is exact for a
/// piecewise-linear integrand.
pub fn oracle_auc(ts: &[f64], fs: &[f64], cutoff: f64) -> f64 {
    let mut knots: Vec<f64> = ts.iter().copied().filter(|&t| t < cutoff).collect();
    knots.push(cutoff);
    let mut area = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        area += (b - a) / 6.0
            * (interpolate(ts, fs, a) + 4.0 * interpolate(ts, fs, mid) + interpolate(ts, fs, b));
    }
    area / cutoff
}

pub fn oracle_per_landmark(preds: &[LandmarkSet], gts: &[LandmarkSet]) -> Vec<Option<f64>> {
    let m = gts[0].len();
    (0..m)
        .map(|i| {
            let mut vals = Vec::new();
            for (p, g) in preds.iter().zip(gts) {
                if let Some(size) = oracle_face_size(g) {
                    if size > 0.0 && g.visible[i] {
                        let dx = p.points[i][0] - g.points[i][0];
                        let dy = p.points[i][1] - g.points[i][1];
                        vals.push((dx * dx + dy * dy).sqrt() / size);
                    }
                }
            }
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect()
}

/// Random landmark instance: ground truth in a 200px frame, prediction
/// perturbed by up to 10px, roughly one in six points invisible.
pub fn random_pair(r: &mut ChaCha8Rng, m: usize) -> (LandmarkSet, LandmarkSet) {
    let gt_pts: Vec<[f64; 2]> = (0..m).map(|_| [r.gen_range(0.0..200.0), r.gen_range(0.0..200.0)]).collect();
    let pred_pts = gt_pts
        .iter()
        .map(|p| [p[0] + r.gen_range(-10.0..10.0), p[1] + r.gen_range(-10.0..10.0)])
        .collect();
    let visible: Vec<bool> = (0..m).map(|_| r.gen_range(0..6) != 0).collect();
    let gt = LandmarkSet::new(gt_pts, visible, "rand").unwrap();
    let pred = LandmarkSet::all_visible(pred_pts, "rand");
    (pred, gt)
}
