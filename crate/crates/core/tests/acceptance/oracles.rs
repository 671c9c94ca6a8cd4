use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use trackcast_autograd::{GradMap, NumArray, Tape};
use trackcast_core::config::RunConfig;
use trackcast_core::train::{estimate_omega, stage1_loss, stage2_loss, training_frames, TrainingFrame};
use trackcast_core::{cvae, dsf, synthesize, Model};
use trackcast_eval::{
    assignment_value, integrated_metrics, iou3d, max_weight_assignment, clear_metrics, OrientedBox3D, Sequence,
    TrackBox,
};

use crate::common::{rng, verdict};
use crate::Outcome;

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-5;

fn toy_setup() -> (RunConfig, Model, TrainingFrame, f64) {
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.model.history = 4;
    cfg.model.horizon = 5;
    cfg.model.samples = 4;
    cfg.model.latent_dim = 3;
    cfg.scene.frames = 14;
    cfg.scene.agents_min = 3;
    cfg.scene.agents_max = 4;
    cfg.scene.area = 15.0;
    cfg.scene.min_spacing = 4.0;
    cfg.train.match_gate = 3.0;
    cfg.validate().unwrap();
    let model = Model::new(&cfg.model, cfg.seed).unwrap();
    let scene = synthesize(&cfg.scene, &cfg.noise, 5).unwrap();
    let frames = training_frames(&scene, 0, &cfg).unwrap();
    let omega = estimate_omega(&model, &frames, &cfg).unwrap();
    let frame = frames
        .into_iter()
        .find(|f| f.pasts.len() >= 3 && f.dets.len() >= 3 && f.forecast_agents().len() >= 2)
        .expect("a frame with several tracks");
    (cfg, model, frame, omega)
}

/// Largest relative error between backprop and central differences over a
/// few random entries of every parameter the loss reaches.
fn check_loss(model: &Model, loss: &dyn Fn(&Model) -> (f64, Option<GradMap>), seed: u64) -> (f64, usize, String) {
    let grads = loss(model).1.expect("loss builds a graph");
    let mut r = rng(seed);
    let mut probe = model.clone();
    let (mut worst, mut checked, mut worst_at) = (0.0f64, 0usize, String::new());

    for (name, g) in &grads {
        let base = model.params.get(name).unwrap().clone();
        let picks: Vec<usize> = (0..base.len().min(3)).map(|_| r.random_range(0..base.len())).collect();
        for idx in picks {
            let mut plus = base.clone();
            plus.data_mut()[idx] += FD_STEP;
            probe.params.set(name, plus).unwrap();
            let up = loss(&probe).0;
            let mut minus = base.clone();
            minus.data_mut()[idx] -= FD_STEP;
            probe.params.set(name, minus).unwrap();
            let down = loss(&probe).0;
            probe.params.set(name, base.clone()).unwrap();
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = g.data()[idx];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            checked += 1;
            if err > worst {
                worst = err;
                worst_at = format!("{name}[{idx}]: {analytic:.6e} vs {numeric:.6e}");
            }
        }
    }
    (worst, checked, worst_at)
}

pub fn gradients() -> Outcome {
    let (cfg, model, frame, omega) = toy_setup();
    let mut aff_cfg = cfg.clone();
    aff_cfg.train.forecast_weight = 0.0;
    let mut fc_cfg = cfg.clone();
    fc_cfg.train.affinity_weight = 0.0;
    let joint = |c: &RunConfig, m: &Model, grads: bool| {
        let tape = Tape::new();
        let l = stage1_loss(&tape, m, &frame, c, &mut rng(99)).unwrap().unwrap().total;
        let v = l.value().item();
        (v, grads.then(|| tape.backward(l).unwrap().for_params(&m.params)))
    };
    let aff = |m: &Model| joint(&aff_cfg, m, true);
    let fc = |m: &Model| joint(&fc_cfg, m, true);
    let sampler = |m: &Model| {
        let tape = Tape::new();
        let l = stage2_loss(&tape, m, &frame, omega).unwrap().unwrap();
        let v = l.value().item();
        (v, Some(tape.backward(l).unwrap().collect(&m.params, |n| n.starts_with("dsf."))))
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, f, seed) in [
        ("L_aff", &aff as &dyn Fn(&Model) -> (f64, Option<GradMap>), 1),
        ("L_cvae", &fc, 2),
        ("L_dsf", &sampler, 3),
    ] {
        let (worst, n, at) = check_loss(&model, f, seed);
        ok &= worst < 1e-4;
        parts.push(format!("{label} max rel err {worst:.2e} over {n} entries (worst {at})"));
    }
    verdict(ok, parts.join("; "))
}

fn brute_force(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = go(w, row + 1, used);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(w[row][j] + go(w, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(w, 0, &mut vec![false; w.first().map_or(0, Vec::len)])
}

pub fn hungarian() -> Outcome {
    let mut r = rng(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (m, n) = (r.random_range(1..=7), r.random_range(1..=7));
        let w: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| r.random_range(0..=50) as f64).collect())
            .collect();
        let assignment = max_weight_assignment(&w);
        let mut cols: Vec<usize> = assignment.iter().flatten().copied().collect();
        cols.sort_unstable();
        cols.dedup();
        let injective = cols.len() == assignment.iter().flatten().count();
        if !injective || assignment_value(&w, &assignment) != brute_force(&w) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} of 1000 random integer matrices differ from brute force"))
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut a = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

pub fn dpp_identity() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = r.random_range(1..=20);
        let rank = r.random_range(1..=n + 3);
        let scale = 10f64.powf(r.random_range(-1.0..1.0));
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..rank).map(|_| {
                let e: f64 = StandardNormal.sample(&mut r);
                scale * e
            }).collect::<Vec<f64>>())
            .collect();
        let l: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum()).collect())
            .collect();
        let eig: f64 = jacobi_eigenvalues(&l).iter().map(|v| 1.0 / (1.0 + v)).sum::<f64>() - n as f64;
        let rows: Vec<Vec<f64>> = l.clone();
        let got = dsf::dpp_loss(&NumArray::from_rows(&rows).unwrap()).unwrap();
        worst = worst.max((got - eig).abs());
    }
    let identity = dsf::dpp_loss(&NumArray::identity(20)).unwrap();
    verdict(
        worst <= 1e-8 && identity == -10.0,
        format!("max |Cholesky − eigen| {worst:.2e} over 500 kernels; L = I(20) gives {identity}"),
    )
}

pub fn kl_divergence() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = r.random_range(1..=8);
        let mu: Vec<f64> = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
        let sigma: Vec<f64> = (0..d).map(|_| r.random_range(0.3..2.5)).collect();
        let exact = cvae::kl_diag_gauss(&mu, &sigma).unwrap();
        let draws = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..draws {
            let mut log_ratio = 0.0;
            for k in 0..d {
                let e: f64 = StandardNormal.sample(&mut r);
                let z = mu[k] + sigma[k] * e;
                log_ratio += -sigma[k].ln() - 0.5 * e * e + 0.5 * z * z;
            }
            sum += log_ratio;
        }
        let mc = sum / draws as f64;
        worst = worst.max((exact - mc).abs() / mc.abs());
    }
    verdict(worst < 0.01, format!("max relative gap to Monte Carlo {:.3}% over 50 Gaussians", 100.0 * worst))
}

fn random_box(r: &mut impl Rng, near: [f64; 3]) -> OrientedBox3D {
    OrientedBox3D {
        x: near[0] + r.random_range(-2.0..2.0),
        y: near[1] + r.random_range(-0.8..0.8),
        z: near[2] + r.random_range(-2.0..2.0),
        l: r.random_range(1.0..6.0),
        w: r.random_range(0.5..3.0),
        h: r.random_range(0.5..3.0),
        theta: r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    }
}

/// Monte Carlo volume overlap from points drawn uniformly inside `a`.
fn monte_carlo_iou(a: &OrientedBox3D, b: &OrientedBox3D, points: usize, r: &mut impl Rng) -> f64 {
    let (sa, ca) = a.theta.sin_cos();
    let (sb, cb) = b.theta.sin_cos();
    let mut inside = 0usize;
    for _ in 0..points {
        let u = r.random_range(-0.5..0.5) * a.l;
        let v = r.random_range(-0.5..0.5) * a.w;
        let y = a.y + r.random_range(-0.5..0.5) * a.h;
        let x = a.x + u * ca - v * sa;
        let z = a.z + u * sa + v * ca;
        let (dx, dz) = (x - b.x, z - b.z);
        let along = dx * cb + dz * sb;
        let across = -dx * sb + dz * cb;
        if along.abs() <= b.l / 2.0 && across.abs() <= b.w / 2.0 && (y - b.y).abs() <= b.h / 2.0 {
            inside += 1;
        }
    }
    let inter = a.volume() * inside as f64 / points as f64;
    inter / (a.volume() + b.volume() - inter)
}

fn aligned(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64) -> OrientedBox3D {
    OrientedBox3D { x, y, z, l, w, h, theta: 0.0 }
}

pub fn iou() -> Outcome {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    let mut overlapping = 0;
    for _ in 0..200 {
        let a = random_box(&mut r, [0.0; 3]);
        let b = random_box(&mut r, [a.x, a.y, a.z]);
        let exact = iou3d(&a, &b);
        overlapping += usize::from(exact > 0.0);
        worst = worst.max((exact - monte_carlo_iou(&a, &b, 1_000_000, &mut r)).abs());
    }
    let unit = aligned(0.0, 0.0, 0.0, 4.0, 2.0, 1.5);
    let cases = [
        (unit, unit, 1.0),
        (unit, aligned(2.0, 0.0, 0.0, 4.0, 2.0, 1.5), 1.0 / 3.0),
        (unit, aligned(0.0, 0.75, 0.0, 4.0, 2.0, 1.5), 1.0 / 3.0),
        (unit, aligned(0.0, 0.0, 1.0, 4.0, 2.0, 1.5), 1.0 / 3.0),
        (unit, aligned(0.0, 0.0, 0.0, 2.0, 1.0, 0.75), 1.0 / 8.0),
        (unit, aligned(1.0, 0.375, 0.5, 4.0, 2.0, 1.5), 5.0625 / 18.9375),
        (unit, aligned(4.0, 0.0, 0.0, 4.0, 2.0, 1.5), 0.0),
        (unit, aligned(9.0, 0.0, 0.0, 4.0, 2.0, 1.5), 0.0),
        (unit, OrientedBox3D { l: 2.0, w: 4.0, theta: std::f64::consts::FRAC_PI_2, ..unit }, 1.0),
        (unit, OrientedBox3D { theta: std::f64::consts::PI, ..unit }, 1.0),
    ];
    let mut worst_exact = 0.0f64;
    for (a, b, want) in cases {
        worst_exact = worst_exact.max((iou3d(&a, &b) - want).abs()).max((iou3d(&b, &a) - want).abs());
    }
    verdict(
        worst < 1e-2 && worst_exact < 1e-9,
        format!(
            "max gap to Monte Carlo {worst:.2e} over 200 pairs ({overlapping} overlapping); axis-aligned cases off by {worst_exact:.1e}"
        ),
    )
}

fn tb(id: u64, x: f64, z: f64, score: f64) -> TrackBox {
    TrackBox {
        id,
        bbox: aligned(x, 0.0, z, 4.0, 2.0, 1.5),
        score,
    }
}

pub fn metric_hand_cases() -> Outcome {
    let gt: Sequence = (0..3).map(|f| vec![tb(1, f as f64, 0.0, 1.0), tb(2, f as f64, 10.0, 1.0)]).collect();
    let mut pred: Sequence = (0..3).map(|f| vec![tb(101, f as f64, 0.0, 1.0), tb(102, f as f64, 10.0, 1.0)]).collect();
    pred[2][1].id = 103;
    let c = clear_metrics(&gt, &pred, 0.25).unwrap();
    let swap_ok = c.id_switches == 1 && c.mota() == 1.0 - 1.0 / 6.0;

    // Ten objects found at confidences 1.0, 0.9, ..., 0.1 and two strays
    // at 0.85 and 0.35. Level k admits k true positives.
    let gt: Sequence = vec![(0..10).map(|i| tb(i, 10.0 * i as f64, 0.0, 1.0)).collect()];
    let mut frame: Vec<TrackBox> = (0..10).map(|i| tb(100 + i, 10.0 * i as f64, 0.0, 1.0 - 0.1 * i as f64)).collect();
    frame.push(tb(500, 0.0, 200.0, 0.85));
    frame.push(tb(501, 50.0, 200.0, 0.35));
    let pred: Sequence = vec![frame];
    let m = integrated_metrics(&[(&gt, &pred)], 0.25, 10).unwrap();
    let smota = [1.0, 1.0, 2.0 / 3.0, 3.0 / 4.0, 4.0 / 5.0, 5.0 / 6.0, 6.0 / 7.0, 6.0 / 8.0, 7.0 / 9.0, 8.0 / 10.0];
    let mota = [1.0, 1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.8, 0.8, 0.8];
    let samota = 1297.0 / 1575.0;
    let amota = 0.89;
    let mut worst = (m.samota - samota).abs().max((m.amota - amota).abs());
    for (k, p) in m.curve.iter().enumerate() {
        worst = worst
            .max((p.smota - smota[k]).abs())
            .max((p.mota - mota[k]).abs())
            .max((p.recall - (k + 1) as f64 / 10.0).abs());
    }
    let sweep_ok = m.curve.len() == 10 && worst < 1e-12;
    verdict(
        swap_ok && sweep_ok,
        format!(
            "id swap: IDS {} MOTA {:.6}; staircase: sAMOTA {:.6} AMOTA {:.6}, max deviation from table {worst:.1e}",
            c.id_switches,
            c.mota(),
            m.samota,
            m.amota
        ),
    )
}
