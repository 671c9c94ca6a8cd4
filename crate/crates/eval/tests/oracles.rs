use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use trackcast_eval::{assignment_value, iou3d, max_weight_assignment, OrientedBox3D};

fn ob(v: [f64; 7]) -> OrientedBox3D {
    OrientedBox3D {
        x: v[0],
        y: v[1],
        z: v[2],
        l: v[3],
        w: v[4],
        h: v[5],
        theta: v[6],
    }
}

// Exact polygon-clipping values from an independent computational-geometry
// library.
#[rustfmt::skip]
const IOU_CASES: [([f64; 7], [f64; 7], f64); 12] = [
    ([-0.619420, 0.056715, 0.503109, 2.990191, 2.028533, 1.256749, -1.889049], [-0.419590, 0.244247, 1.806559, 1.459322, 2.060222, 1.014568, -2.200601], 0.179924520420),
    ([-1.340134, 0.179420, 0.940042, 4.445147, 1.467629, 1.075114, 2.145764], [-1.219010, 0.077957, 0.856834, 4.174806, 2.264275, 1.016569, -2.672351], 0.234334737161),
    ([0.143273, -0.373399, 1.058931, 4.753397, 2.256424, 1.365387, -1.010712], [-0.079359, -0.104599, 2.218532, 3.144446, 1.804170, 1.292582, 0.864371], 0.245133216404),
    ([-1.500121, -0.476392, -0.485457, 1.740362, 0.883661, 1.327610, 0.594048], [-1.702067, -0.600395, -1.155817, 2.857668, 2.144985, 1.516126, -1.150829], 0.178134930768),
    ([0.577706, 0.449414, 1.218854, 1.485487, 1.509508, 1.285791, 3.029025], [0.662475, 0.578745, 1.146400, 2.636110, 1.632236, 1.092422, 1.693554], 0.440320103282),
    ([0.954431, -0.148787, 0.765293, 4.755026, 2.223147, 1.972153, 0.780756], [2.197592, -0.480539, 1.449185, 2.424891, 1.935155, 1.473381, 1.477199], 0.231520906026),
    ([1.638070, -0.302348, -0.716952, 2.921991, 0.877932, 1.478667, 0.371147], [2.806011, 0.073859, -1.075146, 1.002839, 1.429103, 1.720455, -1.490942], 0.049213428124),
    ([1.980276, -0.489992, -0.575803, 1.764953, 2.063125, 1.957864, 3.047543], [0.324060, -0.896116, -0.273915, 3.372181, 2.267973, 1.629307, 2.249498], 0.105131536095),
    ([1.895708, 0.166045, 1.825666, 4.479175, 2.159703, 1.942488, 0.972048], [3.761822, -0.246916, 3.252207, 3.952189, 2.265532, 1.004048, 1.755226], 0.074153540652),
    ([-1.406894, -0.287129, -1.167460, 3.924085, 1.950207, 1.771644, 1.916499], [-1.514422, 0.107853, 0.699965, 4.250369, 1.471645, 1.658294, 2.832454], 0.080099059185),
    ([-1.648178, -0.109242, 1.719700, 1.896531, 1.539122, 1.787404, -2.073496], [-2.774005, -0.125685, 2.452093, 3.325780, 2.456562, 1.037052, -1.142818], 0.172746401509),
    ([0.790144, 0.028266, 1.502280, 2.405065, 0.954101, 1.137727, 0.361275], [0.567822, -0.405096, 0.309303, 4.394806, 1.090480, 1.114777, -0.848619], 0.067823307359),
];

#[test]
fn iou_matches_polygon_library_values() {
    for (a, b, want) in IOU_CASES {
        let got = iou3d(&ob(a), &ob(b));
        assert!((got - want).abs() < 1e-9, "{a:?} {b:?}: {got} vs {want}");
    }
}

/// Uniform point sampling over the union's bounding box.
fn monte_carlo_iou(a: &OrientedBox3D, b: &OrientedBox3D, n: usize, seed: u64) -> f64 {
    let r = |q: &OrientedBox3D| 0.5 * q.l.hypot(q.w);
    let lo = [
        (a.x - r(a)).min(b.x - r(b)),
        (a.y - a.h / 2.0).min(b.y - b.h / 2.0),
        (a.z - r(a)).min(b.z - r(b)),
    ];
    let hi = [
        (a.x + r(a)).max(b.x + r(b)),
        (a.y + a.h / 2.0).max(b.y + b.h / 2.0),
        (a.z + r(a)).max(b.z + r(b)),
    ];
    let chunks = 16;
    let (both, either) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64) << 20);
            let (mut both, mut either) = (0u64, 0u64);
            for _ in 0..n / chunks {
                let p = [
                    rng.random_range(lo[0]..hi[0]),
                    rng.random_range(lo[1]..hi[1]),
                    rng.random_range(lo[2]..hi[2]),
                ];
                let (ia, ib) = (a.contains(p), b.contains(p));
                both += (ia && ib) as u64;
                either += (ia || ib) as u64;
            }
            (both, either)
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    both as f64 / either as f64
}

#[test]
fn iou_agrees_with_monte_carlo() {
    for (i, (a, b, _)) in IOU_CASES.iter().take(4).enumerate() {
        let (a, b) = (ob(*a), ob(*b));
        let mc = monte_carlo_iou(&a, &b, 1_000_000, i as u64 + 1);
        let exact = iou3d(&a, &b);
        assert!((mc - exact).abs() < 5e-3, "case {i}: {exact} vs sampled {mc}");
    }
}

fn arb_box() -> impl Strategy<Value = OrientedBox3D> {
    (
        -3.0..3.0f64,
        -0.5..0.5f64,
        -3.0..3.0f64,
        0.5..5.0f64,
        0.5..3.0f64,
        0.5..2.0f64,
        -3.14..3.14f64,
    )
        .prop_map(|(x, y, z, l, w, h, theta)| OrientedBox3D { x, y, z, l, w, h, theta })
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let (ab, ba) = (iou3d(&a, &b), iou3d(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn iou_is_invariant_to_rigid_ground_motion(
        a in arb_box(),
        b in arb_box(),
        phi in -3.14..3.14f64,
        tx in -50.0..50.0f64,
        ty in -5.0..5.0f64,
        tz in -50.0..50.0f64,
    ) {
        let (s, c) = phi.sin_cos();
        let mv = |q: &OrientedBox3D| OrientedBox3D {
            x: c * q.x - s * q.z + tx,
            y: q.y + ty,
            z: s * q.x + c * q.z + tz,
            theta: q.theta + phi,
            ..*q
        };
        prop_assert!((iou3d(&a, &b) - iou3d(&mv(&a), &mv(&b))).abs() < 1e-9);
    }

    #[test]
    fn hungarian_matches_brute_force(
        rows in 1usize..6,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let got = assignment_value(&w, &max_weight_assignment(&w));
        prop_assert!((got - brute_force(&w)).abs() < 1e-9);
    }
}

fn brute_force(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        // Leaving a row unassigned is allowed when rows outnumber columns.
        let mut best = go(w, row + 1, used);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(w[row][c] + go(w, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(w, 0, &mut vec![false; w[0].len()])
}

#[test]
fn hungarian_matches_reference_solver() {
    let cases: [(Vec<Vec<f64>>, f64); 5] = [
        (
            vec![vec![0.625, 0.897, 0.776], vec![0.225, 0.3, 0.874], vec![0.005, 0.821, 0.797]],
            2.32,
        ),
        (
            vec![
                vec![0.468, 0.303, 0.278, 0.255, 0.445, 0.505],
                vec![0.553, 0.996, 0.793, 0.622, 0.989, 0.215],
                vec![0.16, 0.613, 0.044, 0.036, 0.515, 0.466],
                vec![0.917, 0.629, 0.514, 0.497, 0.248, 0.012],
            ],
            3.024,
        ),
        (
            vec![
                vec![0.192, 0.692, 0.201, 0.37],
                vec![0.004, 0.83, 0.154, 0.268],
                vec![0.88, 0.51, 0.847, 0.64],
                vec![0.742, 0.091, 0.541, 0.508],
                vec![0.871, 0.361, 0.598, 0.059],
                vec![0.388, 0.323, 0.15, 0.816],
            ],
            3.364,
        ),
        (
            vec![
                vec![0.379, 0.979, 0.59, 0.605, 0.638],
                vec![0.676, 0.151, 0.44, 0.24, 0.402],
                vec![0.097, 0.968, 0.215, 0.672, 0.3],
                vec![0.874, 0.662, 0.132, 0.845, 0.945],
                vec![0.904, 0.57, 0.145, 0.192, 0.928],
            ],
            4.007,
        ),
        (
            vec![
                vec![0.552, 0.181, 0.884],
                vec![0.642, 0.57, 0.376],
                vec![0.411, 0.239, 0.038],
                vec![0.876, 0.468, 0.548],
                vec![0.322, 0.751, 0.025],
                vec![0.372, 0.03, 0.123],
                vec![0.967, 0.658, 0.428],
            ],
            2.602,
        ),
    ];
    for (w, want) in cases {
        let a = max_weight_assignment(&w);
        assert!((assignment_value(&w, &a) - want).abs() < 1e-9);
        let mut cols: Vec<usize> = a.iter().flatten().copied().collect();
        let n = cols.len();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(cols.len(), n);
        assert_eq!(n, w.len().min(w[0].len()));
    }
}
