//! Dot-product tests `<A x, y> = <x, A^* y>` for every linear map.

use jointrecon::grid::{divergence, gradient, Geometry, ImageGrid, VectorField};
use jointrecon::operators::OperatorSpec;
use jointrecon::warp::{warp, warp_adjoint_u, DeformationField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PAIRS: u64 = 20;
const TOL: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
}

#[test]
fn gradient_and_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..PAIRS {
        let (n0, n1) = (rng.random_range(4..=64), rng.random_range(4..=64));
        let channels = rng.random_range(1..=2);
        let g = Geometry::<f64>::domain(&[n0, n1]);
        let u = ImageGrid::new(g.clone(), channels, random(&mut rng, n0 * n1 * channels)).unwrap();
        let w = VectorField::new(g.clone(), channels, random(&mut rng, 2 * n0 * n1 * channels)).unwrap();
        let lhs = dot(gradient(&u).values(), w.values());
        let rhs = -dot(u.values(), divergence(&w).values());
        assert!(rel(lhs, rhs) <= TOL, "{n0}x{n1}: {lhs} vs {rhs}");
    }
}

#[test]
fn warp_in_u() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..PAIRS {
        let (n0, n1) = (rng.random_range(4..=64), rng.random_range(4..=64));
        let g = Geometry::<f64>::domain(&[n0, n1]);
        let a: Vec<f64> = random(&mut rng, 6).iter().map(|x| 0.2 * x).collect();
        let wobble = rng.random_range(0.0..0.1);
        let phi = DeformationField::from_fn(&g, |x| {
            vec![
                (1.0 + a[0]) * x[0] + a[1] * x[1] + a[4] + wobble * (3.0 * x[1]).sin(),
                a[2] * x[0] + (1.0 + a[3]) * x[1] + a[5] - wobble * x[0] * x[0],
            ]
        });
        let u = ImageGrid::real(g.clone(), random(&mut rng, n0 * n1)).unwrap();
        let y = ImageGrid::real(g.clone(), random(&mut rng, n0 * n1)).unwrap();
        let lhs = dot(warp(&u, &phi).unwrap().values(), y.values());
        let rhs = dot(u.values(), warp_adjoint_u(&phi, &y, &g).unwrap().values());
        assert!(rel(lhs, rhs) <= TOL, "{n0}x{n1}: {lhs} vs {rhs}");
    }
}

fn check_operator(make: impl Fn(&mut ChaCha8Rng) -> (OperatorSpec, usize), seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PAIRS {
        let (spec, n) = make(&mut rng);
        let g = Geometry::<f64>::square(n);
        let op = spec.build(&g, rng.random_range(0.5..2.0)).unwrap();
        let ch = op.channels();
        let x = ImageGrid::new(g.clone(), ch, random(&mut rng, n * n * ch)).unwrap();
        let y = random(&mut rng, op.data_len());
        let lhs = dot(op.apply(&x).unwrap().values(), &y);
        let rhs = dot(x.values(), &op.adjoint_raw(&y));
        assert!(rel(lhs, rhs) <= TOL, "{spec:?} at {n}: {lhs} vs {rhs}");
    }
}

#[test]
fn identity_operator() {
    check_operator(|rng| (OperatorSpec::Identity { complex: rng.random_bool(0.5) }, rng.random_range(4..=64)), 3);
}

#[test]
fn fourier_operator() {
    check_operator(
        |rng| {
            let n = rng.random_range(8..=64);
            let size = [n, 64, 2 * n][rng.random_range(0..3)];
            (OperatorSpec::FourierMask { size, spokes: 15, lowpass: rng.random_range(2..=10) }, n)
        },
        4,
    );
}

#[test]
fn radon_operator() {
    check_operator(
        |rng| {
            let spec = OperatorSpec::Radon {
                angles: rng.random_range(1..=60),
                bins: rng.random_range(4..=96),
                half_width: rng.random_range(1.0..1.6),
            };
            (spec, rng.random_range(4..=64))
        },
        5,
    );
}

#[test]
fn downsample_operator() {
    check_operator(
        |rng| {
            let n = rng.random_range(8..=64);
            let m = rng.random_range(2..=n);
            (OperatorSpec::Downsample { data_shape: [m, rng.random_range(2..=n)] }, n)
        },
        6,
    );
}
