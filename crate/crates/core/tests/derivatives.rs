//! Gradients of the smooth part against central finite differences.

use jointrecon::dtv::DtvContext;
use jointrecon::fidelity::{Fidelity, FidelityKind};
use jointrecon::grid::{Geometry, ImageGrid};
use jointrecon::operators::OperatorSpec;
use jointrecon::palm::Problem;
use jointrecon::warp::Parametrization;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn operators(n: usize) -> Vec<OperatorSpec> {
    vec![
        OperatorSpec::Identity { complex: false },
        OperatorSpec::FourierMask { size: n, spokes: 15, lowpass: 4 },
        OperatorSpec::Radon { angles: 12, bins: 20, half_width: 2f64.sqrt() },
        OperatorSpec::Downsample { data_shape: [n / 2, n / 2] },
    ]
}

fn params(p: Parametrization, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match p {
        Parametrization::Affine => (0..6).map(|_| rng.random_range(-0.06..0.06)).collect(),
        Parametrization::Rigid => {
            vec![rng.random_range(-0.15..0.15), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)]
        }
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Worst relative error of the u- and phi-gradients for one combination.
fn check(n: usize, spec: &OperatorSpec, kind: FidelityKind, param: Parametrization, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Geometry::<f64>::square(n);
    let op = spec.build(&g, 1.0).unwrap();
    let ch = op.channels();
    let u = ImageGrid::new(g.clone(), ch, (0..n * n * ch).map(|_| rng.random_range(0.2..1.0)).collect()).unwrap();
    let clean = op.apply(&u).unwrap();
    let amax = clean.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (fid, background) = match kind {
        FidelityKind::L2 => {
            (Fidelity::l2(clean.values().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect()).unwrap(), 0.0)
        }
        FidelityKind::Kl => {
            let r = 1.0 + 2.0 * amax;
            let data = clean.values().iter().map(|v| (v + r) * rng.random_range(0.5..1.5)).collect();
            (Fidelity::kl(data, r).unwrap(), r)
        }
    };
    assert!(background >= 0.0);
    let reg = DtvContext::tv(&g, 1.0, false).unwrap();
    let problem = Problem::new(&op, &fid, &reg, param).unwrap();
    let phi = params(param, &mut rng);

    let gu = problem.grad_u(&u, &phi).unwrap();
    let fd_u: Vec<f64> = (0..u.values().len())
        .map(|i| {
            let mut up = u.clone();
            up.values_mut()[i] += H;
            let mut um = u.clone();
            um.values_mut()[i] -= H;
            (problem.smooth_value(&up, &phi).unwrap() - problem.smooth_value(&um, &phi).unwrap()) / (2.0 * H)
        })
        .collect();

    let gp = problem.grad_phi(&u, &phi).unwrap();
    let fd_p: Vec<f64> = (0..phi.len())
        .map(|i| {
            let mut pp = phi.clone();
            pp[i] += H;
            let mut pm = phi.clone();
            pm[i] -= H;
            (problem.smooth_value(&u, &pp).unwrap() - problem.smooth_value(&u, &pm).unwrap()) / (2.0 * H)
        })
        .collect();
    (rel(gu.values(), &fd_u), rel(&gp, &fd_p))
}

#[test]
fn every_combination_matches_finite_differences() {
    let mut worst = (0.0f64, 0.0f64);
    for (k, n) in [12usize, 16].into_iter().enumerate() {
        for spec in operators(n) {
            for kind in [FidelityKind::L2, FidelityKind::Kl] {
                for param in [Parametrization::Affine, Parametrization::Rigid] {
                    let (eu, ep) = check(n, &spec, kind, param, 100 + k as u64);
                    assert!(eu <= 1e-5, "grad_u {spec:?} {kind:?} {param:?} n={n}: {eu:e}");
                    assert!(ep <= 1e-5, "grad_phi {spec:?} {kind:?} {param:?} n={n}: {ep:e}");
                    worst = (worst.0.max(eu), worst.1.max(ep));
                }
            }
        }
    }
    eprintln!("worst relative errors: grad_u {:e}, grad_phi {:e}", worst.0, worst.1);
}
