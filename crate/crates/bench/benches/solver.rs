//! Criterion benchmarks for the hot paths of the solver stack: scalar root
//! finding at several depths, full loss/gradient evaluation, and end-to-end
//! global-minimum assembly including classification.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dln_core::{
    classify, expected_loss, global_minimum, loss_gradient, solve_b, Architecture, DataMoments,
    HomogeneousArchitecture, InitScheme, Params,
};

/// Anisotropic but well-conditioned second moment so the solver exercises the
/// full eigendecomposition path rather than the isotropic shortcut.
fn moments(dim: usize, signal: f64) -> DataMoments {
    let a0 = DMatrix::from_fn(
        dim,
        dim,
        |i, j| {
            if i == j {
                1.0 + 0.3 * i as f64
            } else {
                0.05
            }
        },
    );
    let e = DVector::from_fn(dim, |i, _| if i == 0 { signal } else { 0.1 });
    let ey2 = e.dot(&(a0.clone().try_inverse().unwrap() * &e)) + 1.0;
    DataMoments::new(a0, e, ey2, DVector::zeros(dim), 0.0).unwrap()
}

fn homogeneous(depth: usize, dim: usize) -> Architecture {
    HomogeneousArchitecture {
        depth,
        dim,
        noise_var: 0.4,
        gamma: 0.02,
    }
    .to_architecture()
    .unwrap()
}

fn bench_scalar_solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_b");
    for depth in [1usize, 3] {
        let arch = homogeneous(depth, 4);
        let m = moments(4, 2.0);
        group.bench_function(format!("depth_{depth}_dim_4"), |b| {
            b.iter(|| solve_b(black_box(&arch), black_box(&m)).unwrap())
        });
    }
    group.finish();
}

fn bench_loss_and_gradient(c: &mut Criterion) {
    let arch = homogeneous(3, 8);
    let m = moments(8, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let params = Params::init(&arch, InitScheme::Uniform { radius: 0.5 }, &mut rng);

    c.bench_function("expected_loss_depth_3_dim_8", |b| {
        b.iter(|| expected_loss(black_box(&params), black_box(&arch), black_box(&m)).unwrap())
    });
    c.bench_function("loss_gradient_depth_3_dim_8", |b| {
        b.iter(|| loss_gradient(black_box(&params), black_box(&arch), black_box(&m)).unwrap())
    });
}

fn bench_global_minimum(c: &mut Criterion) {
    let arch = homogeneous(2, 4);
    let m = moments(4, 2.0);
    c.bench_function("global_minimum_depth_2_dim_4", |b| {
        b.iter(|| global_minimum(black_box(&arch), black_box(&m)).unwrap())
    });
    c.bench_function("classify_depth_2_dim_4", |b| {
        b.iter(|| classify(black_box(&arch), black_box(&m), true).unwrap())
    });
}

criterion_group!(
    benches,
    bench_scalar_solver,
    bench_loss_and_gradient,
    bench_global_minimum
);
criterion_main!(benches);
