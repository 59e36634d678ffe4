use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::DVector;

use sbrl_core::builtin::{example1_storage, example2_beta, example2_plant, example2_storage, Example1};
use sbrl_core::certify::{
    empirical_gain, g_beta, gamma_star_search, h1, StorageFamily, VSearch,
};
use sbrl_core::synth::closed_loop;
use sbrl_core::{
    DisturbanceEnsemble, DomainBox, ExpectationMode, ExpectationRule, ExpectationScheme,
    FeedbackLaw, Sampling,
};

fn scheme(mode: ExpectationMode) -> ExpectationScheme {
    ExpectationScheme {
        mode,
        samples: 10_000,
        seed: 7,
        antithetic: false,
    }
}

fn functionals(c: &mut Criterion) {
    let e = Example1::default();
    let sys = e.system().unwrap();
    let v = example1_storage(e.optimal_p()).unwrap();
    let x = DVector::from_element(1, 1.5);
    let beta = e.optimal_beta();
    for (label, mode) in [
        ("closed_form", ExpectationMode::ClosedForm),
        ("monte_carlo", ExpectationMode::MonteCarlo),
    ] {
        let rule = ExpectationRule::new(sys.noise(), &scheme(mode)).unwrap();
        c.bench_function(&format!("h1/example1/{label}"), |b| {
            b.iter(|| h1(&v, &sys, black_box(&x), beta, &rule).unwrap())
        });
        c.bench_function(&format!("g_beta/example1/{label}"), |b| {
            b.iter(|| g_beta(&v, &sys, black_box(&x), beta, &rule, &VSearch::Auto).unwrap())
        });
    }

    let plant = example2_plant();
    let cl = closed_loop(&plant, &FeedbackLaw::example2()).unwrap();
    let v2 = example2_storage(sbrl_core::builtin::EXAMPLE2_P).unwrap();
    let x2 = DVector::from_vec(vec![1.0, 1.0, 0.5]);
    let rule = ExpectationRule::new(cl.noise(), &scheme(ExpectationMode::ClosedForm)).unwrap();
    c.bench_function("g_beta/example2/closed_form", |b| {
        b.iter(|| g_beta(&v2, &cl, black_box(&x2), example2_beta(), &rule, &VSearch::Auto).unwrap())
    });
}

fn searches(c: &mut Criterion) {
    let e = Example1::default();
    let sys = e.system().unwrap();
    let family = StorageFamily::Scaled {
        base: example1_storage(1.0).unwrap(),
        scales: vec![2.0, 4.0, 6.0],
    };
    let betas = [1.005, e.optimal_beta(), 1.02, 1.1];
    let domain = DomainBox::cube(1, -5.0, 5.0, Sampling::Grid { points_per_axis: 21 }).unwrap();
    let s = scheme(ExpectationMode::ClosedForm);
    c.bench_function("gamma_star_search/example1", |b| {
        b.iter(|| gamma_star_search(&sys, &family, &betas, &domain, &s, &VSearch::Auto).unwrap())
    });

    let mut group = c.benchmark_group("empirical_gain");
    group.sample_size(10);
    group.bench_function("example1/white_noise/K200_N200", |b| {
        b.iter(|| {
            empirical_gain(
                &sys,
                None,
                &DisturbanceEnsemble::WhiteNoise { std_dev: 1.0 },
                200,
                200,
                0.08,
                1,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, functionals, searches);
criterion_main!(benches);
