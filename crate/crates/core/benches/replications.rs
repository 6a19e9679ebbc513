use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use msmic::criteria::CriterionKind;
use msmic::parallel::Execution;
use msmic::sim::{mc_bias, selection_experiment, DgpSpec, ExperimentSpec, FitRecipe, Misspecification, OutcomeLaw, RegressorTerm};

fn dgp() -> DgpSpec {
    DgpSpec {
        arms: 2,
        dim_z: 1,
        propensity: vec![vec![0.3, 0.8]],
        outcome: OutcomeLaw::Gaussian { noise_sd: 1.0 },
        regressors: vec![
            RegressorTerm::ArmIndicator { arm: 1 },
            RegressorTerm::ArmIndicator { arm: 2 },
            RegressorTerm::Covariate { index: 0 },
        ],
        theta: vec![vec![1.0, 0.0, 0.0]],
        confounding: vec![vec![0.8]],
        misspecification: Misspecification::default(),
    }
}

fn spec(recipe: FitRecipe, execution: Execution) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(dgp(), recipe, 500, 64, 1);
    s.pilot_n = 5_000;
    s.execution = execution;
    s
}

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn bias(c: &mut Criterion) {
    let mut g = c.benchmark_group("mc_bias");
    g.sample_size(10);
    for recipe in [FitRecipe::IpwUnknown, FitRecipe::Dr] {
        for (name, mode) in MODES {
            let s = spec(recipe, mode);
            g.bench_with_input(BenchmarkId::new(format!("{recipe:?}"), name), &s, |b, s| b.iter(|| mc_bias(s).unwrap()));
        }
    }
    g.finish();
}

fn selection(c: &mut Criterion) {
    let mut g = c.benchmark_group("selection_experiment");
    g.sample_size(10);
    let candidates = [vec![0, 1], vec![0, 1, 2]];
    let criteria = [CriterionKind::Qicw, CriterionKind::Ipwic2];
    for (name, mode) in MODES {
        let s = spec(FitRecipe::IpwUnknown, mode);
        g.bench_function(name, |b| b.iter(|| selection_experiment(&s, &candidates, &criteria).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bias, selection);
criterion_main!(benches);
