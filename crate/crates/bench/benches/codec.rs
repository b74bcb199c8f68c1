use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use reram_puf::mle::calibration::default_warmup_temperatures;
use reram_puf::mle::{warmup_history, ModelConfig, PredictorModel};
use reram_puf::multistate::{error_vector, StateQuantizer};
use reram_puf::reram_model::{DriftLaw, Environment, PopulationParams, PufArray};

fn array(cells: usize) -> PufArray {
    let params = PopulationParams { cell_count: cells, ..Default::default() };
    PufArray::sample(&params, &DriftLaw::default(), 1).unwrap()
}

fn codec(c: &mut Criterion) {
    let env = Environment::reference(&DriftLaw::default());
    let mut group = c.benchmark_group("codec");
    for cells in [128usize, 1024, 10_000] {
        let a = array(cells);
        let enrolled = a.measure_sweep(&env, 1).unwrap();
        let later = a.measure_sweep(&env, 2).unwrap();
        let q = StateQuantizer::calibrate(&enrolled, 8).unwrap();
        let (ch, re) = (q.encode(&enrolled), q.encode(&later));
        group.bench_with_input(BenchmarkId::new("measure_sweep", cells), &a, |b, a| {
            b.iter(|| a.measure_sweep(&env, 3).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("calibrate", cells), &enrolled, |b, s| {
            b.iter(|| StateQuantizer::calibrate(s, 8).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("encode", cells), &later, |b, s| b.iter(|| q.encode(s)));
        group.bench_with_input(BenchmarkId::new("error_vector", cells), &(ch, re), |b, (c, r)| {
            b.iter(|| error_vector(c, r).unwrap())
        });
    }
    group.finish();
}

fn mle(c: &mut Criterion) {
    let a = array(128);
    let env = Environment::reference(&DriftLaw::default());
    let enrolled = a.measure_sweep(&env, 1).unwrap();
    let q = StateQuantizer::calibrate(&enrolled, 8).unwrap();
    let challenge = q.encode(&enrolled);
    let envs: Vec<_> = default_warmup_temperatures().into_iter().map(|t| Environment::new(t, 0.0).unwrap()).collect();
    let history = warmup_history(&a, 0..128, &q, &challenge, &envs, 5).unwrap();
    let model = PredictorModel::fit(ModelConfig::new(8, 2), history.clone()).unwrap();
    let observed = history[3].ve.clone();

    let mut group = c.benchmark_group("mle");
    group.bench_function("fit_12", |b| b.iter(|| PredictorModel::fit(ModelConfig::new(8, 2), history.clone()).unwrap()));
    group.bench_function("decide", |b| b.iter(|| model.decide(&observed, &[40.0, 0.0], 1.0).unwrap()));
    group.bench_function("update", |b| b.iter(|| model.update(history[0].clone()).unwrap()));
    group.finish();
}

criterion_group!(benches, codec, mle);
criterion_main!(benches);
