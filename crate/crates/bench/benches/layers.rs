use criterion::{criterion_group, criterion_main, Criterion};
use mscsa_bench::fixture;
use mscsa_core::{
    CrossScaleAttention, DownsampleStrategy, FeedForward, Mode, MscsaConfig, ParamStore, Session, Tensor,
};
use mscsa_core::params::ParamInit;

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("csa_forward_640x7x7");
    for strategy in DownsampleStrategy::ALL {
        let layer = CrossScaleAttention::new("csa", 640, 8, 24, strategy);
        let mut store = ParamStore::<f32>::new();
        layer.register(&mut store, &mut ParamInit::new(0)).unwrap();
        let x = Tensor::<f32>::from_fn(&[1, 640, 7, 7], |i| ((i % 13) as f32 - 6.0) * 0.1);
        group.bench_function(strategy.name(), |b| {
            b.iter(|| {
                let mut s = Session::new(&store, Mode::Eval);
                let xv = s.input(x.clone());
                layer.forward(&mut s, xv).unwrap()
            })
        });
    }
    group.finish();
}

fn feed_forward(c: &mut Criterion) {
    let layer = FeedForward::new("ffn", 640, 2.0).unwrap();
    let mut store = ParamStore::<f32>::new();
    layer.register(&mut store, &mut ParamInit::new(0)).unwrap();
    let x = Tensor::<f32>::from_fn(&[1, 640, 7, 7], |i| ((i % 7) as f32 - 3.0) * 0.1);
    c.bench_function("ffn_forward_640x7x7", |b| {
        b.iter(|| {
            let mut s = Session::new(&store, Mode::Eval);
            let xv = s.input(x.clone());
            layer.forward(&mut s, xv).unwrap()
        })
    });
}

fn full_model(c: &mut Criterion) {
    let cfg = MscsaConfig::pvtv2_b1();
    let (model, store, pyramid) = fixture(&cfg);
    c.bench_function("pvtv2_b1_forward", |b| {
        b.iter(|| {
            let mut s = Session::new(&store, Mode::Eval);
            model.forward(&mut s, &pyramid).unwrap()
        })
    });
}

criterion_group!(benches, attention, feed_forward, full_model);
criterion_main!(benches);
