use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vnafford::geometry::{knn_graph, random_rotation};
use vnafford::heads::{EncoderKind, Model, ModelConfig};
use vnafford::sim::{execute_primitive, render_cloud, GripperAction};
use vnafford::tensor::zeros_like;
use vnafford::vn::{EncoderConfig, VnEncoder};
use vnafford::PrimitiveType;
use vnafford_bench::{drawer_cloud, rng};

fn bench_knn(c: &mut Criterion) {
    let mut g = c.benchmark_group("knn_graph");
    for n in [256, 1024] {
        let (_, cloud) = drawer_cloud(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &cloud, |b, cloud| {
            b.iter(|| knn_graph(cloud, 16).unwrap())
        });
    }
    g.finish();
}

fn bench_encoder(c: &mut Criterion) {
    let enc = VnEncoder::<f32>::new(EncoderConfig::default(), &mut rng(2));
    let mut g = c.benchmark_group("vn_encoder");
    g.sample_size(10);
    for n in [256, 1024] {
        let (_, cloud) = drawer_cloud(n, 3);
        g.bench_with_input(BenchmarkId::new("forward", n), &cloud, |b, cloud| {
            b.iter(|| enc.forward(cloud).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("forward_backward", n), &cloud, |b, cloud| {
            b.iter(|| {
                let (out, cache) = enc.forward(cloud).unwrap();
                let mut grads = zeros_like(&enc);
                enc.backward(&cache, &out.inv, &out.eqv, &mut grads);
                grads
            })
        });
    }
    g.finish();
}

fn bench_inference(c: &mut Criterion) {
    let model = Model::<f32>::new(ModelConfig::new(EncoderKind::VectorNeuron, PrimitiveType::Pull), &mut rng(4)).unwrap();
    let (_, cloud) = drawer_cloud(1024, 5);
    let mut g = c.benchmark_group("inference");
    g.sample_size(10);
    g.bench_function("infer_best_action_k100", |b| {
        let mut r = rng(6);
        b.iter(|| model.infer_best_action(&cloud, PrimitiveType::Pull, 100, &mut r).unwrap())
    });
    g.finish();
}

fn bench_sim(c: &mut Criterion) {
    let (state, cloud) = drawer_cloud(1024, 7);
    let mut r = rng(8);
    let actions: Vec<GripperAction> = (0..256)
        .map(|i| GripperAction {
            primitive: PrimitiveType::Pull,
            contact_point: cloud.point(i * 4),
            orientation: random_rotation(&mut r),
        })
        .collect();
    c.bench_function("execute_primitive", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % actions.len();
            execute_primitive(&state, &actions[i])
        })
    });
    c.bench_function("render_cloud_1024", |b| b.iter(|| render_cloud(&state, 1024, &mut r).unwrap()));
}

criterion_group!(benches, bench_knn, bench_encoder, bench_inference, bench_sim);
criterion_main!(benches);
