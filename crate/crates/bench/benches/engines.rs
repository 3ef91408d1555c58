use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use wasmlab_bench::{printf_workload, probe, subject};
use wasmlab_core::linmem::mini_printf;
use wasmlab_core::miniquery::{default_fixture, execute, prepare, Value};
use wasmlab_core::minitemplate::{compile_and_render, Context};
use wasmlab_core::regexlite::{match_steps, StepBudget};

fn regex(c: &mut Criterion) {
    let text = subject("trustno1");
    let mut g = c.benchmark_group("regexlite");
    g.sample_size(10);
    for (label, prefix) in [("miss", "z"), ("hit", "t")] {
        let ast = probe(prefix);
        g.bench_with_input(BenchmarkId::new("probe", label), &ast, |b, ast| {
            b.iter(|| match_steps(black_box(ast), black_box(&text), StepBudget::default()))
        });
    }
    g.finish();
}

fn query(c: &mut Criterion) {
    let store = default_fixture();
    let sql = "SELECT name, role FROM users WHERE id = ?";
    let stmt = prepare(sql, true).unwrap();
    c.bench_function("miniquery/prepared_lookup", |b| {
        b.iter(|| execute(&stmt, sql, &[Value::Int(black_box(2))], &store).unwrap())
    });
    c.bench_function("miniquery/prepare", |b| b.iter(|| prepare(black_box(sql), true).unwrap()));
}

fn printf(c: &mut Criterion) {
    let (mut mem, prog, args) = printf_workload();
    c.bench_function("mini_printf/all_specs", |b| {
        b.iter(|| mini_printf(&mut mem, black_box(&prog), black_box(&args)).unwrap())
    });
}

fn template(c: &mut Criterion) {
    let ctx = Context::new();
    c.bench_function("minitemplate/render", |b| {
        b.iter(|| compile_and_render(black_box("<p nonce=\"#{7*7}\">hello #{(1+2)*3}</p>"), &ctx).unwrap())
    });
}

criterion_group!(benches, regex, query, printf, template);
criterion_main!(benches);
