use ttmfg::benchmarks::{run_ladder, BenchmarkKind, BenchmarkSettings};
use ttmfg::cubature::RuleKind;
use ttmfg::exec::{set_execution, Execution};

fn small_nonlocal() -> BenchmarkSettings {
    let mut s = BenchmarkSettings::defaults(BenchmarkKind::NonlocalMfg);
    s.rule = RuleKind::Sl1;
    s.steps = vec![2, 4];
    s.validation_points = 256;
    s
}

#[test]
fn ladder_is_reproducible_and_independent_of_execution_mode() {
    let s = small_nonlocal();
    let first = run_ladder(&s).unwrap();
    let second = run_ladder(&s).unwrap();
    set_execution(Execution::Sequential);
    let sequential = run_ladder(&s).unwrap();
    set_execution(Execution::Parallel);
    for rows in [&second, &sequential] {
        for (a, b) in first.iter().zip(rows.iter()) {
            assert_eq!(a.value, b.value);
            assert_eq!(a.density, b.density);
            assert_eq!(a.iterations, b.iterations);
        }
    }
}

#[test]
fn first_order_ladder_halves_the_error() {
    let rows = run_ladder(&small_nonlocal()).unwrap();
    let order = rows[1].value_order.unwrap();
    assert!((0.8..1.2).contains(&order), "order {order}");
    assert!(rows.iter().all(|r| r.converged));
}
