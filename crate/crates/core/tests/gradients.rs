mod common;

use common::{check_case, gradient_cases, GRAD_TOL};

#[test]
fn every_primitive_and_loss_matches_central_differences() {
    let mut failures = Vec::new();
    for (i, case) in gradient_cases().iter().enumerate() {
        let worst = check_case(case, 25, 1000 + i as u64).unwrap();
        if !(worst <= GRAD_TOL) {
            failures.push(format!("{}: relative error {worst:.3e}", case.name));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn checker_detects_a_wrong_gradient() {
    use bioaug_core::autodiff::Tensor;
    use bioaug_core::rng::rng_from;
    // detach makes the analytic gradient zero while the function still varies
    let inst = common::Instance {
        inputs: vec![Tensor::vector(vec![0.3, -0.7, 1.1])],
        f: Box::new(|g, v| {
            let d = g.detach(v[0]);
            g.mul(d, d)
        }),
    };
    let err = common::check_instance(&inst, &mut rng_from(0)).unwrap();
    assert!(err > 0.5, "{err}");
}
