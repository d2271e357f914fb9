mod common;

use common::*;
use dynwm::harness::sim::run_scenario;
use dynwm::random::{stream_rng, NoiseDist, Stream};

#[test]
fn hundred_step_scalar_loop_follows_the_recursion() {
    let s = scenario(SCALAR, 100, "kind = \"honest\"", "enabled = false");
    let tr = run_scenario(&s, 2024).unwrap();
    assert_eq!(tr.len(), 100);

    // Rebuild the whole loop from the seeded noise streams.
    let mut rng_w = stream_rng(2024, Stream::Process);
    let mut rng_e = stream_rng(2024, Stream::Excitation(0));
    let w_law = NoiseDist::gaussian(1.0);
    let e_law = NoiseDist::gaussian(0.25);
    let mut x = 0.0;
    for t in 0..100 {
        assert_eq!(tr.x.row(t)[0], x, "t={t}");
        assert_eq!(tr.z.row(t)[0], x);
        let ug = -0.3 * x;
        let e = e_law.sample(&mut rng_e);
        assert_eq!(tr.u_g.row(t)[0], ug);
        assert_eq!(tr.e_raw.row(t)[0], e);
        assert_eq!(tr.u.row(t)[0], ug + e);
        if t < 99 {
            let w = w_law.sample(&mut rng_w);
            assert_eq!(tr.w.row(t + 1)[0], w);
            x = 0.5 * x + (ug + e) + w;
        }
    }
}

#[test]
fn recorded_values_are_stable() {
    let s = scenario(SCALAR, 100, "kind = \"honest\"", "enabled = false");
    let tr = run_scenario(&s, 2024).unwrap();
    let head: Vec<f64> = (0..5).map(|t| tr.z.row(t)[0]).collect();
    assert_eq!(head, GOLDEN_HEAD);
    assert_eq!(tr.z.row(99)[0], GOLDEN_LAST);
}

// Pinned output of seed 2024; a change here means the random streams moved.
const GOLDEN_HEAD: [f64; 5] = [0.0, 1.260979288608359, -1.4670871403754244, 0.9213286862927411, 1.1962190066332927];
const GOLDEN_LAST: f64 = -0.49239543385255785;
