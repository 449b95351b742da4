//! Property tests over randomly generated systems, networks and programs.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use flexenv::expm::matrix_exponential;
use flexenv::model::{check_state_feasibility, discretize, simulate, DiscreteSystem, LinearLossySystem, Scheme, Trajectory};
use flexenv::opt::{solve_lp, solve_log_box, ConcaveLogProgram, LinearProgram, SolveStatus};
use flexenv::rc::{AmbientSeries, Edge, RcNetwork, Room};
use flexenv::td::compute_td_envelope;
use flexenv::ti_multi::{compute_centralized_envelope, compute_distributed_box, DispatchPlan};
use flexenv::ti_scalar::compute_ti_scalar_envelope;
use flexenv::verify::{check_distributed_soundness, check_envelope_soundness, BruteForceOracle, SOUNDNESS_TOL};

fn metzler(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(0.0..1e-4f64, n * n), prop::collection::vec(0.0..1e-4f64, n), prop::collection::vec(any::<bool>(), n * n))
        .prop_map(move |(off, extra, mask)| {
            let mut a = DMatrix::from_fn(n, n, |i, j| if i != j && mask[i * n + j] { off[i * n + j] } else { 0.0 });
            for i in 0..n {
                let s: f64 = a.row(i).sum();
                a[(i, i)] = -s - extra[i];
            }
            a
        })
}

/// One room with ambient coupling: `C` in J/K, `G` in W/K.
#[derive(Debug, Clone, Copy)]
struct Room1 {
    c: f64,
    g: f64,
    p_max: f64,
    ambient: f64,
}

fn room1() -> impl Strategy<Value = Room1> {
    (5e6..3e7f64, 20.0..80.0f64, 800.0..2000.0f64, 8.0..16.0f64).prop_map(|(c, g, p_max, ambient)| Room1 { c, g, p_max, ambient })
}

fn scalar_system(r: Room1, steps: usize) -> (DiscreteSystem, Trajectory) {
    let sys = LinearLossySystem::scalar(-r.g / r.c, 1.0 / r.c, r.g / r.c, 0.0, r.p_max, 22.0, 24.0, 23.0).unwrap();
    (discretize(&sys, 900.0, steps, Scheme::ExactZoh).unwrap(), Trajectory::constant(900.0, steps, &[r.ambient]))
}

fn network(rooms: &[(f64, f64)], walls: &[f64]) -> RcNetwork {
    RcNetwork {
        rooms: rooms
            .iter()
            .enumerate()
            .map(|(i, &(c, g))| Room { label: format!("r{i}"), capacitance: c, r_amb: Some(1.0 / g), heated: true, p_max: 1500.0 })
            .collect(),
        edges: walls.iter().enumerate().map(|(i, &g)| Edge { i, j: i + 1, r: 1.0 / g }).collect(),
        comfort: Default::default(),
        t0: 23.0,
    }
}

fn chain() -> impl Strategy<Value = RcNetwork> {
    (2usize..=3)
        .prop_flat_map(|n| (prop::collection::vec((4e6..1.2e7f64, 20.0..60.0f64), n), prop::collection::vec(5.0..60.0f64, n - 1)))
        .prop_map(|(rooms, walls)| network(&rooms, &walls))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn exponential_of_metzler_is_nonnegative(a in (1usize..=6).prop_flat_map(metzler), t in 0.0..2e5f64) {
        let e = matrix_exponential(&a, t).unwrap();
        prop_assert!(e.iter().all(|&v| v >= 0.0), "{e}");
    }

    #[test]
    fn simulation_is_bitwise_deterministic(r in room1(), powers in prop::collection::vec(0.0..1.0f64, 12)) {
        let (dsys, d) = scalar_system(r, 12);
        let p = Trajectory::from_series(900.0, &powers.iter().map(|u| u * r.p_max).collect::<Vec<_>>());
        let a = simulate(&dsys, &p, &d).unwrap();
        let b = simulate(&dsys, &p, &d).unwrap();
        prop_assert!(a.values.iter().zip(b.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn more_power_gives_warmer_rooms(r in room1(), base in prop::collection::vec(0.0..1.0f64, 16), extra in prop::collection::vec(0.0..1.0f64, 16)) {
        let (dsys, d) = scalar_system(r, 16);
        let low: Vec<f64> = base.iter().map(|u| u * r.p_max).collect();
        let high: Vec<f64> = low.iter().zip(&extra).map(|(p, e)| p + e * (r.p_max - p)).collect();
        let xl = simulate(&dsys, &Trajectory::from_series(900.0, &low), &d).unwrap();
        let xh = simulate(&dsys, &Trajectory::from_series(900.0, &high), &d).unwrap();
        for k in 0..=16 {
            prop_assert!(xh.values[(k, 0)] >= xl.values[(k, 0)] - 1e-12);
        }
    }

    #[test]
    fn compiled_networks_are_in_the_class(rc in chain(), ambient in -10.0..20.0f64) {
        let (sys, _) = rc.compile(&AmbientSeries::constant(ambient, 900.0, 4), 4).unwrap();
        prop_assert!(sys.validate().is_valid());
        let n = sys.state_dim();
        for i in 0..n {
            prop_assert!(sys.a[(i, i)] <= 0.0);
            for j in 0..n {
                prop_assert!(i == j || sys.a[(i, j)] >= 0.0);
            }
        }
        // every room at the ambient temperature with no heating stays put
        let x = DVector::from_element(n, ambient);
        let dx = &sys.a * &x + &sys.b_d * DVector::from_element(1, ambient);
        prop_assert!(dx.amax() <= 1e-12 * ambient.abs().max(1.0));
    }

    #[test]
    fn scaling_capacities_and_conductances_keeps_a(rc in chain(), factor in 0.1..10.0f64) {
        let mut scaled = rc.clone();
        for room in &mut scaled.rooms {
            room.capacitance *= factor;
            room.r_amb = room.r_amb.map(|r| r / factor);
        }
        for e in &mut scaled.edges {
            e.r /= factor;
        }
        let amb = AmbientSeries::constant(5.0, 900.0, 1);
        let (a, _) = rc.compile(&amb, 1).unwrap();
        let (b, _) = scaled.compile(&amb, 1).unwrap();
        prop_assert!((&a.a - &b.a).amax() <= 1e-12 * a.a.amax());
    }
}

/// Deviation between the two schemes over one day for steps `dt`.
fn scheme_gap(a: f64, gain: f64, p: f64, dt: f64) -> f64 {
    let steps = (86400.0 / dt) as usize;
    let sys = LinearLossySystem::scalar(a, gain, -a, 0.0, 2000.0, 0.0, 100.0, 20.0).unwrap();
    let d = Trajectory::constant(dt, steps, &[5.0]);
    let u = Trajectory::constant(dt, steps, &[p]);
    let euler = simulate(&discretize(&sys, dt, steps, Scheme::ForwardEuler).unwrap(), &u, &d).unwrap();
    let zoh = simulate(&discretize(&sys, dt, steps, Scheme::ExactZoh).unwrap(), &u, &d).unwrap();
    (&euler.values - &zoh.values).amax()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn euler_converges_to_zoh(a in -2e-5..-1e-6f64, gain in 2e-8..2e-7f64, p in 0.0..2000.0f64) {
        let g1 = scheme_gap(a, gain, p, 3600.0);
        let g2 = scheme_gap(a, gain, p, 1800.0);
        let g3 = scheme_gap(a, gain, p, 900.0);
        prop_assert!(g1 >= 1.5 * g2 && g2 >= 1.5 * g3, "{g1} {g2} {g3}");
    }

    #[test]
    fn lp_duality_gap_is_small(seed in any::<u64>(), n in 2usize..60) {
        let lp = random_lp(seed, n);
        let r = solve_lp(&lp);
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        let gap = (r.objective - r.stats.dual_objective).abs() / r.objective.abs().max(1.0);
        prop_assert!(gap <= 1e-6, "gap {gap}");
        prop_assert!(lp.max_residual(&r.z) <= 1e-7);
        // solving again is bitwise identical
        let again = solve_lp(&lp);
        prop_assert!(r.z.iter().zip(&again.z).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn log_box_ignores_row_scaling(seed in any::<u64>(), n in 2usize..8, scale in prop::collection::vec(1e-3..1e3f64, 24)) {
        let base = random_lp(seed, n);
        let mut lp = base.clone();
        lp.objective.iter_mut().for_each(|c| *c = 0.0);
        let mut clp = ConcaveLogProgram::new(lp.clone());
        for v in 0..n {
            clp.add_gap(vec![(v, 1.0)], 10.0);
        }
        let mut scaled = lp;
        for (i, (row, rhs)) in scaled.ineq.iter_mut().enumerate() {
            let s = scale[i % scale.len()];
            row.terms.iter_mut().for_each(|t| t.1 *= s);
            *rhs *= s;
        }
        let mut sclp = ConcaveLogProgram::new(scaled);
        sclp.gaps = clp.gaps.clone();
        let a = solve_log_box(&clp);
        let b = solve_log_box(&sclp);
        prop_assert_eq!(a.status, SolveStatus::Optimal);
        prop_assert_eq!(b.status, SolveStatus::Optimal);
        prop_assert!((clp.log_objective(&a.z) - sclp.log_objective(&b.z)).abs() <= 1e-4);
    }
}

/// Random bounded, feasible LP around a known interior point.
fn random_lp(seed: u64, n: usize) -> LinearProgram {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut lp = LinearProgram::new();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for _ in 0..n {
        lp.add_var(-10.0, 10.0);
    }
    for j in 0..n {
        lp.set_objective(j, rng.gen_range(-1.0..1.0));
    }
    for _ in 0..2 * n {
        let mut terms = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.5) {
                terms.push((j, rng.gen_range(-1.0..1.0)));
            }
        }
        let at: f64 = terms.iter().map(|&(j, c)| c * x0[j]).sum();
        lp.add_le(terms, at + rng.gen_range(0.1..1.0));
    }
    lp
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn td_bounds_are_attained_and_concave_after_the_kink(r in room1()) {
        let (dsys, d) = scalar_system(r, 96);
        let td = compute_td_envelope(&dsys, &d);
        prop_assume!(td.is_ok());
        let td = td.unwrap();
        for p in [&td.argmax, &td.argmin] {
            let xs = simulate(&dsys, p, &d).unwrap();
            prop_assert!(check_state_feasibility(&xs, &dsys.source, 1e-6).unwrap().feasible);
        }
        let e = &td.envelope.e_up;
        let inc: Vec<f64> = (1..=96).map(|k| e[k] - e[k - 1]).collect();
        let full = r.p_max * 900.0;
        if let Some(kink) = inc.iter().position(|&v| v < full * (1.0 - 1e-6)) {
            for w in inc[kink..].windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-6 * full);
            }
        }
    }

    #[test]
    fn ti_scalar_is_nested_feasible_and_sound(r in room1(), steps in 8usize..40) {
        let (dsys, d) = scalar_system(r, steps);
        let td = compute_td_envelope(&dsys, &d);
        prop_assume!(td.is_ok());
        let td = td.unwrap().envelope;
        let ti = compute_ti_scalar_envelope(&dsys, &d).unwrap();
        for k in 0..=steps {
            prop_assert!(ti.envelope.e_up[k] <= td.e_up[k] + 1e-6);
            prop_assert!(ti.envelope.e_down[k] >= td.e_down[k] - 1e-6);
        }
        for (k, p) in ti.high.iter().chain(&ti.low).enumerate() {
            let xs = simulate(&dsys, p, &d).unwrap();
            prop_assert!(check_state_feasibility(&xs, &dsys.source, 1e-6).unwrap().feasible, "comparison trajectory {k}");
        }
        let seeds: Vec<u64> = (0..40).collect();
        prop_assert!(check_envelope_soundness(&dsys, &d, &ti.envelope, &seeds, SOUNDNESS_TOL).unwrap().is_sound());
    }

    #[test]
    fn td_encloses_enumerated_trajectories(r in room1()) {
        let (dsys, d) = scalar_system(r, 4);
        let td = compute_td_envelope(&dsys, &d);
        prop_assume!(td.is_ok());
        let td = td.unwrap().envelope;
        let table = BruteForceOracle::new(&dsys, &d, 5, 4).unwrap().td_table();
        let slack = 1e-6 * td.e_up[4].max(1.0);
        for k in 0..=4 {
            if let (Some(hi), Some(lo)) = (table.max_feasible[k], table.min_feasible[k]) {
                prop_assert!(td.e_down[k] <= lo + slack && hi <= td.e_up[k] + slack);
            }
        }
    }

    #[test]
    fn distributed_box_sits_in_the_polytope_and_is_sound(rc in chain()) {
        let steps = 24;
        let amb = AmbientSeries::constant(12.0, 900.0, steps);
        let (sys, d) = rc.compile(&amb, steps).unwrap();
        let dsys = discretize(&sys, 900.0, steps, Scheme::ExactZoh).unwrap();
        let boxes = compute_distributed_box(&dsys, &d).unwrap();
        prop_assume!(boxes.horizon > 0);
        prop_assert!(boxes.polytope_residual <= 1e-6, "residual {}", boxes.polytope_residual);
        let seeds: Vec<u64> = (0..40).collect();
        prop_assert!(check_distributed_soundness(&dsys, &d, &boxes.loads, &seeds, SOUNDNESS_TOL).unwrap().is_sound());
    }

    #[test]
    fn decoupled_engines_reproduce_the_scalar_engine(rates in prop::collection::vec((1e-6..4e-6f64, 3e-8..8e-8f64), 2..=3)) {
        let steps = 24;
        let n = rates.len();
        let (ambient, p_max) = (19.0, 1000.0);
        let sys = LinearLossySystem::new(
            DMatrix::from_fn(n, n, |i, j| if i == j { -rates[i].0 } else { 0.0 }),
            DMatrix::from_fn(n, n, |i, j| if i == j { rates[i].1 } else { 0.0 }),
            DMatrix::from_fn(n, 1, |i, _| rates[i].0),
            DVector::zeros(n),
            DVector::from_element(n, p_max),
            DVector::from_element(n, 22.0),
            DVector::from_element(n, 24.0),
            DVector::from_element(n, 23.0),
        ).unwrap();
        let dsys = discretize(&sys, 900.0, steps, Scheme::ExactZoh).unwrap();
        let d = Trajectory::constant(900.0, steps, &[ambient]);
        let boxes = compute_distributed_box(&dsys, &d).unwrap();
        let floor = p_max * 900.0;
        for j in 0..n {
            let one = LinearLossySystem::scalar(-rates[j].0, rates[j].1, rates[j].0, 0.0, p_max, 22.0, 24.0, 23.0).unwrap();
            let scalar = compute_ti_scalar_envelope(&discretize(&one, 900.0, steps, Scheme::ExactZoh).unwrap(), &d).unwrap().envelope;
            let cent = compute_centralized_envelope(&dsys, &d, &DispatchPlan::indicator(steps, n, j)).unwrap().envelope;
            for k in 0..=steps {
                let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(floor);
                prop_assert!(rel(boxes.loads[j].e_up[k], scalar.e_up[k]) <= 1e-4);
                prop_assert!(rel(boxes.loads[j].e_down[k], scalar.e_down[k]) <= 1e-4);
                prop_assert!(rel(cent.e_up[k], scalar.e_up[k]) <= 1e-4);
                prop_assert!(rel(cent.e_down[k], scalar.e_down[k]) <= 1e-4);
            }
        }
    }
}
