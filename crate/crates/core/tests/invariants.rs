use nalgebra::{DMatrix, DVector};
use popgames::closedloop::integrate;
use popgames::edm::Protocol;
use popgames::equilibria::{is_nash, nash_set, perturbed_equilibrium, perturbed_residual};
use popgames::games::{congestion_example, demand_response_example, task_allocation_example, PopulationGame};
use popgames::passivity::{AntistorageFunction, StorageFunction};
use popgames::pdm::{PdmModel, PdmState};
use popgames::simplex::{lattice, sup_distance, sup_norm};
use popgames::SimplexState;
use proptest::prelude::*;

fn unit(v: &[f64]) -> SimplexState {
    SimplexState::unit(v.to_vec()).unwrap()
}

fn start(pdm: &PdmModel, x0: &SimplexState) -> PdmState {
    pdm.default_state(x0).unwrap()
}

#[test]
fn perturbed_equilibrium_matches_grid_oracle() {
    let g = demand_response_example();
    let pe = perturbed_equilibrium(&g, 0.1, 0.5, 1e-12, 100_000).unwrap();
    assert_eq!(pe.len(), 1);
    let z = pe.points()[0].entries().to_vec();

    let res = 2000;
    let mut best = (f64::INFINITY, Vec::new());
    for p in lattice(3, res, 1.0) {
        let r = perturbed_residual(&g, &SimplexState::unit(p.clone()).unwrap(), 0.1).unwrap();
        if r < best.0 {
            best = (r, p);
        }
    }
    assert!(sup_distance(&z, &best.1) <= 2.0 / res as f64, "{z:?} vs {:?}", best.1);
}

#[test]
fn step_halving_agrees() {
    let cases: Vec<(PdmModel, Protocol, Vec<f64>)> = vec![
        (PdmModel::memoryless(congestion_example()), Protocol::bnn(3).unwrap(), vec![0.6, 0.3, 0.1]),
        (
            PdmModel::anticipatory(congestion_example(), 1.0, 5.0).unwrap(),
            Protocol::bnn(3).unwrap(),
            vec![0.1, 0.1, 0.8],
        ),
        (
            PdmModel::smoothing(demand_response_example(), 1.0).unwrap(),
            Protocol::smith(3).unwrap(),
            vec![1.0, 0.0, 0.0],
        ),
        (PdmModel::memoryless(task_allocation_example()), Protocol::logit(3, 25.0).unwrap(), vec![0.2, 0.5, 0.3]),
    ];
    for (pdm, protocol, x0) in cases {
        let x0 = unit(&x0);
        let q0 = start(&pdm, &x0);
        let a = integrate(&pdm, &protocol, &x0, &q0, 20.0, 0.01).unwrap();
        let b = integrate(&pdm, &protocol, &x0, &q0, 20.0, 0.005).unwrap();
        let d = sup_distance(a.final_state().entries(), b.final_state().entries());
        assert!(d <= 1e-6, "{} / {:?}: {d}", protocol.name(), pdm.kind());
    }
}

#[test]
fn storage_is_nonincreasing_for_memoryless_contractive_loops() {
    let cases =
        [(congestion_example(), Protocol::bnn(3).unwrap()), (demand_response_example(), Protocol::smith(3).unwrap())];
    for (game, protocol) in cases {
        let pdm = PdmModel::memoryless(game);
        let sf = StorageFunction::for_protocol(&protocol).unwrap();
        for x0 in [[1.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.2, 0.2, 0.6]] {
            let x0 = unit(&x0);
            let mut traj = integrate(&pdm, &protocol, &x0, &start(&pdm, &x0), 30.0, 0.01).unwrap();
            traj.annotate(None, Some(&sf)).unwrap();
            let s = traj.storage_series().unwrap();
            assert!(s.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{}", protocol.name());
            assert!(s.iter().all(|&v| v >= -1e-12));
        }
    }
}

#[test]
fn storage_plus_antistorage_is_nonincreasing_for_dynamic_pdms() {
    let cases = [
        (PdmModel::anticipatory(congestion_example(), 1.0, 5.0).unwrap(), Protocol::bnn(3).unwrap()),
        (PdmModel::smoothing(demand_response_example(), 1.0).unwrap(), Protocol::smith(3).unwrap()),
        (PdmModel::smoothing(congestion_example(), 0.3).unwrap(), Protocol::smith(3).unwrap()),
    ];
    for (pdm, protocol) in cases {
        let sf = StorageFunction::for_protocol(&protocol).unwrap();
        let af = AntistorageFunction::affine_quadratic_for_pdm(&pdm).unwrap();
        for x0 in [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.3, 0.3, 0.4]] {
            let x0 = unit(&x0);
            let traj = integrate(&pdm, &protocol, &x0, &start(&pdm, &x0), 30.0, 0.01).unwrap();
            let total: Vec<f64> = (0..traj.len())
                .map(|k| sf.eval_raw(traj.x(k), 1.0, traj.p(k)).unwrap() + af.eval_raw(traj.x(k), traj.q(k)).unwrap())
                .collect();
            let rise = total.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            assert!(rise <= 1e-6, "{} / {:?}: {rise}", protocol.name(), pdm.kind());
        }
    }
}

#[test]
fn pdm_state_stays_bounded() {
    let pdm = PdmModel::general(congestion_example(), 2.0, 0.3, 0.7, 0.4).unwrap();
    let protocol = Protocol::smith(3).unwrap();
    let x0 = unit(&[0.0, 0.0, 1.0]);
    let q0 = PdmState::new(vec![3.0, -4.0, 1.0]).unwrap();
    let bound = pdm.state_bound(&q0);
    let traj = integrate(&pdm, &protocol, &x0, &q0, 20.0, 0.01).unwrap();
    for k in 0..traj.len() {
        assert!(sup_norm(traj.q(k)) <= bound + 1e-9);
    }
}

fn contractive_game(n: usize, seed: &[f64], offset: &[f64]) -> PopulationGame {
    let a = DMatrix::from_row_slice(n, n, &seed[..n * n]);
    let f = -(&a * a.transpose() + DMatrix::identity(n, n) * 0.5);
    PopulationGame::affine(f, DVector::from_row_slice(&offset[..n]), 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn strictly_contractive_affine_games_have_one_nash_point(
        n in 2usize..6,
        seed in prop::collection::vec(-2.0f64..2.0, 25),
        offset in prop::collection::vec(-3.0f64..3.0, 5),
    ) {
        let g = contractive_game(n, &seed, &offset);
        let set = nash_set(&g, 0, 1e-9).unwrap();
        prop_assert_eq!(set.len(), 1);
        prop_assert!(is_nash(&g, &set.points()[0], 1e-8).unwrap());
    }

    #[test]
    fn closed_loop_stays_on_simplex(
        weights in prop::collection::vec(0.0f64..1.0, 3),
        protocol_ix in 0usize..3,
    ) {
        prop_assume!(weights.iter().sum::<f64>() > 1e-3);
        let total: f64 = weights.iter().sum();
        let x0 = unit(&weights.iter().map(|w| w / total).collect::<Vec<_>>());
        let protocol = match protocol_ix {
            0 => Protocol::bnn(3).unwrap(),
            1 => Protocol::smith(3).unwrap(),
            _ => Protocol::logit(3, 0.5).unwrap(),
        };
        let pdm = PdmModel::anticipatory(congestion_example(), 1.0, 5.0).unwrap();
        let traj = integrate(&pdm, &protocol, &x0, &start(&pdm, &x0), 5.0, 0.01).unwrap();
        for k in 0..traj.len() {
            let x = traj.x(k);
            prop_assert!(x.iter().all(|&v| v >= 0.0));
            prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(traj.projection_correction() < 1e-5);
    }

    #[test]
    fn mean_dynamic_is_tangent(
        weights in prop::collection::vec(0.01f64..1.0, 4),
        r in prop::collection::vec(-5.0f64..5.0, 4),
        mass in 0.5f64..3.0,
    ) {
        let total: f64 = weights.iter().sum();
        let z: Vec<f64> = weights.iter().map(|w| w / total * mass).collect();
        for protocol in [Protocol::bnn(4).unwrap(), Protocol::smith(4).unwrap(), Protocol::logit(4, 0.7).unwrap()] {
            let mut v = vec![0.0; 4];
            protocol.mean_dynamic_into(&z, mass, &r, &mut v).unwrap();
            prop_assert!(v.iter().sum::<f64>().abs() < 1e-10);
        }
    }
}
