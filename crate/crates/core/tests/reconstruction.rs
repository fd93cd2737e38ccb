use globcoup::chain::{encode_word, ChainModel};
use globcoup::priming::{sample_scenario, StepConstants};
use globcoup::reconstruct::{
    reconstruct_from_window, select_subsequence, successive_approximation, ReconstructionSchedule, ScheduleBudget,
    SelectionRule,
};
use globcoup::stats;
use proptest::prelude::*;

#[test]
fn reconstructed_path_keeps_the_stationary_law() {
    let m = ChainModel::geometric_binary(0.3, 0.5).unwrap();
    let c = [StepConstants { m: 2.0, n: 2.0 }; 8];
    let law = m.word_law(3).unwrap();
    let mut counts = vec![0u64; 8];
    for seed in 0..30_000 {
        let sc = sample_scenario(&m, 11, 1, seed).unwrap();
        let run = reconstruct_from_window(&m, &sc.innovations.sources, 1, &c).unwrap();
        counts[encode_word(&run.path[8..11], 2).unwrap()] += 1;
    }
    let t = stats::chi_square_gof(&counts, &law);
    assert!(t.p_value > 1e-4, "{t:?}");
}

#[test]
fn agreeing_window_propagates_exactly_for_finite_order() {
    let m = ChainModel::markov(2, 1, vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
    let c = [StepConstants { m: 1.0, n: 1.0 }; 2];
    let (mut agree, mut recovered) = (0, 0);
    for seed in 0..2_000 {
        let sc = sample_scenario(&m, 6, 1, seed).unwrap();
        let run = reconstruct_from_window(&m, &sc.innovations.sources, 1, &c).unwrap();
        if run.z[1] == sc.path[1] {
            agree += 1;
            assert_eq!(run.path[1..], sc.path[1..]);
        }
        recovered += usize::from(run.last() == sc.path.last().copied());
    }
    assert!(recovered >= agree && agree > 0);
}

#[test]
fn successive_stages_recover_the_present() {
    let m = ChainModel::geometric_binary(0.3, 0.5).unwrap();
    let budget = ScheduleBudget {
        stages: 3,
        calibration_replicas: 4_000,
        alpha_replicas: 2_000,
    };
    let sch = ReconstructionSchedule::explicit(&m, &[0.5, 1.0 / 3.0, 0.25], &budget, 1).unwrap();
    assert!(sch.is_partition());
    assert_eq!(sch.stages.len(), 3);
    let (rep, rows) = successive_approximation(&m, &sch, 3_000, 2).unwrap();
    assert_eq!(rows.len(), 9_000);
    for s in &rep.stages {
        let e = s.recovery_given_h.unwrap();
        assert!(e.mean >= 1.0 - 3.0 * s.epsilon - 3.0 * e.stderr, "{s:?}");
    }
    assert!(rep.all_ok());
}

#[test]
fn paper_schedule_grows_linearly() {
    let m = ChainModel::geometric_binary(0.3, 0.5).unwrap();
    let budget = ScheduleBudget {
        stages: 12,
        calibration_replicas: 3_000,
        alpha_replicas: 2_000,
    };
    let sch = ReconstructionSchedule::paper(&m, &budget, 3).unwrap();
    assert!(sch.is_partition());
    assert_eq!(sch.stages.len(), 12);
    let complete = sch.blocks.len() - 1;
    let mut expected = 0.0;
    for b in &sch.blocks[..complete] {
        assert!(b.repetitions as f64 * b.alpha.mean >= 1.0);
        expected += b.repetitions as f64 * b.alpha.mean;
    }
    assert!(expected >= complete as f64);
    for w in sch.blocks.windows(2) {
        assert!(w[1].length >= w[0].length && w[1].epsilon < w[0].epsilon);
    }
}

fn sequence(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..4.0, len)
}

proptest! {
    #[test]
    fn greedy_selection_obeys_its_majorant((a, b) in (1usize..200).prop_flat_map(|n| (sequence(n), sequence(n)))) {
        let s = select_subsequence(&a, &b, SelectionRule::Greedy).unwrap();
        prop_assert!(s.theta.windows(2).all(|w| w[0] < w[1]));
        for (k, &i) in s.theta.iter().enumerate() {
            prop_assert!(a[i] <= b[i] / 2f64.powi(k as i32));
        }
        prop_assert!(s.sum_a <= s.majorant + 1e-9);
    }

    #[test]
    fn block_selection_is_summable((a, b) in (1usize..200).prop_flat_map(|n| (sequence(n), sequence(n)))) {
        let s = select_subsequence(&a, &b, SelectionRule::Blocks).unwrap();
        prop_assert!(s.theta.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.sum_a <= s.majorant + 1e-9);
        prop_assert!(s.sum_b + 1e-9 >= s.blocks as f64);
    }
}
