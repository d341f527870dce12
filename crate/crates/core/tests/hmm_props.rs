mod common;

use common::*;
use proptest::prelude::*;
use topicseg::hmm::{boundary_posteriors, viterbi, viterbi_segment, SegmentHmm};

fn instance(seed: u64, bl: bool, be: bool) -> Instance {
    Instance::random(&mut rng(seed), bl, be)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn forward_total_is_sum_over_paths(seed in any::<u64>(), bl in any::<bool>(), be in any::<bool>()) {
        let inst = instance(seed, bl, be);
        let hmm = SegmentHmm::new(inst.config()).unwrap();
        let post = boundary_posteriors(&hmm, &inst.emissions(), inst.boundary.as_deref()).unwrap();
        let oracle = summarize(&inst);
        prop_assert!((post.log_total - oracle.log_total).abs() < 1e-9);
    }

    #[test]
    fn viterbi_weight_dominates_every_path(seed in any::<u64>(), bl in any::<bool>(), be in any::<bool>()) {
        let inst = instance(seed, bl, be);
        let hmm = SegmentHmm::new(inst.config()).unwrap();
        let path = viterbi(&hmm, &inst.emissions(), inst.boundary.as_deref()).unwrap();
        let paths = enumerate_paths(&inst);
        prop_assert!(paths.iter().all(|p| p.log_weight <= path.log_weight + 1e-9));
        // the returned decisions belong to a path achieving the best weight
        let achieved = paths.iter().any(|p| {
            let d: Vec<bool> = p.topic_boundary.iter().map(Option::is_some).collect();
            d == path.decisions && (p.log_weight - path.log_weight).abs() < 1e-9
        });
        prop_assert!(achieved);
    }

    #[test]
    fn posteriors_normalize(seed in any::<u64>(), bl in any::<bool>(), be in any::<bool>()) {
        let inst = instance(seed, bl, be);
        let hmm = SegmentHmm::new(inst.config()).unwrap();
        let post = boundary_posteriors(&hmm, &inst.emissions(), inst.boundary.as_deref()).unwrap();
        for i in 0..inst.units - 1 {
            prop_assert!((post.yes(i) + post.no(i) - 1.0).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&post.yes(i)));
        }
    }

    #[test]
    fn larger_switch_penalty_never_removes_boundaries(seed in any::<u64>(), bl in any::<bool>(), lo in -10.0f64..2.0, step in 0.01f64..5.0) {
        let inst = instance(seed, bl, false);
        let em = inst.emissions();
        let count = |log_tsp: f64| {
            let mut i = inst.clone();
            i.log_tsp = log_tsp;
            let hmm = SegmentHmm::new(i.config()).unwrap();
            viterbi(&hmm, &em, i.boundary.as_deref()).unwrap().decisions.iter().filter(|&&d| d).count()
        };
        prop_assert!(count(lo) <= count(lo + step));
    }

    #[test]
    fn posterior_yes_increases_with_switch_penalty(seed in any::<u64>(), lo in -10.0f64..2.0, step in 0.01f64..5.0) {
        let inst = instance(seed, true, false);
        let em = inst.emissions();
        let yes = |log_tsp: f64| {
            let mut i = inst.clone();
            i.log_tsp = log_tsp;
            let hmm = SegmentHmm::new(i.config()).unwrap();
            boundary_posteriors(&hmm, &em, i.boundary.as_deref()).unwrap().yes_all()
        };
        let (a, b) = (yes(lo), yes(lo + step));
        // the expected number of boundaries is monotone in the penalty
        prop_assert!(a.iter().sum::<f64>() <= b.iter().sum::<f64>() + 1e-9);
    }

    #[test]
    fn shifting_one_unit_changes_nothing(seed in any::<u64>(), be in any::<bool>(), unit in 0usize..4, delta in -20.0f64..20.0) {
        let inst = instance(seed, true, be);
        let hmm = SegmentHmm::new(inst.config()).unwrap();
        let em = inst.emissions();
        let mut shifted = em.clone();
        shifted.shift_unit(unit % inst.units, delta);
        let a = viterbi_segment(&hmm, &em, inst.boundary.as_deref()).unwrap();
        let b = viterbi_segment(&hmm, &shifted, inst.boundary.as_deref()).unwrap();
        prop_assert_eq!(&a.decisions, &b.decisions);
        for (x, y) in a.posteriors.iter().zip(&b.posteriors) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_combination_weight_ignores_boundary_evidence(seed in any::<u64>(), be in any::<bool>()) {
        let mut inst = instance(seed, true, be);
        inst.mcw = 0.0;
        let hmm = SegmentHmm::new(inst.config()).unwrap();
        let em = inst.emissions();
        let with = viterbi_segment(&hmm, &em, inst.boundary.as_deref()).unwrap();
        let without = viterbi_segment(&hmm, &em, None).unwrap();
        prop_assert_eq!(with, without);
    }
}

#[test]
fn begin_end_states_change_the_path_weight() {
    // a unit that looks like a story opening pulls the boundary next to it
    let inst = Instance {
        clusters: 1,
        units: 3,
        topic: vec![vec![-1.0], vec![-1.0], vec![-1.0]],
        begin_end: Some((vec![-9.0, 0.0, -9.0], vec![-9.0, -9.0, -9.0])),
        boundary: None,
        log_tsp: -0.5,
        mcw: 1.0,
    };
    let hmm = SegmentHmm::new(inst.config()).unwrap();
    let path = viterbi(&hmm, &inst.emissions(), None).unwrap();
    assert_eq!(path.decisions, vec![true, false]);
    assert!((path.log_weight - summarize(&inst).best).abs() < 1e-12);
}
