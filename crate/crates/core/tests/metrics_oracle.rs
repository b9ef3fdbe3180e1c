use proptest::prelude::*;

use factgraph_core::eval::{macro_f1, MetricError};
use factgraph_core::nodes::Label;

fn binary() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Supports), Just(Label::Refutes)]
}

fn pairs() -> impl Strategy<Value = Vec<(Label, Label)>> {
    prop::collection::vec((binary(), binary()), 1..80)
}

fn confusion_oracle(pairs: &[(Label, Label)]) -> f64 {
    let idx = |l: Label| usize::from(l == Label::Refutes);
    let mut m = [[0.0f64; 2]; 2];
    for &(p, g) in pairs {
        m[idx(g)][idx(p)] += 1.0;
    }
    let f1 = |c: usize| {
        let tp = m[c][c];
        let col = m[0][c] + m[1][c];
        let row = m[c][0] + m[c][1];
        let p = if col > 0.0 { tp / col } else { 0.0 };
        let r = if row > 0.0 { tp / row } else { 0.0 };
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    };
    (f1(0) + f1(1)) / 2.0
}

fn swap(l: Label) -> Label {
    match l {
        Label::Supports => Label::Refutes,
        Label::Refutes => Label::Supports,
        other => other,
    }
}

fn score(pairs: &[(Label, Label)]) -> f64 {
    let (p, g): (Vec<Label>, Vec<Label>) = pairs.iter().copied().unzip();
    macro_f1(&p, &g).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matches_confusion_matrix(pairs in pairs()) {
        prop_assert!((score(&pairs) - confusion_oracle(&pairs)).abs() < 1e-12);
    }

    #[test]
    fn class_swap_is_symmetric(pairs in pairs()) {
        let swapped: Vec<(Label, Label)> = pairs.iter().map(|&(p, g)| (swap(p), swap(g))).collect();
        prop_assert!((score(&pairs) - score(&swapped)).abs() < 1e-12);
    }

    #[test]
    fn order_does_not_matter(pairs in pairs(), seed in any::<u64>()) {
        let mut shuffled = pairs.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert!((score(&pairs) - score(&shuffled)).abs() < 1e-12);
    }

    #[test]
    fn bounded(pairs in pairs()) {
        let s = score(&pairs);
        prop_assert!((0.0..=1.0).contains(&s));
        let all_right = pairs.iter().all(|(p, g)| p == g);
        let both_classes = pairs.iter().any(|p| p.1 == Label::Supports) && pairs.iter().any(|p| p.1 == Label::Refutes);
        prop_assert_eq!(s == 1.0, all_right && both_classes);
    }
}

#[test]
fn rejects_bad_input() {
    use Label::{Supports as S, Uncertain as U};
    assert_eq!(macro_f1(&[], &[]), Err(MetricError::Empty));
    assert_eq!(
        macro_f1(&[S], &[S, S]),
        Err(MetricError::LengthMismatch { preds: 1, golds: 2 })
    );
    assert_eq!(macro_f1(&[U], &[S]), Err(MetricError::NonBinary(U)));
}
