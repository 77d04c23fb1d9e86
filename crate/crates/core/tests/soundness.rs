mod common;

use common::{box_of, invariant_violations, random_rnn_query, replays, rng};
use rnnverify::pipeline::{verify_rnn, verify_rnn_unrolled, PipelineConfig};
use rnnverify::props::Verdict;
use rnnverify::solver::SolverOptions;

/// Holds from the invariant method is never contradicted by unrolling, and
/// every violation replays on the concrete network.
#[test]
fn invariant_verdicts_agree_with_unrolling() {
    let mut r = rng(606);
    let mut tally = [0usize; 3];
    for case in 0..60 {
        let q = random_rnn_query(&mut r);
        let rep = verify_rnn(&q, &PipelineConfig::default()).unwrap();
        let base = verify_rnn_unrolled(&q, &SolverOptions::default()).unwrap();
        match &rep.verdict {
            Verdict::Holds => {
                tally[0] += 1;
                assert!(!matches!(base, Verdict::Violated(_)), "case {case}: unrolling found a counterexample");
                let (lo, hi) = box_of(&q.input, q.network.input_dim());
                assert_eq!(invariant_violations(&q, &rep.invariants, &lo, &hi, 500, &mut r), 0, "case {case}");
            }
            Verdict::Violated(cex) => {
                tally[1] += 1;
                assert!(replays(&q, cex, 1e-9), "case {case}");
                assert!(matches!(base, Verdict::Violated(_)), "case {case}");
            }
            _ => tally[2] += 1,
        }
        if let Verdict::Violated(cex) = &base {
            assert!(replays(&q, cex, 1e-6), "case {case}: unrolled witness");
        }
    }
    assert!(tally[0] >= 10 && tally[1] >= 10, "{tally:?}");
}
