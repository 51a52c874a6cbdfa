use std::cmp::Ordering;

use attrforge_core::citation::AttributedResponse;
use attrforge_core::gateway::{LogprobRequest, LogprobResult, GatewayError, SequenceScorer};
use attrforge_core::preference::{
    build_pairs, classify, dpo_loss, dpo_reward, neg_log_sigmoid, validate_pairs, DpoConfig, Objective, PairLogprobs,
};
use attrforge_core::rewards::{RewardBreakdown, RewardConfig};
use attrforge_core::selection::{candidate_id, compare_candidates, rank_and_select, ScoredCandidate};
use proptest::prelude::*;

fn cand(i: usize, attr: f64, lr: f64, compre: f64, text: String) -> ScoredCandidate {
    let cfg = RewardConfig::default();
    ScoredCandidate {
        query_id: "q".into(),
        candidate_id: candidate_id("q", i),
        text,
        parsed: AttributedResponse::default(),
        breakdown: Some(RewardBreakdown::new(attr, lr, compre, &cfg)),
        passed: cfg.attr_passes(attr) && cfg.compre_passes(compre),
        rank: None,
        error: None,
        unreachable: false,
    }
}

fn pool() -> impl Strategy<Value = Vec<ScoredCandidate>> {
    let attr = prop_oneof![Just(1.0), Just(0.5), Just(0.0), 0.0f64..1.0];
    let compre = prop_oneof![Just(1.0), Just(0.8), Just(0.5), 0.0f64..=1.0];
    let lr = prop_oneof![Just(0.0), Just(0.5), Just(-0.5), -3.0f64..3.0];
    prop::collection::vec((attr, lr, compre, 0u8..6), 1..17).prop_map(|xs| {
        xs.into_iter()
            .enumerate()
            .map(|(i, (a, l, c, t))| cand(i, a, l, c, format!("text {t}")))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ranking_is_a_total_order(cs in pool()) {
        for a in &cs {
            prop_assert_eq!(compare_candidates(a, a), Ordering::Equal);
            for b in &cs {
                prop_assert_eq!(compare_candidates(a, b), compare_candidates(b, a).reverse());
                for c in &cs {
                    if compare_candidates(a, b) != Ordering::Greater && compare_candidates(b, c) != Ordering::Greater {
                        prop_assert_ne!(compare_candidates(a, c), Ordering::Greater);
                    }
                }
            }
        }
    }

    #[test]
    fn top_candidate_dominates_passed(mut cs in pool()) {
        let top = rank_and_select(&mut cs).cloned();
        let passed: Vec<&ScoredCandidate> = cs.iter().filter(|c| c.passed).collect();
        match top {
            None => prop_assert!(passed.is_empty()),
            Some(t) => {
                prop_assert_eq!(t.rank, Some(1));
                let th = t.breakdown.unwrap().holistic;
                for c in &passed {
                    prop_assert!(c.breakdown.unwrap().holistic <= th);
                    prop_assert!(c.rank.is_some());
                }
                let mut ranks: Vec<usize> = passed.iter().map(|c| c.rank.unwrap()).collect();
                ranks.sort_unstable();
                prop_assert_eq!(ranks, (1..=passed.len()).collect::<Vec<_>>());
            }
        }
        prop_assert!(cs.iter().filter(|c| !c.passed).all(|c| c.rank.is_none()));
    }

    #[test]
    fn every_pair_is_sound(mut cs in pool(), max in 1usize..4) {
        let cfg = RewardConfig::default();
        let Some(top) = rank_and_select(&mut cs).cloned() else { return Ok(()); };
        let pairs = build_pairs(&cs, &top, "prompt", &cfg, max, Some(1));
        validate_pairs(&pairs, &cfg).unwrap();
        for p in &pairs {
            prop_assert_eq!(&p.chosen, &top.text);
            prop_assert_ne!(&p.chosen, &p.rejected);
            prop_assert_eq!(classify(&p.meta.rejected_scores, &cfg), Some(p.objective));
            match p.objective {
                Objective::Attributability => {
                    prop_assert!(p.meta.rejected_scores.attr_score < 1.0);
                    prop_assert!(p.meta.rejected_scores.compre_score >= 0.8);
                }
                Objective::Comprehensiveness => {
                    prop_assert!(p.meta.rejected_scores.attr_score >= 1.0 - 1e-12);
                    prop_assert!(p.meta.rejected_scores.compre_score < 0.8);
                }
            }
        }
        for o in [Objective::Attributability, Objective::Comprehensiveness] {
            prop_assert!(pairs.iter().filter(|p| p.objective == o).count() <= max);
        }
    }
}

proptest! {
    #[test]
    fn equal_scorers_give_ln2(pc in -500.0f64..0.0, pr in -500.0f64..0.0, beta in 0.01f64..2.0) {
        let cfg = DpoConfig { beta };
        let lp = PairLogprobs { policy_chosen: pc, ref_chosen: pc, policy_rejected: pr, ref_rejected: pr };
        prop_assert!((lp.loss(&cfg) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_in_margin(a in -10.0f64..10.0, d in 1e-3f64..5.0) {
        prop_assert!(neg_log_sigmoid(a + d) < neg_log_sigmoid(a));
        prop_assert!(neg_log_sigmoid(a) > 0.0);
    }

    #[test]
    fn dpo_reward_is_linear_in_beta(lp in -100.0f64..0.0, lr in -100.0f64..0.0, beta in 0.01f64..2.0, k in 0.1f64..5.0) {
        let r1 = dpo_reward(lp, lr, &DpoConfig { beta });
        let r2 = dpo_reward(lp, lr, &DpoConfig { beta: beta * k });
        prop_assert!((r2 - k * r1).abs() <= 1e-9 * (1.0 + r1.abs() * k));
    }
}

#[test]
fn loss_is_stable_at_extreme_margins() {
    assert!(neg_log_sigmoid(1e6).abs() < 1e-300);
    assert!((neg_log_sigmoid(-1e6) - 1e6).abs() < 1e-6);
    assert!(neg_log_sigmoid(800.0).is_finite());
}

/// Per-text fixed log-probabilities.
struct Table(Vec<(&'static str, f64)>);

impl SequenceScorer for Table {
    fn logprob(&self, req: &LogprobRequest) -> Result<LogprobResult, GatewayError> {
        let v = self
            .0
            .iter()
            .find(|(t, _)| *t == req.continuation)
            .map(|(_, v)| *v)
            .ok_or_else(|| GatewayError::backend("unknown text"))?;
        Ok(LogprobResult {
            logprob_sum: v,
            token_count: 1,
        })
    }
}

#[test]
fn dpo_loss_matches_hand_computation() {
    let cfg = RewardConfig::default();
    let top = cand(0, 1.0, 0.0, 1.0, "good".into());
    let cs = vec![top.clone(), cand(1, 0.5, 0.0, 1.0, "bad".into())];
    let pairs = build_pairs(&cs, &top, "prompt", &cfg, 2, None);
    assert_eq!(pairs.len(), 1);
    let policy = Table(vec![("good", -2.0), ("bad", -5.0)]);
    let reference = Table(vec![("good", -3.0), ("bad", -4.0)]);
    let d = dpo_loss(&pairs, &policy, &reference, &DpoConfig { beta: 0.5 }).unwrap();
    // margin = 0.5 * ((-2 + 3) - (-5 + 4)) = 1
    let expected = (1.0 + (-1.0f64).exp()).ln();
    assert!((d.mean_loss.unwrap() - expected).abs() < 1e-12);
    assert_eq!(d.per_objective[&Objective::Attributability].n_pairs, 1);

    let empty = dpo_loss(&[], &policy, &reference, &DpoConfig::default()).unwrap();
    assert_eq!(empty.mean_loss, None);
    assert!(dpo_loss(&pairs, &policy, &reference, &DpoConfig { beta: 0.0 }).is_err());
}
