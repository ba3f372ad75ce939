//! Scoped refresh routing and probabilistic delivery.
//!
//! Commits are announced by entity ids only. Routing fans a notification out
//! to exactly the agents whose readable slice intersects the modified
//! entities, excluding the author (who already holds the update). Each
//! (commit, recipient) pair gets exactly one delivery attempt, dropped
//! independently with the configured probability; there are no retries or
//! acknowledgments. Retrieval pulls the full committed bytes from the
//! canonical store.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::memory::GlobalStore;
use crate::ontology::{slice_overlaps, AgentId, EntityKey, SliceSpec};

/// Entity-ids-only announcement of one committed update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshNotification {
    pub commit_seq: u64,
    pub author: AgentId,
    /// Exactly the keys modified by the referenced commit. No values: the
    /// recipient pulls the full update and revalidates.
    pub entities: Vec<EntityKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryOutcome {
    Delivered,
    Dropped,
}

/// One routing decision for one recipient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub commit_seq: u64,
    pub recipient: AgentId,
    pub outcome: DeliveryOutcome,
    pub tick: u64,
}

/// Computes the recipient set for a notification: every agent, other than
/// the author, whose readable slice intersects the modified entities.
/// Returned in agent-id order so downstream randomness is deterministic.
pub fn route(n: &RefreshNotification, slices: &BTreeMap<AgentId, SliceSpec>) -> Vec<AgentId> {
    slices
        .values()
        .filter(|s| s.agent != n.author && slice_overlaps(s, n.entities.iter()))
        .map(|s| s.agent.clone())
        .collect()
}

/// Attempts delivery to each recipient independently: delivered with
/// probability `1 - drop_prob`. Exactly one attempt per recipient.
///
/// `drop_prob` must lie in `[0, 1)`; a drop probability of one would mean
/// no delivery can ever occur.
pub fn deliver<R: Rng>(
    recipients: &[AgentId],
    drop_prob: f64,
    tick: u64,
    commit_seq: u64,
    rng: &mut R,
) -> Vec<DeliveryRecord> {
    assert!(
        (0.0..1.0).contains(&drop_prob),
        "drop probability must be in [0, 1), got {drop_prob}"
    );
    recipients
        .iter()
        .map(|r| {
            let delivered = drop_prob == 0.0 || rng.gen::<f64>() >= drop_prob;
            DeliveryRecord {
                commit_seq,
                recipient: r.clone(),
                outcome: if delivered {
                    DeliveryOutcome::Delivered
                } else {
                    DeliveryOutcome::Dropped
                },
                tick,
            }
        })
        .collect()
}

/// Pulls the full committed update referenced by a notification.
pub fn retrieve(
    store: &GlobalStore,
    commit_seq: u64,
) -> Result<std::sync::Arc<crate::memory::CommittedUpdate>, crate::memory::StoreError> {
    store.retrieve(commit_seq).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{Ontology, ValueDomain};
    use crate::rng::stream_rng;
    use std::collections::BTreeSet;

    fn ontology(preds: &[&str]) -> Ontology {
        let predicates = preds
            .iter()
            .map(|p| {
                (
                    p.to_string(),
                    ValueDomain::IntRange { min: 0, max: 1000 },
                )
            })
            .collect();
        Ontology::new(predicates, vec![]).unwrap()
    }

    fn slices(
        ont: &Ontology,
        spec: &[(&str, &[&str])],
    ) -> BTreeMap<AgentId, SliceSpec> {
        spec.iter()
            .map(|(agent, readable)| {
                let id = AgentId::new(agent);
                let s = SliceSpec::new(
                    id.clone(),
                    readable.iter().map(|p| p.to_string()).collect(),
                    BTreeSet::new(),
                    ont,
                )
                .unwrap();
                (id, s)
            })
            .collect()
    }

    fn notification(author: &str, keys: &[&str]) -> RefreshNotification {
        RefreshNotification {
            commit_seq: 1,
            author: AgentId::new(author),
            entities: keys.iter().map(|k| k.parse().unwrap()).collect(),
        }
    }

    #[test]
    fn route_excludes_author_and_non_overlapping() {
        let ont = ontology(&["Survivor", "Relay"]);
        let sl = slices(
            &ont,
            &[
                ("a", &["Survivor"]),
                ("b", &["Relay"]),
                ("c", &["Survivor", "Relay"]),
            ],
        );
        let n = notification("a", &["Survivor@z1"]);
        let recipients = route(&n, &sl);
        assert_eq!(recipients, vec![AgentId::new("c")]);
    }

    #[test]
    fn route_with_zero_overlap_sends_nothing() {
        let ont = ontology(&["Survivor", "Relay"]);
        let sl = slices(&ont, &[("a", &["Relay"]), ("b", &["Relay"])]);
        let n = notification("x", &["Survivor@z1"]);
        assert!(route(&n, &sl).is_empty());
    }

    #[test]
    fn broadcast_pool_reaches_everyone() {
        let ont = ontology(&["Key"]);
        let spec: Vec<(String, Vec<&str>)> = (0..200)
            .map(|i| (format!("agent_{i:03}"), vec!["Key"]))
            .collect();
        let borrowed: Vec<(&str, &[&str])> = spec
            .iter()
            .map(|(a, r)| (a.as_str(), r.as_slice()))
            .collect();
        let sl = slices(&ont, &borrowed);
        let n = notification("publisher", &["Key@k1"]);
        let recipients = route(&n, &sl);
        // 200 subscribers; with the proposer's own write that is 201 messages.
        assert_eq!(recipients.len(), 200);
        assert_eq!(recipients.len() + 1, 201);
    }

    #[test]
    fn deliver_with_zero_drop_delivers_all() {
        let recipients: Vec<AgentId> = (0..50).map(|i| AgentId::new(format!("a{i}"))).collect();
        let mut rng = stream_rng(1, "transport");
        let records = deliver(&recipients, 0.0, 3, 9, &mut rng);
        assert_eq!(records.len(), 50);
        assert!(records.iter().all(|r| r.outcome == DeliveryOutcome::Delivered));
        assert!(records.iter().all(|r| r.tick == 3 && r.commit_seq == 9));
    }

    #[test]
    #[should_panic(expected = "drop probability")]
    fn deliver_rejects_drop_probability_one() {
        let mut rng = stream_rng(1, "transport");
        deliver(&[AgentId::new("a")], 1.0, 0, 1, &mut rng);
    }

    #[test]
    fn deliver_concentrates_around_binomial_mean() {
        let recipients: Vec<AgentId> =
            (0..10_000).map(|i| AgentId::new(format!("a{i:05}"))).collect();
        let mut rng = stream_rng(11, "transport");
        let records = deliver(&recipients, 0.5, 0, 1, &mut rng);
        let delivered = records
            .iter()
            .filter(|r| r.outcome == DeliveryOutcome::Delivered)
            .count() as f64;
        // Binomial(10_000, 0.5): mean 5000, sigma 50.
        assert!(
            (delivered - 5000.0).abs() <= 3.0 * 50.0,
            "delivered {delivered} outside 3 sigma of 5000"
        );
    }

    #[test]
    fn per_recipient_rate_tracks_delivery_probability() {
        let recipients: Vec<AgentId> = (0..8).map(|i| AgentId::new(format!("a{i}"))).collect();
        let drop = 0.3;
        let trials = 4000;
        let mut rng = stream_rng(5, "transport");
        let mut per_agent = vec![0u32; recipients.len()];
        for t in 0..trials {
            for rec in deliver(&recipients, drop, t, t, &mut rng) {
                if rec.outcome == DeliveryOutcome::Delivered {
                    let idx: usize = rec.recipient.as_str()[1..].parse().unwrap();
                    per_agent[idx] += 1;
                }
            }
        }
        let p = 1.0 - drop;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (i, &count) in per_agent.iter().enumerate() {
            let expect = trials as f64 * p;
            assert!(
                (count as f64 - expect).abs() <= 3.0 * sigma,
                "agent {i} rate {count} outside 3 sigma of {expect}"
            );
        }
    }

    #[test]
    fn random_slices_give_expected_fanout() {
        // f = 0.5 over 200 agents: recipient count concentrates near 100.
        let ont = ontology(&["Key"]);
        let mut rng = stream_rng(23, "bench");
        let mut total = 0usize;
        let trials = 200;
        for _ in 0..trials {
            let mut sl = BTreeMap::new();
            for i in 0..200 {
                let id = AgentId::new(format!("agent_{i:03}"));
                let readable: BTreeSet<String> = if rng.gen::<f64>() < 0.5 {
                    ["Key".to_string()].into_iter().collect()
                } else {
                    BTreeSet::new()
                };
                sl.insert(
                    id.clone(),
                    SliceSpec::new(id, readable, BTreeSet::new(), &ont).unwrap(),
                );
            }
            total += route(&notification("pub", &["Key@k"]), &sl).len();
        }
        let mean = total as f64 / trials as f64;
        // Binomial(200, .5) mean 100, sigma ~7.07; mean of 200 trials: sigma 0.5.
        assert!((mean - 100.0).abs() < 3.0 * 0.5, "mean fanout {mean}");
    }
}
