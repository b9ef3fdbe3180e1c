use std::sync::Arc;

use proptest::prelude::*;

use factgraph_core::executor::{Engine, RunConfig};
use factgraph_core::gateway::{
    FnGateway, Gateway, GatewayRequest, RecordingGateway, Role, ScriptedGateway, Transcript,
};
use factgraph_core::prompts::Prompts;
use factgraph_core::retrieval::{
    CorpusIndex, EvidenceItem, EvidenceSet, RecordingRetriever, ReplayRetriever, Retriever,
    Strategy, WikiRetriever,
};

const CORPUS: &str = r#"{"id":"rolie","title":"Gregg Rolie","text":"Gregg Rolie played keyboards in Santana and co-founded Journey."}
{"id":"santana","title":"Santana","text":"Santana released its debut album in 1969 with Gregg Rolie."}
{"id":"journey","title":"Journey","text":"Journey was formed in San Francisco in 1973."}
"#;

const PLAN: &str = r#"[{"id":"s1","type":"SEARCH","input":"q"},{"id":"s2","type":"SEARCH","input":"r"},{"id":"t1","type":"THINK","input":"t","dependencies":["s1","s2"]},{"id":"j1","type":"JUDGE","input":"c","dependencies":["t1"]}]"#;

fn live() -> Arc<dyn Gateway> {
    Arc::new(FnGateway::new(|req: &GatewayRequest| {
        Ok(match req.role {
            Role::Planner => PLAN.into(),
            Role::SearchQuery if req.prompt.contains("Task: q\n") => "Gregg Rolie Santana".into(),
            Role::SearchQuery => "Journey 1973".into(),
            Role::Think => r#"{"sufficient": true, "conclusion": "Rolie is in both bands"}"#.into(),
            Role::Judge => r#"{"label": "SUPPORTS", "explanation": "both sources agree"}"#.into(),
            Role::Refine => "unused".into(),
        })
    }))
}

fn wiki() -> Arc<dyn Retriever> {
    Arc::new(WikiRetriever::new(Arc::new(
        CorpusIndex::from_jsonl(CORPUS).unwrap(),
    )))
}

fn config(max_inflight: usize) -> RunConfig {
    RunConfig {
        strategy: Strategy::Wiki,
        max_inflight,
        ..RunConfig::dynamic_mode()
    }
}

#[tokio::test]
async fn recorded_run_replays_byte_identically() {
    let transcript = Arc::new(Transcript::new());
    let gateway = Arc::new(RecordingGateway::new(live(), transcript.clone()));
    let retriever = Arc::new(RecordingRetriever::new(wiki()));
    let prompts = Arc::new(Prompts::default());
    let first = Engine::new(gateway, retriever.clone(), prompts.clone(), config(1))
        .unwrap()
        .run_claim("Gregg Rolie played in Santana and Journey.")
        .await
        .unwrap();

    let replay_gw = ScriptedGateway::from_jsonl(&transcript.to_jsonl()).unwrap();
    let replay_rt = ReplayRetriever::from_jsonl(Strategy::Wiki, &retriever.to_jsonl()).unwrap();
    let second = Engine::new(Arc::new(replay_gw), Arc::new(replay_rt), prompts, config(1))
        .unwrap()
        .run_claim("Gregg Rolie played in Santana and Journey.")
        .await
        .unwrap();

    assert_eq!(first.to_canonical_json(), second.to_canonical_json());
    assert!(first
        .final_graph
        .nodes
        .iter()
        .any(|n| !n.evidence.is_empty()));
}

#[tokio::test]
async fn replay_retriever_serves_recorded_evidence() {
    let recorder = RecordingRetriever::new(wiki());
    let a = recorder.retrieve("Gregg Rolie", 2).await.unwrap();
    let b = recorder.retrieve("Journey", 5).await.unwrap();
    let replay = ReplayRetriever::from_jsonl(Strategy::Wiki, &recorder.to_jsonl()).unwrap();
    assert_eq!(replay.retrieve("Gregg Rolie", 2).await.unwrap(), a);
    assert_eq!(replay.retrieve("Journey", 5).await.unwrap(), b);
    assert!(replay.retrieve("Gregg Rolie", 2).await.is_err());
    assert!(replay.retrieve("unseen", 2).await.is_err());
}

proptest! {
    #[test]
    fn evidence_scores_survive_json(scores in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..20)) {
        let set = EvidenceSet::from_items(
            scores.iter().enumerate().map(|(i, s)| EvidenceItem::new(format!("d{i}"), format!("text {i}"), *s)),
        );
        let json = serde_json::to_string(&set).unwrap();
        let back: EvidenceSet = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &set);
        for (x, y) in back.iter().zip(set.iter()) {
            prop_assert_eq!(x.score.to_bits(), y.score.to_bits());
        }
    }
}
