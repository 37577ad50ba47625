mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{abstract_of, bundle, deck, similarity};
use edukg::graph::{slide_node_id, EdgeKind, NodeKind};
use edukg::hitl::{ConceptQuery, DraftState, HitlError, HitlService};
use edukg::{PipelineConfig, PipelineMode};

const BFS: &str = "http://dbpedia.org/resource/Breadth-first_search";
const TRAVERSAL: &str = "http://dbpedia.org/resource/Graph_traversal";
const BACKTRACKING: &str = "http://dbpedia.org/resource/Backtracking";
const WAIT: Duration = Duration::from_secs(30);

fn service() -> HitlService {
    HitlService::new(Arc::new(bundle()), PipelineConfig::default())
}

#[test]
fn review_flow_publishes_edited_graph() {
    let svc = service();
    let m = deck("two_slide");
    let id = svc.ingest(m.clone()).unwrap();
    let draft = svc.create_draft(&id, PipelineMode::BottomUp).unwrap();
    let view = svc.wait_ready(&draft, WAIT).unwrap();
    assert_eq!(view.state, DraftState::Ready);
    assert_eq!(view.version, 1);
    assert!(svc.list_concepts(&draft).unwrap().iter().any(|c| c.uri == BFS));

    let v = svc.remove_concept(&draft, BFS, 1).unwrap();
    let v = svc
        .add_concept(&draft, &ConceptQuery::parse("backtracking"), &[1], v)
        .unwrap();
    let publication = svc.finalize(&draft, v).unwrap();
    assert_eq!(svc.get_draft(&draft).unwrap().state, DraftState::Published);

    let g = svc.published_graph(&id).unwrap();
    assert_eq!(publication.nodes, g.node_count());
    assert!(!g.contains_node(BFS));
    assert!(!g.contains_node(TRAVERSAL));
    assert!(g.edges().all(|e| e.src != BFS && e.dst != BFS));
    assert_eq!(g.node(BACKTRACKING).unwrap().kind, NodeKind::Concept);

    let edge = g
        .edge(&slide_node_id(&id, 1), EdgeKind::Contains, BACKTRACKING)
        .unwrap();
    let w_slide = similarity(&abstract_of(BACKTRACKING), &m.slides()[1].text);
    let w_lm = similarity(&abstract_of(BACKTRACKING), m.full_text());
    assert_eq!(edge.weight, Some(w_slide));
    assert_eq!(edge.importance, Some(w_slide + w_lm));

    assert_eq!(svc.finalize(&draft, v + 1).unwrap_err(), HitlError::DraftImmutable);
    assert!(svc
        .slide_concepts(&id, 1, 5)
        .unwrap()
        .iter()
        .any(|c| c.uri == BACKTRACKING));
}

#[test]
fn stale_version_is_rejected() {
    let svc = service();
    let id = svc.ingest(deck("two_slide")).unwrap();
    let draft = svc.create_draft(&id, PipelineMode::TopDown).unwrap();
    svc.wait_ready(&draft, WAIT).unwrap();
    let uri = svc.list_concepts(&draft).unwrap()[0].uri.clone();
    svc.remove_concept(&draft, &uri, 1).unwrap();
    assert!(matches!(
        svc.finalize(&draft, 1),
        Err(HitlError::VersionConflict { expected: 1, actual: 2 })
    ));
}

#[test]
fn one_active_draft_per_material() {
    let svc = service();
    let id = svc.ingest(deck("adversarial")).unwrap();
    let first = svc.create_draft(&id, PipelineMode::BottomUp).unwrap();
    assert!(matches!(
        svc.create_draft(&id, PipelineMode::TopDown),
        Err(HitlError::ConflictActiveDraft { .. })
    ));
    let v = svc.wait_ready(&first, WAIT).unwrap().version;
    svc.finalize(&first, v).unwrap();
    // a published draft no longer blocks a new one
    svc.create_draft(&id, PipelineMode::TopDown).unwrap();
}

#[test]
fn bad_inputs_map_to_errors() {
    let svc = service();
    let id = svc.ingest(deck("two_slide")).unwrap();
    assert!(matches!(
        svc.ingest(deck("two_slide")),
        Err(HitlError::DuplicateMaterial(_))
    ));
    assert!(matches!(svc.published_graph(&id), Err(HitlError::NotPublished(_))));
    let draft = svc.create_draft(&id, PipelineMode::BottomUp).unwrap();
    svc.wait_ready(&draft, WAIT).unwrap();
    assert!(matches!(
        svc.add_concept(&draft, &ConceptQuery::parse("quicksort"), &[5], 1),
        Err(HitlError::BadSlideIndex { index: 5, .. })
    ));
    assert!(matches!(
        svc.add_concept(&draft, &ConceptQuery::parse("zzz qqq"), &[0], 1),
        Err(HitlError::Unresolvable(_))
    ));
    assert!(matches!(
        svc.remove_concept(&draft, "http://dbpedia.org/resource/Nope", 1),
        Err(HitlError::UnknownConcept(_))
    ));
    assert!(matches!(svc.get_draft("d99"), Err(HitlError::UnknownDraft(_))));
}
