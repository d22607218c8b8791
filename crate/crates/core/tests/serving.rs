mod support;

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use keyrel::scoring::Catalog;
use keyrel::serving::{
    batch_score_diff, batch_score_full, service, AllPairs, CatalogEvent, EventKind, ManualClock, MapEnrichment,
    NrtPipeline, ScoreStore, SystemClock, Window, WindowBuffer,
};
use keyrel::{Error, ItemDoc, World};
use support::*;
use tower::ServiceExt;

fn event(kind: EventKind, id: u64, event_time: u64) -> CatalogEvent {
    CatalogEvent { kind, id, event_time }
}

/// Pipeline over the first half of `world`; the whole world is in the
/// feature store.
fn half_pipeline(world: &World) -> NrtPipeline {
    let scorer = Arc::new(jaccard_scorer(world_vocab(world)));
    let initial = Catalog::new(
        world.items[..world.items.len() / 2].to_vec(),
        world.keyphrases[..world.keyphrases.len() / 2].to_vec(),
    );
    let store = batch_score_full(&scorer, &initial, &AllPairs).unwrap();
    let enrichment = Arc::new(MapEnrichment::new(world.items.clone(), world.keyphrases.clone()));
    NrtPipeline::new(scorer, Arc::new(AllPairs), enrichment, initial, store).unwrap()
}

#[test]
fn store_round_trips_through_disk() {
    let world = small_world(30, 15, 1);
    let scorer = bi_scorer(world_vocab(&world), 8, 2);
    let store = batch_score_full(&scorer, &catalog_of(&world), &category_source(&world, [])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    store.save(dir.path()).unwrap();
    let loaded = ScoreStore::load(dir.path()).unwrap();
    assert_eq!(loaded.canonical_bytes(), store.canonical_bytes());
    assert_eq!(loaded.model_version(), "bi-test-2");
    // Saving again over an existing store replaces it whole.
    let empty = ScoreStore::new("bi-test-2", scorer.threshold());
    empty.save(dir.path()).unwrap();
    assert!(ScoreStore::load(dir.path()).unwrap().is_empty());
}

#[test]
fn diff_with_another_model_version_leaves_store_untouched() {
    let world = small_world(30, 15, 3);
    let vocab = world_vocab(&world);
    let source = category_source(&world, []);
    let mut catalog = catalog_of(&world);
    let mut store = batch_score_full(&bi_scorer(vocab.clone(), 8, 1), &catalog, &source).unwrap();
    let before = store.canonical_bytes();
    let item = world.items[0].clone();
    catalog.upsert_item(item.clone(), 10);
    let err = batch_score_diff(&mut store, &bi_scorer(vocab, 8, 2), &catalog, &[item.item_id], &[], &source).unwrap_err();
    assert!(matches!(err, Error::VersionMismatch { .. }), "{err}");
    assert!(err.to_string().contains("full rebuild required"));
    assert_eq!(store.canonical_bytes(), before);
}

#[test]
fn diff_rescores_only_touched_pairs() {
    let world = small_world(40, 20, 4);
    let scorer = jaccard_scorer(world_vocab(&world));
    let mut catalog = catalog_of(&world);
    let mut store = batch_score_full(&scorer, &catalog, &AllPairs).unwrap();
    let target = world.items[3].item_id;
    let revised = ItemDoc::new(target, "completely different words", 0, "cat 0").unwrap();
    assert!(catalog.upsert_item(revised, 100));
    let before: Vec<_> = store.records().collect();
    let report = batch_score_diff(&mut store, &scorer, &catalog, &[target], &[], &AllPairs).unwrap();
    assert_eq!(report.scored, world.keyphrases.len());
    for old in before {
        let new = store.get(old.item_id, old.keyphrase_id).unwrap();
        if old.item_id == target {
            assert!(new.updated_at > old.updated_at);
        } else {
            assert_eq!(new, old);
        }
    }
}

#[test]
fn stale_revisions_are_ignored() {
    let world = small_world(20, 10, 5);
    let mut catalog = catalog_of(&world);
    let id = world.items[0].item_id;
    let newer = ItemDoc::new(id, "fresh title", 1, "cat 1").unwrap();
    let older = ItemDoc::new(id, "old title", 1, "cat 1").unwrap();
    assert!(catalog.upsert_item(newer, 200));
    assert!(!catalog.upsert_item(older, 100));
    assert_eq!(catalog.item(id).unwrap().title, "fresh title");
}

#[test]
fn nrt_window_deduplicates_and_dead_letters_misses() {
    let world = small_world(40, 20, 6);
    let pipeline = half_pipeline(&world);
    let new_item = world.items[30].item_id;
    let window = Window {
        start_ms: 0,
        received: 4,
        events: keyrel::serving::dedup_events(&[
            event(EventKind::ItemCreated, new_item, 5),
            event(EventKind::ItemCreated, new_item, 7),
            event(EventKind::ItemCreated, new_item, 6),
            event(EventKind::ItemCreated, 999_999, 8),
        ]),
    };
    let report = pipeline.process_window(&window).unwrap();
    assert_eq!(report.received, 4);
    assert_eq!(report.unique, 2);
    assert_eq!(report.dead_lettered, 1);
    assert_eq!(report.scored, world.keyphrases.len() / 2);
    let dead = pipeline.dead_letters();
    assert_eq!(dead.len(), 1);
    assert_eq!(dead[0].event.id, 999_999);
    let kp = world.keyphrases[0].keyphrase_id;
    assert_eq!(pipeline.get(new_item, kp).unwrap().updated_at, 7);
}

#[test]
fn nrt_windows_close_on_processing_time() {
    let world = small_world(40, 20, 7);
    let pipeline = half_pipeline(&world);
    let clock = ManualClock::new(1_000);
    let mut buffer = WindowBuffer::new(100).unwrap();
    let kp = world.keyphrases[0].keyphrase_id;
    let item = world.items[25].item_id;
    assert!(buffer.push(event(EventKind::ItemCreated, item, 1), keyrel::serving::Clock::now_ms(&clock)).is_none());
    clock.advance(99);
    assert!(buffer.poll(keyrel::serving::Clock::now_ms(&clock)).is_none());
    assert!(pipeline.get(item, kp).is_none());
    clock.advance(1);
    let w = buffer.poll(keyrel::serving::Clock::now_ms(&clock)).unwrap();
    pipeline.process_window(&w).unwrap();
    assert!(pipeline.get(item, kp).is_some());
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: &str) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn json(resp: axum::response::Response) -> serde_json::Value {
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    serde_json::from_slice(&bytes).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_endpoints() {
    let world = small_world(40, 20, 8);
    let pipeline = Arc::new(half_pipeline(&world));
    let (app, _task) = service(pipeline.clone(), 50, Arc::new(SystemClock)).unwrap();

    let resp = app.clone().oneshot(get("/healthz")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let health = json(resp).await;
    assert_eq!(health["status"], "ok");
    assert_eq!(health["records"], pipeline.store_len());

    let (i, k) = (world.items[0].item_id, world.keyphrases[0].keyphrase_id);
    let resp = app.clone().oneshot(get(&format!("/scores?item_id={i}&keyphrase_id={k}"))).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let rec = json(resp).await;
    assert_eq!(rec["item_id"], i);

    let resp = app.clone().oneshot(get("/scores?item_id=1&keyphrase_id=424242")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    let resp = app.clone().oneshot(get("/scores?item_id=x")).await.unwrap();
    assert!(resp.status().is_client_error());

    for bad in ["not json", r#"{"kind":"item_created","id":1}"#, r#"{"kind":"deleted","id":1,"event_time":1}"#] {
        let resp = app.clone().oneshot(post("/events", bad)).await.unwrap();
        assert!(resp.status().is_client_error(), "{bad}: {}", resp.status());
    }

    let resp = app.clone().oneshot(get("/windows")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_events_become_visible_within_two_windows() {
    let world = small_world(40, 20, 9);
    let pipeline = Arc::new(half_pipeline(&world));
    let window_ms = 200;
    let (app, _task) = service(pipeline.clone(), window_ms, Arc::new(SystemClock)).unwrap();
    let item = world.items[35].item_id;
    let kp = world.keyphrases[0].keyphrase_id;
    let body = serde_json::to_string(&[event(EventKind::ItemCreated, item, 1), event(EventKind::ItemCreated, item, 2)]).unwrap();
    let posted = Instant::now();
    let resp = app.clone().oneshot(post("/events", &body)).await.unwrap();
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    assert_eq!(json(resp).await["accepted"], 2);
    let uri = format!("/scores?item_id={item}&keyphrase_id={kp}");
    loop {
        let resp = app.clone().oneshot(get(&uri)).await.unwrap();
        if resp.status() == StatusCode::OK {
            assert_eq!(json(resp).await["updated_at"], 2);
            break;
        }
        assert!(posted.elapsed() < Duration::from_millis(2 * window_ms), "not visible after two windows");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let reports = pipeline.reports();
    assert_eq!(reports.len(), 1);
    assert_eq!((reports[0].received, reports[0].unique), (2, 1));
}
