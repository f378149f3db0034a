//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. `cargo test -p hcqa-core --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::oracles::{doc_lines, reference_parse, reference_select, variant_lists};
use common::{chat_body, library, prompt_of, synthetic_backend, synthetic_corpus, CountingTransport, StubServer};
use hcqa_core::caption_store::{segment_schedule, select_captions, VideoCaptionDoc};
use hcqa_core::eval_report::{ablation_table, compute_accuracy, EvalReport};
use hcqa_core::llm_backend::{
    Backend, BackendError, CompletionRequest, CountingBackend, FnBackend, LiveBackend, RecordMode, RecordReplayBackend,
    RetryPolicy, SimClock, Transport, UreqTransport,
};
use hcqa_core::orchestrator::{run_batch, BatchJob, PipelineConfig, ResponseCache, RunTrace};
use hcqa_core::prompting::{AnswerMode, Question, TemplateName, TemplateSet};
use hcqa_core::stages::{needs_reflection, parse_answer_response, run_question, AnswerRecord, Field};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Check = fn() -> Result<(), String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, format!("took {took:?}, limit {limit:?}"))
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn c1_schedule() -> Result<(), String> {
    let start = Instant::now();
    let w = segment_schedule(180.0, 4.0).map_err(|e| e.to_string())?;
    ensure(w.len() == 45, format!("{} windows", w.len()))?;
    ensure(w[0].start_s == 0.0 && w[44].end_s == 180.0, "does not cover [0,180]")?;
    ensure(w.windows(2).all(|p| p[0].end_s == p[1].start_s), "not contiguous")?;
    runner(500)
        .run(&(0.01f64..5000.0, 0.01f64..600.0), |(d, i)| {
            let w = segment_schedule(d, i).unwrap();
            prop_assert_eq!(w[0].start_s, 0.0);
            prop_assert_eq!(w.last().unwrap().end_s, d);
            prop_assert!(w.windows(2).all(|p| p[0].end_s == p[1].start_s));
            prop_assert!(w.iter().all(|c| c.len_s() > 0.0));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(1))
}

fn c2_fanout() -> Result<(), String> {
    let start = Instant::now();
    let doc = common::caption_doc("fanout");
    for (k, n) in [(1, 45), (3, 135), (5, 225)] {
        let got = select_captions(&doc, k).map_err(|e| e.to_string())?.total();
        ensure(got == n, format!("k={k}: {got} captions, want {n}"))?;
    }
    runner(200)
        .run(&(variant_lists(6), prop::sample::select(vec![1u8, 3, 5])), |(vars, k)| {
            let doc = VideoCaptionDoc::new("v", 24.0, 4.0, vars.clone()).unwrap();
            let sel = select_captions(&doc, k).unwrap();
            for (clip, v) in sel.per_clip.iter().zip(&vars) {
                prop_assert_eq!(&clip.captions, &reference_select(v, k as usize));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(1))
}

fn c3_gate() -> Result<(), String> {
    let rec = |c| AnswerRecord { option_index: 0, confidence: c, reason: String::new(), raw_text: String::new(), parse_attempts: 1 };
    let mut cases = 0;
    for c in 0..=10u8 {
        for t in 0..=10u8 {
            ensure(needs_reflection(&rec(c), t) == (c < t), format!("confidence {c}, threshold {t}"))?;
            cases += 1;
        }
    }
    ensure(cases == 121, "enumeration incomplete")?;
    ensure(needs_reflection(&rec(4), 5) && !needs_reflection(&rec(5), 5), "threshold 5 spot check")
}

fn c4_call_counts() -> Result<(), String> {
    let doc = common::caption_doc("grid");
    let q = Question::new("grid-q", "What does C do?", (0..5).map(|i| format!("option {i}")).collect()).unwrap();
    let lib = library();
    let templates = TemplateSet::builtin();
    for (mode, fired, want) in [
        (AnswerMode::TwoPhase, true, 3),
        (AnswerMode::TwoPhase, false, 2),
        (AnswerMode::OnePhase, true, 2),
        (AnswerMode::OnePhase, false, 1),
    ] {
        let base = PipelineConfig::preset(if mode == AnswerMode::TwoPhase { "P6" } else { "P3" }).unwrap();
        let cfg = PipelineConfig { reflection_enabled: true, threshold: 5, ..base };
        let confidence = if fired { 2 } else { 9 };
        let backend = CountingBackend::new(FnBackend::new(move |req: &CompletionRequest| {
            Ok(match req.prompt.template_name {
                TemplateName::Summary => "C tidies the kitchen.".to_string(),
                TemplateName::Reflection => "Reason: checked again\nAnswer: 2\nConfidence: 7".to_string(),
                _ => format!("Reason: first look\nAnswer: 1\nConfidence: {confidence}"),
            })
        }));
        let out = run_question(&backend, &templates, &lib, &doc, &q, &cfg).map_err(|e| e.to_string())?;
        let label = format!("{mode:?}, fired={fired}");
        ensure(backend.calls() == want, format!("{label}: {} calls, want {want}", backend.calls()))?;
        ensure(out.requests as usize == want, format!("{label}: outcome counts {}", out.requests))?;
        ensure(out.reflection_triggered == fired, format!("{label}: reflection flag"))?;
    }
    Ok(())
}

fn batch(s: &Arc<common::Synthetic>, cfg: &PipelineConfig, backend: Arc<dyn Backend>, cache: Arc<ResponseCache>) -> RunTrace {
    let templates = TemplateSet::builtin();
    let lib = library();
    let job = BatchJob { corpus: &s.corpus, config: cfg, templates: &templates, examples: &lib, backend, cache };
    run_batch(&job, None).unwrap()
}

fn preset_at(name: &str, concurrency: usize) -> PipelineConfig {
    PipelineConfig { concurrency, ..PipelineConfig::preset(name).unwrap() }
}

fn c5_determinism() -> Result<(), String> {
    let start = Instant::now();
    let s = Arc::new(synthetic_corpus());
    let traces: Vec<String> = [1, 2, 8]
        .iter()
        .map(|&c| batch(&s, &preset_at("P6", c), synthetic_backend(&s), Arc::new(ResponseCache::in_memory())).to_jsonl())
        .collect();
    ensure(traces[0] == traces[1] && traces[0] == traces[2], "traces differ across concurrency 1/2/8")?;
    let trace = batch(&s, &preset_at("P6", 8), synthetic_backend(&s), Arc::new(ResponseCache::in_memory()));
    let acc = compute_accuracy(&trace, &s.gt).map_err(|e| e.to_string())?.accuracy;
    ensure(acc == 9.0 / 12.0, format!("accuracy {acc}, want 0.75"))?;
    let off = batch(&s, &preset_at("P5", 8), synthetic_backend(&s), Arc::new(ResponseCache::in_memory()));
    let acc_off = compute_accuracy(&off, &s.gt).map_err(|e| e.to_string())?.accuracy;
    ensure(acc_off == 7.0 / 12.0, format!("without reflection {acc_off}, want 7/12"))?;
    within(start, Duration::from_secs(10))
}

fn c6_cache() -> Result<(), String> {
    let s = Arc::new(synthetic_corpus());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("cache.jsonl");
    let backend = synthetic_backend(&s);
    let cfg = preset_at("P6", 8);
    let cold = batch(&s, &cfg, backend.clone(), Arc::new(ResponseCache::open(&path).map_err(|e| e.to_string())?));
    let before = backend.calls();
    let warm = batch(&s, &cfg, backend.clone(), Arc::new(ResponseCache::open(&path).map_err(|e| e.to_string())?));
    ensure(backend.calls() == before && warm.stats.backend_calls == 0, format!("warm rerun made {} calls", backend.calls() - before))?;
    ensure(warm.to_jsonl() == cold.to_jsonl(), "warm rerun changed the trace")?;

    // latching backend: the leader holds until every other caller is parked
    let doc = common::caption_doc("latch");
    let sel = select_captions(&doc, 1).unwrap();
    let prompt = hcqa_core::prompting::render_summary_prompt(&TemplateSet::builtin(), &sel, &[]).unwrap();
    let req = CompletionRequest::new("gpt-4o", prompt, 0.0, 64);
    let cache = Arc::new(ResponseCache::in_memory());
    let threads = 8;
    let c = cache.clone();
    let latching = CountingBackend::new(FnBackend::new(move |_: &CompletionRequest| {
        let deadline = Instant::now() + Duration::from_secs(5);
        while c.waiting() < threads - 1 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(1));
        }
        Ok::<_, BackendError>("latched".to_string())
    }));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| cache.lookup_or_complete(&latching, &req).unwrap());
        }
    });
    ensure(latching.calls() == 1, format!("{} backend calls for one digest", latching.calls()))
}

fn c7_parser() -> Result<(), String> {
    runner(10_000)
        .run(&prop::collection::vec(any::<u8>(), 0..300), |bytes| {
            let text = String::from_utf8_lossy(&bytes);
            match parse_answer_response(&text) {
                Ok(r) => prop_assert!(r.option_index <= 4 && r.confidence <= 10),
                Err(e) => prop_assert!(!e.missing_fields.is_empty()),
            }
            Ok(())
        })
        .map_err(|e| format!("fuzz: {e}"))?;
    runner(1_000)
        .run(&doc_lines(), |lines| {
            let doc = lines.join("\n");
            let (answer, confidence, reason) = reference_parse(&doc);
            match parse_answer_response(&doc) {
                Ok(r) => {
                    prop_assert_eq!(Some(r.option_index), answer);
                    prop_assert_eq!(Some(r.confidence), confidence);
                    prop_assert_eq!(r.reason, reason);
                }
                Err(e) => {
                    prop_assert_eq!(e.missing_fields.contains(&Field::Answer), answer.is_none());
                    prop_assert_eq!(e.missing_fields.contains(&Field::Confidence), confidence.is_none());
                }
            }
            Ok(())
        })
        .map_err(|e| format!("reference: {e}"))
}

fn c8_ablation() -> Result<(), String> {
    let accs = [0.684, 0.708, 0.740, 0.741, 0.746, 0.748];
    let reports: Vec<EvalReport> = accs
        .iter()
        .enumerate()
        .map(|(i, &accuracy)| EvalReport {
            run_id: format!("run{i}"),
            preset_name: format!("P{}", i + 1),
            n_total: 0,
            n_correct: 0,
            n_failed: 0,
            accuracy,
            per_question: vec![],
        })
        .collect();
    let rows = ablation_table(&reports);
    let shown: Vec<String> = rows.iter().enumerate().map(|(i, r)| r.delta_display(i == 0)).collect();
    ensure(rows[0].delta_vs_previous == 0.0, "first delta is not 0")?;
    ensure(shown == ["—", "0.024", "0.032", "0.001", "0.005", "0.002"], format!("got {shown:?}"))
}

fn c9_record_replay() -> Result<(), String> {
    let s = Arc::new(synthetic_corpus());
    let responder = s.clone();
    let server = StubServer::start(Box::new(move |body| (200, chat_body(&responder.respond(&prompt_of(body))))));
    let live = |t: Arc<dyn Transport>| -> Arc<dyn Backend> {
        Arc::new(
            LiveBackend::new(&server.base_url, "test-key", t)
                .with_policy(RetryPolicy { max_attempts: 1, ..RetryPolicy::default() })
                .with_clock(Arc::new(SimClock::new())),
        )
    };
    let http: Arc<dyn Transport> = Arc::new(UreqTransport::new(Duration::from_secs(5)));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = dir.path().join("recorded.jsonl");
    let cfg = preset_at("P6", 4);

    let recorder = RecordReplayBackend::open(RecordMode::Record, &store, Some(live(http.clone()))).map_err(|e| e.to_string())?;
    let recorded = batch(&s, &cfg, Arc::new(recorder), Arc::new(ResponseCache::in_memory()));
    ensure(server.count() > 0, "record run never reached the server")?;
    let online = server.count();

    let counting = CountingTransport::new(http);
    let replayer = RecordReplayBackend::open(RecordMode::Replay, &store, Some(live(counting.clone()))).map_err(|e| e.to_string())?;
    let replayed = batch(&s, &cfg, Arc::new(replayer), Arc::new(ResponseCache::in_memory()));
    ensure(recorded.to_jsonl().as_bytes() == replayed.to_jsonl().as_bytes(), "replayed trace differs")?;
    ensure(counting.count() == 0 && server.count() == online, format!("replay made {} network posts", counting.count()))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("schedule arithmetic", c1_schedule),
        ("caption fan-out", c2_fanout),
        ("reflection gate", c3_gate),
        ("state-machine call counts", c4_call_counts),
        ("end-to-end determinism", c5_determinism),
        ("cache contract", c6_cache),
        ("parser totality", c7_parser),
        ("ablation table", c8_ablation),
        ("record/replay", c9_record_replay),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let ms = start.elapsed().as_millis();
        match result {
            Ok(()) => println!("criterion {} {name}: PASS ({ms} ms)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({ms} ms): {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
