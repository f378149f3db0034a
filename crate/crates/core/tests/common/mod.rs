#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use hcqa_core::eval_report::GroundTruth;
use hcqa_core::llm_backend::{HttpReply, Transport, TransportError};
use hcqa_core::orchestrator::CorpusItem;
use hcqa_core::prompting::{IclExample, IclKind, IclLibrary, Question};
use hcqa_core::VideoCaptionDoc;

pub mod oracles;

/// 45 clips x 5 distinct variants, tagged with the video id.
pub fn caption_doc(video_id: &str) -> VideoCaptionDoc {
    let variants = (0..45)
        .map(|c| (0..5).map(|v| format!("{video_id} clip{c} v{v}: #C C handles object {}", (c * 7 + v) % 11)).collect())
        .collect();
    VideoCaptionDoc::new(video_id, 180.0, 4.0, variants).unwrap()
}

pub fn library() -> IclLibrary {
    let mut v = vec![IclExample::new("sum-1", IclKind::Summary, "Captions: ...\nOverview: C cooks a meal.").unwrap()];
    for i in 1..=3 {
        v.push(
            IclExample::new(format!("ans-{i}"), IclKind::Answer, format!("Question: ...\nReason: example {i}\nAnswer: 1\nConfidence: 8"))
                .unwrap(),
        );
    }
    IclLibrary::new(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plan {
    /// Right first time, confident.
    Correct,
    /// Wrong with low confidence; reflection fixes it.
    ReflectFixes,
    /// Wrong with low confidence; reflection stays wrong.
    ReflectStaysWrong,
    /// Wrong and confident, so never reflected.
    ConfidentWrong,
    /// Never produces a parseable answer.
    Garbage,
}

pub struct Synthetic {
    pub corpus: Vec<CorpusItem>,
    pub gt: GroundTruth,
    pub plans: BTreeMap<String, (Plan, u8)>,
}

/// 12 questions over 3 videos: 7 correct, 2 fixed only by reflection, 1
/// reflected but still wrong, 2 confidently wrong. With reflection 9/12 are
/// right, without it 7/12.
pub fn synthetic_corpus() -> Synthetic {
    let plans = [
        Plan::Correct,
        Plan::ReflectFixes,
        Plan::Correct,
        Plan::ConfidentWrong,
        Plan::Correct,
        Plan::Correct,
        Plan::ReflectStaysWrong,
        Plan::Correct,
        Plan::ReflectFixes,
        Plan::Correct,
        Plan::ConfidentWrong,
        Plan::Correct,
    ];
    corpus_with(&plans)
}

pub fn corpus_with(plans: &[Plan]) -> Synthetic {
    let docs: Vec<_> = (0..3).map(|v| Arc::new(caption_doc(&format!("vid{v}")))).collect();
    let mut corpus = Vec::new();
    let mut gt = BTreeMap::new();
    let mut plan_map = BTreeMap::new();
    for (i, plan) in plans.iter().enumerate() {
        let uid = format!("q{i:02}");
        let truth = (i % 5) as u8;
        let question = Question::new(
            &uid,
            format!("[{uid}] What is C mainly doing in the video?"),
            (0..5).map(|o| format!("activity {o} for {uid}")).collect(),
        )
        .unwrap();
        corpus.push(CorpusItem { doc: docs[i % 3].clone(), question });
        gt.insert(uid.clone(), truth);
        plan_map.insert(uid, (*plan, truth));
    }
    Synthetic { corpus, gt: GroundTruth::new(gt).unwrap(), plans: plan_map }
}

fn uid_in(text: &str) -> Option<&str> {
    let start = text.find("Question: [")? + "Question: [".len();
    let end = text[start..].find(']')? + start;
    Some(&text[start..end])
}

fn reply(reason: &str, answer: u8, confidence: u8) -> String {
    format!("Reason: {reason}\nAnswer: {answer}\nConfidence: {confidence}")
}

impl Synthetic {
    /// Model reply as a function of the prompt text alone.
    pub fn respond(&self, prompt: &str) -> String {
        let Some(uid) = uid_in(prompt) else {
            return "C spends the video preparing food and cleaning up afterwards.".into();
        };
        let (plan, truth) = self.plans[uid];
        let wrong = (truth + 1) % 5;
        let reflecting = prompt.contains("Your earlier response:");
        match (plan, reflecting) {
            (Plan::Garbage, _) => "I am not sure.".into(),
            (Plan::Correct, _) => reply("the captions show it", truth, 8),
            (Plan::ConfidentWrong, _) => reply("misleading captions", wrong, 9),
            (Plan::ReflectFixes, false) => reply("unsure", wrong, 3),
            (Plan::ReflectFixes, true) => reply("on review the other option fits", truth, 7),
            (Plan::ReflectStaysWrong, false) => reply("unsure", wrong, 2),
            (Plan::ReflectStaysWrong, true) => reply("still unsure", (truth + 2) % 5, 4),
        }
    }
}

/// Counts every request that reaches the network layer.
pub struct CountingTransport {
    inner: Arc<dyn Transport>,
    pub posts: AtomicUsize,
}

impl CountingTransport {
    pub fn new(inner: Arc<dyn Transport>) -> Arc<Self> {
        Arc::new(CountingTransport { inner, posts: AtomicUsize::new(0) })
    }

    pub fn count(&self) -> usize {
        self.posts.load(Ordering::SeqCst)
    }
}

impl Transport for CountingTransport {
    fn post(&self, url: &str, headers: &[(&str, String)], body: &str) -> Result<HttpReply, TransportError> {
        self.posts.fetch_add(1, Ordering::SeqCst);
        self.inner.post(url, headers, body)
    }
}

/// Minimal HTTP/1.1 server on localhost answering each request via a
/// handler (or canned replies in order).
pub struct StubServer {
    pub base_url: String,
    pub requests: Arc<AtomicUsize>,
    pub seen: Arc<Mutex<Vec<(String, String)>>>,
    _thread: JoinHandle<()>,
}

type Handler = Box<dyn Fn(&str) -> (u16, String) + Send + Sync>;

impl StubServer {
    pub fn canned(replies: Vec<(u16, String)>) -> Self {
        let queue = Mutex::new(VecDeque::from(replies));
        Self::start(Box::new(move |_| queue.lock().unwrap().pop_front().unwrap_or((500, "{}".into()))))
    }

    pub fn start(handler: Handler) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(AtomicUsize::new(0));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let (r, s) = (requests.clone(), seen.clone());
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                r.fetch_add(1, Ordering::SeqCst);
                serve(stream, &handler, &s);
            }
        });
        StubServer { base_url: format!("http://{addr}/v1"), requests, seen, _thread: thread }
    }

    pub fn count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, handler: &Handler, seen: &Mutex<Vec<(String, String)>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut head = String::new();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        if line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
        head.push_str(&line);
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).unwrap();
    let body = String::from_utf8(body).unwrap();
    seen.lock().unwrap().push((head, body.clone()));
    let (status, reply) = handler(&body);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
    let _ = stream.flush();
}

/// Chat-completions reply body carrying `content`.
pub fn chat_body(content: &str) -> String {
    serde_json::json!({
        "id": "stub",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 100, "completion_tokens": 10}
    })
    .to_string()
}

/// Extracts the user message from a chat-completions request body.
pub fn prompt_of(body: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(body).unwrap();
    v["messages"][0]["content"].as_str().unwrap().to_string()
}

/// Backend answering from `Synthetic::respond`, counting calls.
pub fn synthetic_backend(s: &Arc<Synthetic>) -> Arc<hcqa_core::llm_backend::CountingBackend<impl hcqa_core::Backend>> {
    let s = s.clone();
    Arc::new(hcqa_core::llm_backend::CountingBackend::new(hcqa_core::llm_backend::FnBackend::new(
        move |req: &hcqa_core::CompletionRequest| Ok(s.respond(&req.prompt.text)),
    )))
}
