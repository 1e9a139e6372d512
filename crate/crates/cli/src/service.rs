//! JSON API over one grid session: state inspection, what-if studies, an
//! overlay of applied actions and streamed advice.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::convert::Infallible;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::{Body, Bytes};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::runtime::Handle;
use tokio::sync::{mpsc, watch, Notify};
use tokio_stream::wrappers::ReceiverStream;
use tokio_stream::StreamExt;

use topoadvisor::advisor::{advise_with, AdviceEvent, AdviseOptions, Control, CostModel};
use topoadvisor::grid::{Grid, LineId, TopologyAction};
use topoadvisor::miner::RemedialDB;
use topoadvisor::powerflow::{assess, AcSolver, Solver};
use topoadvisor::surrogate::{fast_n_minus_1, fast_screen, predicted_loading, SurrogateModel};
use topoadvisor::{SecurityCriterion, SecurityIssue};

/// Everything a server session starts from.
pub struct Session {
    pub grid: Grid,
    pub model: Option<SurrogateModel>,
    pub db: RemedialDB,
    pub criterion: SecurityCriterion,
    pub cost: CostModel,
    pub advise: AdviseOptions,
    /// Screening margin for `/screen`.
    pub margin: f64,
}

struct Running {
    cancel: Arc<Cancel>,
    tested: Arc<AtomicUsize>,
    done: watch::Receiver<bool>,
}

struct Live {
    grid: Grid,
    /// Applied actions with the grid each one replaced.
    overlay: Vec<(TopologyAction, Grid)>,
    log: Vec<Value>,
    running: Option<Running>,
}

struct Shared {
    model: Option<SurrogateModel>,
    db: RemedialDB,
    criterion: SecurityCriterion,
    cost: CostModel,
    advise: AdviseOptions,
    margin: f64,
    solver: AcSolver,
    live: Mutex<Live>,
}

impl Shared {
    fn live(&self) -> MutexGuard<'_, Live> {
        self.live.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Live {
    fn record(&mut self, mut entry: Value) {
        entry["seq"] = json!(self.log.len());
        self.log.push(entry);
    }
}

type AppState = Arc<Shared>;

pub fn router(session: Session) -> Router {
    let state = Arc::new(Shared {
        model: session.model,
        db: session.db,
        criterion: session.criterion,
        cost: session.cost,
        advise: session.advise,
        margin: session.margin,
        solver: AcSolver::default(),
        live: Mutex::new(Live {
            grid: session.grid,
            overlay: Vec::new(),
            log: Vec::new(),
            running: None,
        }),
    });
    Router::new()
        .route("/version", get(version))
        .route("/grid", get(grid))
        .route("/security", get(security))
        .route("/screen", get(screen))
        .route("/whatif", post(whatif))
        .route("/apply", post(apply))
        .route("/revert", post(revert))
        .route("/advise", get(advise))
        .route("/advise/stop", post(stop))
        .route("/log", get(log))
        .with_state(state)
}

fn fail(status: StatusCode, error: &str, message: impl ToString) -> Response {
    (status, Json(json!({ "error": error, "message": message.to_string() }))).into_response()
}

fn bad_request(message: impl ToString) -> Response {
    fail(StatusCode::BAD_REQUEST, "bad_request", message)
}

fn diverged(message: impl ToString) -> Response {
    fail(StatusCode::UNPROCESSABLE_ENTITY, "diverged", message)
}

fn busy() -> Response {
    fail(StatusCode::CONFLICT, "busy", "advice is being computed")
}

fn no_model() -> Response {
    fail(StatusCode::SERVICE_UNAVAILABLE, "no_model", "no surrogate model loaded")
}

fn parse_action(body: &[u8], grid: &Grid) -> Result<(TopologyAction, Grid), Response> {
    let action: TopologyAction = serde_json::from_slice(body).map_err(bad_request)?;
    let after = grid.apply(&action).map_err(bad_request)?;
    Ok((action, after))
}

async fn version(State(s): State<AppState>) -> Json<Value> {
    Json(json!({
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "model": s.model.is_some(),
        "db_records": s.db.len(),
    }))
}

async fn grid(State(s): State<AppState>) -> Response {
    let (g, depth) = {
        let live = s.live();
        (live.grid.clone(), live.overlay.len())
    };
    let sol = match s.solver.solve(&g) {
        Ok(sol) => sol,
        Err(e) => return diverged(e),
    };
    let lines: Vec<Value> = g
        .lines
        .iter()
        .zip(&sol.lines)
        .map(|(l, f)| {
            json!({
                "id": l.id,
                "from_sub": l.from_sub,
                "to_sub": l.to_sub,
                "in_service": l.in_service,
                "p_mw": f.p_from,
                "s_mva": f.s_max(),
                "rating": l.rating,
                "loading": if l.rating > 0.0 { f.s_max() / l.rating } else { 0.0 },
            })
        })
        .collect();
    Json(json!({
        "fingerprint": g.topology().fingerprint(),
        "overlay": depth,
        "max_loading": sol.max_loading(&g),
        "lines": lines,
        "substations": g.substations,
    }))
    .into_response()
}

async fn security(State(s): State<AppState>) -> Json<Value> {
    let g = s.live().grid.clone();
    Json(json!({ "issues": assess(&g, &s.criterion, &s.solver) }))
}

async fn screen(State(s): State<AppState>) -> Response {
    let Some(model) = &s.model else {
        return no_model();
    };
    let g = s.live().grid.clone();
    let crit = SecurityCriterion::n_minus_one(s.criterion.threshold);
    match fast_n_minus_1(model, &g, &crit, s.margin) {
        Ok(report) => Json(report).into_response(),
        Err(e) => fail(StatusCode::UNPROCESSABLE_ENTITY, "encoding", e),
    }
}

type Key = (LineId, Option<LineId>);

fn keyed(issues: &[SecurityIssue]) -> BTreeMap<Key, &SecurityIssue> {
    issues.iter().filter_map(|i| Some((i.key()?, i))).collect()
}

/// Issues cured, introduced and kept by going from `before` to `after`.
fn delta(before: &[SecurityIssue], after: &[SecurityIssue]) -> Value {
    let (b, a) = (keyed(before), keyed(after));
    let pick = |from: &BTreeMap<Key, &SecurityIssue>, keep: &dyn Fn(&Key) -> bool| -> Vec<SecurityIssue> {
        from.iter().filter(|(k, _)| keep(k)).map(|(_, i)| (*i).clone()).collect()
    };
    let before_keys: BTreeSet<&Key> = b.keys().collect();
    let after_keys: BTreeSet<&Key> = a.keys().collect();
    json!({
        "cured": pick(&b, &|k| !after_keys.contains(k)),
        "new": pick(&a, &|k| !before_keys.contains(k)),
        "unchanged": pick(&a, &|k| before_keys.contains(k)),
    })
}

/// Line flows and issues of `g`: surrogate estimates at zero margin when a
/// model is loaded, reference load flow otherwise.
fn study(s: &Shared, g: &Grid) -> Result<(Vec<Value>, Vec<SecurityIssue>), Response> {
    match &s.model {
        Some(model) => {
            let enc = |e: topoadvisor::surrogate::SurrogateError| fail(StatusCode::UNPROCESSABLE_ENTITY, "encoding", e);
            let p = model.predict_grid(g).map_err(enc)?;
            let loading = predicted_loading(model, g).map_err(enc)?;
            let issues = fast_screen(model, g, &s.criterion, 0.0).map_err(enc)?;
            let flows = g
                .lines
                .iter()
                .enumerate()
                .map(|(i, l)| json!({ "id": l.id, "p_mw": p.f_mw[i], "current_a": p.f_a[i], "loading": loading[i] }))
                .collect();
            Ok((flows, issues))
        }
        None => {
            let sol = s.solver.solve(g).map_err(diverged)?;
            let flows = g
                .lines
                .iter()
                .zip(&sol.lines)
                .map(|(l, f)| {
                    let loading = if l.rating > 0.0 { f.s_max() / l.rating } else { 0.0 };
                    json!({ "id": l.id, "p_mw": f.p_from, "current_a": f.current_a, "loading": loading })
                })
                .collect();
            Ok((flows, assess(g, &s.criterion, &s.solver)))
        }
    }
}

async fn whatif(State(s): State<AppState>, body: Bytes) -> Response {
    let g = s.live().grid.clone();
    let (_, after) = match parse_action(&body, &g) {
        Ok(x) => x,
        Err(r) => return r,
    };
    let run = || -> Result<Value, Response> {
        let (_, before_issues) = study(&s, &g)?;
        let (flows, issues) = study(&s, &after)?;
        Ok(json!({
            "source": if s.model.is_some() { "surrogate" } else { "reference" },
            "flows": flows,
            "delta": delta(&before_issues, &issues),
            "issues": issues,
        }))
    };
    match run() {
        Ok(v) => Json(v).into_response(),
        Err(r) => r,
    }
}

fn summary(s: &Shared, live: &Live, max_loading: f64) -> Value {
    json!({
        "fingerprint": live.grid.topology().fingerprint(),
        "depth": live.overlay.len(),
        "issues": assess(&live.grid, &s.criterion, &s.solver),
        "max_loading": max_loading,
    })
}

async fn apply(State(s): State<AppState>, body: Bytes) -> Response {
    let mut live = s.live();
    if live.running.is_some() {
        return busy();
    }
    let (action, after) = match parse_action(&body, &live.grid) {
        Ok(x) => x,
        Err(r) => return r,
    };
    let sol = match s.solver.solve(&after) {
        Ok(sol) => sol,
        Err(e) => return diverged(e),
    };
    let before = std::mem::replace(&mut live.grid, after);
    live.overlay.push((action.clone(), before));
    let out = summary(&s, &live, sol.max_loading(&live.grid));
    live.record(json!({ "kind": "apply", "action": action, "fingerprint": out["fingerprint"] }));
    Json(out).into_response()
}

async fn revert(State(s): State<AppState>) -> Response {
    let mut live = s.live();
    if live.running.is_some() {
        return busy();
    }
    let Some((action, before)) = live.overlay.pop() else {
        return fail(StatusCode::CONFLICT, "empty_overlay", "no applied action to revert");
    };
    live.grid = before;
    let max_loading = s.solver.solve(&live.grid).map(|sol| sol.max_loading(&live.grid)).unwrap_or(f64::NAN);
    let out = summary(&s, &live, max_loading);
    live.record(json!({ "kind": "revert", "action": action, "fingerprint": out["fingerprint"] }));
    Json(out).into_response()
}

fn line(event: Value) -> Result<Bytes, Infallible> {
    let mut text = event.to_string();
    text.push('\n');
    Ok(Bytes::from(text))
}

fn options(s: &Shared, query: &HashMap<String, String>) -> Result<AdviseOptions, String> {
    let mut opts = s.advise.clone();
    for (key, value) in query {
        match key.as_str() {
            "k" => opts.k = value.parse().map_err(|_| format!("k: not a count: {value}"))?,
            "budget" => opts.budget = Some(value.parse().map_err(|_| format!("budget: not a count: {value}"))?),
            "n_minus_1" => {
                opts.validate_n_minus_1 = value.parse().map_err(|_| format!("n_minus_1: not a boolean: {value}"))?
            }
            other => return Err(format!("unknown parameter {other}")),
        }
    }
    if opts.k == 0 {
        return Err("k must be at least 1".into());
    }
    Ok(opts)
}

/// Cancellation shared by a running advice and `/advise/stop`.
struct Cancel {
    flag: AtomicBool,
    wake: Notify,
}

impl Cancel {
    fn set(&self) {
        self.flag.store(true, Ordering::SeqCst);
        self.wake.notify_one();
    }

    fn is_set(&self) -> bool {
        self.flag.load(Ordering::SeqCst)
    }
}

/// Streams `event`, waiting while the client is behind. Returns false once
/// the run is cancelled or the client is gone.
fn emit(rt: &Handle, tx: &mpsc::Sender<Value>, cancel: &Cancel, event: Value) -> bool {
    if cancel.is_set() {
        return false;
    }
    rt.block_on(async {
        tokio::select! {
            biased;
            _ = cancel.wake.notified() => false,
            permit = tx.reserve() => match permit {
                Ok(p) => {
                    p.send(event);
                    true
                }
                Err(_) => false,
            },
        }
    })
}

async fn advise(State(s): State<AppState>, Query(query): Query<HashMap<String, String>>) -> Response {
    let opts = match options(&s, &query) {
        Ok(o) => o,
        Err(m) => return bad_request(m),
    };
    let cancel = Arc::new(Cancel {
        flag: AtomicBool::new(false),
        wake: Notify::new(),
    });
    let tested = Arc::new(AtomicUsize::new(0));
    let (done_tx, done_rx) = watch::channel(false);
    let g = {
        let mut live = s.live();
        if live.running.is_some() {
            return busy();
        }
        if let Err(e) = s.solver.solve(&live.grid) {
            return diverged(e);
        }
        live.running = Some(Running {
            cancel: cancel.clone(),
            tested: tested.clone(),
            done: done_rx,
        });
        live.grid.clone()
    };
    let (tx, rx) = mpsc::channel(1);
    let rt = Handle::current();
    let shared = s.clone();
    tokio::task::spawn_blocking(move || {
        let s = shared;
        let mut observer = |event: AdviceEvent<'_>| {
            let value = match event {
                AdviceEvent::Tested(t) => {
                    tested.fetch_add(1, Ordering::SeqCst);
                    s.live().record(json!({ "kind": "tested", "item": t }));
                    json!({ "event": "tested", "item": t })
                }
                AdviceEvent::Recommended(r) => json!({ "event": "recommended", "item": r }),
            };
            if !emit(&rt, &tx, &cancel, value) {
                cancel.set();
            }
        };
        let control = Control {
            cancel: Some(&cancel.flag),
            observer: Some(&mut observer),
        };
        let last = match advise_with(&g, &s.criterion, s.model.as_ref(), &s.db, &s.cost, &opts, &s.solver, control) {
            Ok(a) => json!({
                "event": "done",
                "status": a.status,
                "recommendations": a.recommendations,
                "tested": a.tested.len(),
                "candidates": a.candidates,
                "solver_calls": a.solver_calls,
                "budget_exhausted": a.budget_exhausted,
                "cancelled": a.cancelled,
            }),
            Err(e) => json!({ "event": "error", "message": e.to_string() }),
        };
        // A stopped run must not wait on a client that has stopped reading.
        if cancel.is_set() {
            let _ = tx.try_send(last);
        } else {
            emit(&rt, &tx, &cancel, last);
        }
        s.live().running = None;
        let _ = done_tx.send(true);
    });
    let stream = ReceiverStream::new(rx).map(line);
    Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from_stream(stream))
        .expect("valid response")
}

async fn stop(State(s): State<AppState>) -> Json<Value> {
    let running = s
        .live()
        .running
        .as_ref()
        .map(|r| (r.cancel.clone(), r.tested.clone(), r.done.clone()));
    let Some((cancel, tested, mut done)) = running else {
        return Json(json!({ "stopped": false, "tested": 0 }));
    };
    cancel.set();
    let _ = done.wait_for(|d| *d).await;
    Json(json!({ "stopped": true, "tested": tested.load(Ordering::SeqCst) }))
}

async fn log(State(s): State<AppState>) -> Json<Value> {
    Json(json!({ "entries": s.live().log }))
}
