//! The management agent: retargets call sites and wraps them with advice
//! while programs run. Requests arrive as JSON objects, either one per line
//! over TCP or one per text frame over a WebSocket at `/ctl`. Both
//! transports share a port; the first byte of a connection picks one.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::bytecode::{FunctionType, InvocationKind, MethodRef, TypeDesc};
use crate::callsite::{DynamicCallSite, Modification, Wrapper};
use crate::handles::{self, FunctionHandle, HandleError};
use crate::vm::Image;

pub const BEFORE_ADVICE_TYPE: &str = "([A)[A";
pub const AFTER_ADVICE_TYPE: &str = "(A)A";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    UnknownOp,
    UnknownKey,
    NoSuchMethod,
    TypeIncompatibleTarget,
    NoMatch,
    VoidReturnSite,
    BadParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct AgentError {
    pub code: ErrorCode,
    pub message: String,
}

impl AgentError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        AgentError {
            code,
            message: message.into(),
        }
    }
}

impl From<HandleError> for AgentError {
    fn from(e: HandleError) -> Self {
        let code = match e {
            HandleError::NoSuchMethod(_) => ErrorCode::NoSuchMethod,
            HandleError::VoidReturn => ErrorCode::VoidReturnSite,
            _ => ErrorCode::TypeIncompatibleTarget,
        };
        AgentError::new(code, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct Request {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Json>,
    pub op: String,
    #[serde(default)]
    pub params: Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Json>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<AgentError>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ChangeParams {
    method_type: String,
    old_target: String,
    new_target: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct AspectParams {
    call_sites_key: String,
    aspect_class: String,
    aspect_method: String,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ListParams {
    pattern: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResetParams {
    key: String,
}

pub const OPS: &[&str] = &[
    "changeCallSiteTarget",
    "applyBeforeAspect",
    "applyAfterAspect",
    "listCallSites",
    "resetCallSite",
    "metrics",
];

pub struct Agent {
    image: Arc<Image>,
    /// Serializes management operations against each other.
    ops: Mutex<()>,
}

impl Agent {
    pub fn new(image: Arc<Image>) -> Agent {
        Agent {
            image,
            ops: Mutex::new(()),
        }
    }

    pub fn image(&self) -> &Arc<Image> {
        &self.image
    }

    /// Points every site under `kind:old_target` at `new_target`. For
    /// receiver kinds the new target may be written with or without the
    /// receiver parameter.
    pub fn change_call_site_target(
        &self,
        method_type: &str,
        old_target: &str,
        new_target: &str,
    ) -> Result<usize, AgentError> {
        let kind = InvocationKind::parse(method_type).ok_or_else(|| {
            AgentError::new(
                ErrorCode::BadParams,
                format!(
                    "methodType must be static, virtual, interface or special, not {method_type:?}"
                ),
            )
        })?;
        let key = format!("{kind}:{old_target}");
        let _g = self.ops.lock();
        let sites = self.image.registry().sites_matching(&key);
        let Some(first) = sites.first() else {
            return Err(AgentError::new(
                ErrorCode::UnknownKey,
                format!("no call site is registered under {key}"),
            ));
        };
        let declared = first.declared_type().clone();
        let r: MethodRef = new_target.parse().map_err(|_| {
            AgentError::new(
                ErrorCode::BadParams,
                format!("bad method reference {new_target:?}"),
            )
        })?;
        let ty = if kind.has_receiver()
            && r.ty.params.first() != Some(&TypeDesc::class(r.owner.clone()))
        {
            r.ty.with_receiver(TypeDesc::class(r.owner.clone()))
        } else {
            r.ty.clone()
        };
        let h = handles::lookup_direct(kind, &r.owner, &r.name, &ty, &self.image)?;
        let h = self.fit(h, &declared)?;
        self.modify(&key, Modification::Replace(h), ErrorCode::UnknownKey)
    }

    /// Adapts a replacement whose receiver is a related class to the site type.
    fn fit(
        &self,
        h: FunctionHandle,
        declared: &FunctionType,
    ) -> Result<FunctionHandle, AgentError> {
        let ty = h.ty();
        if ty == declared {
            return Ok(h);
        }
        let incompatible = || {
            AgentError::new(
                ErrorCode::TypeIncompatibleTarget,
                format!("target type {ty} does not match site type {declared}"),
            )
        };
        let related = match (ty.params.first(), declared.params.first()) {
            (Some(TypeDesc::Class(a)), Some(TypeDesc::Class(b))) => {
                let sub =
                    |x: &str, y: &str| self.image.class(x).is_some_and(|c| c.is_subtype_of(y));
                sub(a, b) || sub(b, a)
            }
            _ => false,
        };
        if !related || ty.params[1..] != declared.params[1..] || ty.ret != declared.ret {
            return Err(incompatible());
        }
        Ok(handles::as_type(&h, declared)?)
    }

    pub fn apply_before_aspect(
        &self,
        pattern: &str,
        owner: &str,
        method: &str,
    ) -> Result<usize, AgentError> {
        let _g = self.ops.lock();
        self.matching(pattern)?;
        let advice = self.advice(owner, method, BEFORE_ADVICE_TYPE)?;
        let label = format!("before {owner}.{method}");
        let wrapper: Wrapper = Arc::new(move |t| before(t, &advice));
        self.modify(
            pattern,
            Modification::Wrap { label, wrapper },
            ErrorCode::NoMatch,
        )
    }

    pub fn apply_after_aspect(
        &self,
        pattern: &str,
        owner: &str,
        method: &str,
    ) -> Result<usize, AgentError> {
        let _g = self.ops.lock();
        let sites = self.matching(pattern)?;
        if let Some(s) = sites.iter().find(|s| s.declared_type().ret.is_void()) {
            return Err(AgentError::new(
                ErrorCode::VoidReturnSite,
                format!("{} returns void", s.key_text()),
            ));
        }
        let advice = self.advice(owner, method, AFTER_ADVICE_TYPE)?;
        let label = format!("after {owner}.{method}");
        let wrapper: Wrapper = Arc::new(move |t| after(t, &advice));
        self.modify(
            pattern,
            Modification::Wrap { label, wrapper },
            ErrorCode::NoMatch,
        )
    }

    pub fn list_call_sites(&self, pattern: Option<&str>) -> crate::callsite::Metrics {
        self.image.registry().metrics(pattern)
    }

    pub fn reset_call_site(&self, key: &str) -> Result<usize, AgentError> {
        let _g = self.ops.lock();
        self.modify(key, Modification::Reset, ErrorCode::UnknownKey)
    }

    fn modify(
        &self,
        pattern: &str,
        m: Modification,
        missing: ErrorCode,
    ) -> Result<usize, AgentError> {
        match self.image.registry().modify(pattern, m)? {
            0 => Err(AgentError::new(
                missing,
                format!("no call site matches {pattern}"),
            )),
            n => Ok(n),
        }
    }

    pub fn metrics(&self) -> Json {
        let m = self.image.registry().metrics(None);
        let mut v = serde_json::to_value(m).expect("metrics serialize");
        v["lookups"] = json!(self.image.lookup_count());
        v["bootstraps"] = json!(self.image.bootstrap_count());
        v
    }

    fn matching(&self, pattern: &str) -> Result<Vec<Arc<DynamicCallSite>>, AgentError> {
        let sites = self.image.registry().sites_matching(pattern);
        if sites.is_empty() {
            return Err(AgentError::new(
                ErrorCode::NoMatch,
                format!("no call site matches {pattern}"),
            ));
        }
        Ok(sites)
    }

    fn advice(&self, owner: &str, method: &str, ty: &str) -> Result<FunctionHandle, AgentError> {
        let ty: FunctionType = ty.parse().expect("advice types parse");
        Ok(handles::lookup_direct(
            InvocationKind::Static,
            owner,
            method,
            &ty,
            &self.image,
        )?)
    }

    pub fn handle(&self, req: Request) -> Response {
        let result = self.dispatch(&req.op, req.params);
        match result {
            Ok(v) => Response {
                id: req.id,
                ok: true,
                result: Some(v),
                error: None,
            },
            Err(e) => Response {
                id: req.id,
                ok: false,
                result: None,
                error: Some(e),
            },
        }
    }

    /// One wire message in, one wire message out (without trailing newline).
    pub fn handle_text(&self, text: &str) -> String {
        let resp = match serde_json::from_str::<Json>(text) {
            Err(e) => error_response(None, ErrorCode::BadParams, format!("malformed JSON: {e}")),
            Ok(v) => {
                let id = v.get("id").cloned();
                match serde_json::from_value::<Request>(v) {
                    Ok(req) => self.handle(req),
                    Err(e) => {
                        error_response(id, ErrorCode::BadParams, format!("malformed request: {e}"))
                    }
                }
            }
        };
        serde_json::to_string(&resp).expect("responses serialize")
    }

    fn dispatch(&self, op: &str, params: Json) -> Result<Json, AgentError> {
        let changed = |n: usize| json!({ "sitesChanged": n });
        match op {
            "changeCallSiteTarget" => {
                let p: ChangeParams = params_of(params)?;
                self.change_call_site_target(&p.method_type, &p.old_target, &p.new_target)
                    .map(changed)
            }
            "applyBeforeAspect" => {
                let p: AspectParams = params_of(params)?;
                self.apply_before_aspect(&p.call_sites_key, &p.aspect_class, &p.aspect_method)
                    .map(changed)
            }
            "applyAfterAspect" => {
                let p: AspectParams = params_of(params)?;
                self.apply_after_aspect(&p.call_sites_key, &p.aspect_class, &p.aspect_method)
                    .map(changed)
            }
            "listCallSites" => {
                let p: ListParams = if params.is_null() {
                    ListParams::default()
                } else {
                    params_of(params)?
                };
                Ok(
                    serde_json::to_value(self.list_call_sites(p.pattern.as_deref()))
                        .expect("metrics serialize"),
                )
            }
            "resetCallSite" => {
                let p: ResetParams = params_of(params)?;
                self.reset_call_site(&p.key).map(changed)
            }
            "metrics" => Ok(self.metrics()),
            other => Err(AgentError::new(
                ErrorCode::UnknownOp,
                format!("unknown op {other:?}"),
            )),
        }
    }
}

fn params_of<T: for<'de> Deserialize<'de>>(params: Json) -> Result<T, AgentError> {
    let params = if params.is_null() { json!({}) } else { params };
    serde_json::from_value(params).map_err(|e| AgentError::new(ErrorCode::BadParams, e.to_string()))
}

fn error_response(id: Option<Json>, code: ErrorCode, message: String) -> Response {
    Response {
        id,
        ok: false,
        result: None,
        error: Some(AgentError { code, message }),
    }
}

/// Arguments are collected into an `[A`, run through `advice`, and spread
/// back into `t`. For receiver kinds element 0 is the receiver.
pub fn before(t: &FunctionHandle, advice: &FunctionHandle) -> Result<FunctionHandle, HandleError> {
    let n = t.arity();
    let erased = handles::as_type(t, &t.ty().erased())?;
    let spread = handles::as_spreader(&erased, n)?;
    let filtered = handles::filter_arguments(&spread, 0, vec![advice.clone()])?;
    let collected = handles::as_collector(&filtered, n)?;
    handles::as_type(&collected, t.ty())
}

/// The return value is widened to `A`, passed through `advice`, and
/// narrowed back to the site's return type.
pub fn after(t: &FunctionHandle, advice: &FunctionHandle) -> Result<FunctionHandle, HandleError> {
    if t.ty().ret.is_void() {
        return Err(HandleError::VoidReturn);
    }
    let widened = handles::as_type(t, &FunctionType::new(t.ty().params.clone(), TypeDesc::Any))?;
    let filtered = handles::filter_return_value(&widened, advice)?;
    handles::as_type(&filtered, t.ty())
}

/// Builds a request from command-line style positional arguments.
pub fn request_from_args(op: &str, args: &[String]) -> Result<Request, String> {
    let want = |names: &[&str]| -> Result<Json, String> {
        if args.len() != names.len() {
            return Err(format!(
                "{op} takes {} argument(s): {}",
                names.len(),
                names.join(" ")
            ));
        }
        Ok(Json::Object(
            names
                .iter()
                .zip(args)
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect(),
        ))
    };
    let params = match op {
        "changeCallSiteTarget" => want(&["methodType", "oldTarget", "newTarget"])?,
        "applyBeforeAspect" | "applyAfterAspect" => {
            want(&["callSitesKey", "aspectClass", "aspectMethod"])?
        }
        "listCallSites" if args.is_empty() => json!({}),
        "listCallSites" => want(&["pattern"])?,
        "resetCallSite" => want(&["key"])?,
        _ => json!({}),
    };
    Ok(Request {
        id: None,
        op: op.to_string(),
        params,
    })
}

/// A running listener. Dropping it stops accepting new connections.
pub struct AgentServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl AgentServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for AgentServer {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

pub fn serve(agent: Arc<Agent>, addr: impl ToSocketAddrs) -> io::Result<AgentServer> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let accept = thread::Builder::new()
        .name("fluxvm-agent".into())
        .spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let agent = agent.clone();
                let _ = thread::Builder::new()
                    .name("fluxvm-agent-conn".into())
                    .spawn(move || {
                        if let Err(e) = connection(&agent, stream) {
                            log::debug!("agent connection closed: {e}");
                        }
                    });
            }
        })?;
    Ok(AgentServer {
        addr,
        stop,
        accept: Some(accept),
    })
}

fn connection(agent: &Agent, stream: TcpStream) -> io::Result<()> {
    let mut first = [0u8; 1];
    if stream.peek(&mut first)? == 0 {
        return Ok(());
    }
    if first[0] == b'G' {
        websocket(agent, stream)
    } else {
        ndjson(agent, stream)
    }
}

fn ndjson(agent: &Agent, stream: TcpStream) -> io::Result<()> {
    let mut out = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = agent.handle_text(&line);
        out.write_all(reply.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}

fn websocket(agent: &Agent, stream: TcpStream) -> io::Result<()> {
    use tungstenite::handshake::server::{
        ErrorResponse, Request as HttpRequest, Response as HttpResponse,
    };
    use tungstenite::http::StatusCode;
    use tungstenite::Message;

    #[allow(clippy::result_large_err)] // shape fixed by tungstenite's callback
    let check = |req: &HttpRequest, resp: HttpResponse| -> Result<HttpResponse, ErrorResponse> {
        if req.uri().path() == "/ctl" {
            Ok(resp)
        } else {
            let mut err = ErrorResponse::new(Some("only /ctl is served here".into()));
            *err.status_mut() = StatusCode::NOT_FOUND;
            Err(err)
        }
    };
    let mut ws = tungstenite::accept_hdr(stream, check).map_err(io::Error::other)?;
    loop {
        let msg = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                return Ok(())
            }
            Err(e) => return Err(io::Error::other(e)),
        };
        let reply = match msg {
            Message::Text(t) => agent.handle_text(t.as_str()),
            Message::Binary(b) => agent.handle_text(&String::from_utf8_lossy(&b)),
            Message::Close(_) => return Ok(()),
            _ => continue,
        };
        ws.send(Message::text(reply)).map_err(io::Error::other)?;
    }
}

/// Sends one request over the line transport and returns the raw reply line.
pub fn send(addr: impl ToSocketAddrs, request: &Request) -> io::Result<String> {
    let mut stream = TcpStream::connect(addr)?;
    let mut line = serde_json::to_string(request).map_err(io::Error::other)?;
    line.push('\n');
    stream.write_all(line.as_bytes())?;
    stream.flush()?;
    let mut reply = String::new();
    BufReader::new(stream).read_line(&mut reply)?;
    if reply.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "agent closed the connection",
        ));
    }
    Ok(reply.trim_end().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::assemble;
    use crate::corpus;
    use crate::value::Value;
    use crate::vm::io::Capture;
    use crate::vm::ImageConfig;

    fn fib_image() -> (Arc<Image>, Capture) {
        let mut image = Image::new(ImageConfig::default());
        let out = Capture::new();
        image.set_output(Arc::new(out.clone()));
        image
            .load(corpus::program("classicfibo").unwrap().module(), true)
            .unwrap();
        for name in ["Dumpers", "Empty", "Tags"] {
            image.load(corpus::advice(name).unwrap(), false).unwrap();
        }
        let image = Arc::new(image);
        image.run(None, vec![Value::Int(1)]).unwrap();
        out.clear();
        (image, out)
    }

    const FIB: &str = "static:Fib.classicfibo:(I)I";

    fn run(image: &Image, out: &Capture, n: i64) -> String {
        out.clear();
        image.run(None, vec![Value::Int(n)]).unwrap();
        out.text()
    }

    #[test]
    fn dumpers_bracket_the_result() {
        let (image, out) = fib_image();
        let agent = Agent::new(image.clone());
        assert_eq!(
            agent.apply_before_aspect(FIB, "Dumpers", "onCall").unwrap(),
            1
        );
        assert_eq!(
            agent
                .apply_after_aspect(FIB, "Dumpers", "onReturn")
                .unwrap(),
            1
        );
        let text = run(&image, &out, 3);
        // fib(3) calls fib(2), which calls fib(1) and fib(0); then fib(1).
        let expected =
            ">>> [3]\n>>> [2]\n>>> [1]\n<<< 1\n>>> [0]\n<<< 0\n<<< 1\n>>> [1]\n<<< 1\n<<< 2\n2\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn newest_aspect_is_outermost() {
        let (image, out) = fib_image();
        let agent = Agent::new(image.clone());
        agent.apply_before_aspect(FIB, "Tags", "first").unwrap();
        agent.apply_before_aspect(FIB, "Tags", "second").unwrap();
        let text = run(&image, &out, 0);
        assert_eq!(text, "second [0]\nfirst [0]\n0\n");
        let m = agent.list_call_sites(Some(FIB));
        assert_eq!(
            m.sites[0].aspects,
            vec!["before Tags.first", "before Tags.second"]
        );
    }

    #[test]
    fn reset_restores_and_is_idempotent() {
        let (image, out) = fib_image();
        let agent = Agent::new(image.clone());
        let before = run(&image, &out, 6);
        agent.apply_before_aspect(FIB, "Dumpers", "onCall").unwrap();
        assert_ne!(run(&image, &out, 6), before);
        // main's call plus the two recursive calls.
        assert_eq!(agent.reset_call_site(FIB).unwrap(), 3);
        assert_eq!(agent.reset_call_site(FIB).unwrap(), 3);
        assert_eq!(run(&image, &out, 6), before);
        assert!(agent.list_call_sites(Some(FIB)).sites[0].aspects.is_empty());
    }

    #[test]
    fn identity_advice_is_transparent() {
        let (image, out) = fib_image();
        let agent = Agent::new(image.clone());
        let plain = run(&image, &out, 8);
        for _ in 0..2 {
            agent.apply_before_aspect(FIB, "Empty", "onCall").unwrap();
            agent.apply_after_aspect(FIB, "Empty", "onReturn").unwrap();
        }
        assert_eq!(run(&image, &out, 8), plain);
    }

    #[test]
    fn advice_failures_surface_at_the_next_call() {
        let (image, _out) = fib_image();
        let agent = Agent::new(image.clone());
        agent.apply_before_aspect(FIB, "Tags", "widen").unwrap();
        assert!(image.run(None, vec![Value::Int(3)]).is_err());
        agent.reset_call_site(FIB).unwrap();
        agent.apply_after_aspect(FIB, "Tags", "text").unwrap();
        let err = image.run(None, vec![Value::Int(3)]).unwrap_err();
        assert!(matches!(err, crate::vm::VmError::Cast { .. }), "{err:?}");
    }

    #[test]
    fn error_codes() {
        let (image, _out) = fib_image();
        let agent = Agent::new(image);
        let code = |r: Result<usize, AgentError>| r.unwrap_err().code;
        assert_eq!(
            code(agent.apply_before_aspect("static:Nope.*", "Dumpers", "onCall")),
            ErrorCode::NoMatch
        );
        assert_eq!(
            code(agent.apply_before_aspect(FIB, "Dumpers", "missing")),
            ErrorCode::NoSuchMethod
        );
        assert_eq!(
            code(agent.apply_before_aspect(FIB, "Tags", "wrongShape")),
            ErrorCode::TypeIncompatibleTarget
        );
        assert_eq!(
            code(agent.apply_after_aspect(FIB, "Dumpers", "onCall")),
            ErrorCode::TypeIncompatibleTarget
        );
        assert_eq!(
            code(agent.reset_call_site("static:Fib.other:()I")),
            ErrorCode::UnknownKey
        );
        assert_eq!(
            code(agent.change_call_site_target(
                "static",
                "Fib.nothing:(I)I",
                "Fib.classicfibo:(I)I"
            )),
            ErrorCode::UnknownKey
        );
        assert_eq!(
            code(agent.change_call_site_target("static", "Fib.classicfibo:(I)I", "Fib.main:(I)V")),
            ErrorCode::TypeIncompatibleTarget
        );
        assert_eq!(
            code(agent.change_call_site_target(
                "static",
                "Fib.classicfibo:(I)I",
                "Fib.absent:(I)I"
            )),
            ErrorCode::NoSuchMethod
        );
        assert_eq!(
            code(agent.change_call_site_target(
                "sideways",
                "Fib.classicfibo:(I)I",
                "Fib.classicfibo:(I)I"
            )),
            ErrorCode::BadParams
        );
    }

    #[test]
    fn void_sites_reject_after_advice() {
        let src = "module V\nfn f:()V {\n RET\n}\nfn main:()V {\n INVOKE_STATIC V.f:()V\n RET\n}\n";
        let mut image = Image::new(ImageConfig::default());
        image.load(assemble(src).unwrap(), true).unwrap();
        image.load(corpus::advice("Empty").unwrap(), false).unwrap();
        let image = Arc::new(image);
        image.run(None, vec![]).unwrap();
        let agent = Agent::new(image.clone());
        let e = agent
            .apply_after_aspect("static:V.f:()V", "Empty", "onReturn")
            .unwrap_err();
        assert_eq!(e.code, ErrorCode::VoidReturnSite);
        // Before advice on a nullary site sees an empty array.
        agent
            .apply_before_aspect("static:V.f:()V", "Empty", "onCall")
            .unwrap();
        image.run(None, vec![]).unwrap();
    }

    #[test]
    fn swapping_to_the_current_target_changes_nothing() {
        let (image, out) = fib_image();
        let agent = Agent::new(image.clone());
        let plain = run(&image, &out, 7);
        assert_eq!(
            agent
                .change_call_site_target("static", "Fib.classicfibo:(I)I", "Fib.classicfibo:(I)I")
                .unwrap(),
            3
        );
        assert_eq!(run(&image, &out, 7), plain);
    }

    #[test]
    fn wire_messages() {
        let (image, _out) = fib_image();
        let agent = Agent::new(image);
        let r = agent.handle_text(r#"{"id":"7","op":"frobnicate","params":{}}"#);
        assert_eq!(
            r,
            r#"{"id":"7","ok":false,"error":{"code":"unknown-op","message":"unknown op \"frobnicate\""}}"#
        );
        let r = agent.handle_text(r#"{"id":"8","op":"resetCallSite","params":{}}"#);
        assert!(r.contains(r#""code":"bad-params""#), "{r}");
        let r = agent.handle_text("not json");
        assert!(
            r.starts_with(r#"{"ok":false,"error":{"code":"bad-params""#),
            "{r}"
        );
        let r = agent
            .handle_text(r#"{"id":"9","op":"listCallSites","params":{"pattern":"static:Fib.*"}}"#);
        let v: Json = serde_json::from_str(&r).unwrap();
        assert_eq!(v["result"]["siteCount"], 1);
        assert_eq!(v["result"]["sites"][0]["key"], FIB);
        let r = agent
            .handle_text(r#"{"id":"10","op":"listCallSites","params":{"pattern":"virtual:*"}}"#);
        let v: Json = serde_json::from_str(&r).unwrap();
        assert_eq!(v["result"]["siteCount"], 0);
    }

    #[test]
    fn positional_requests() {
        let args = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let r = request_from_args("resetCallSite", &args(&[FIB])).unwrap();
        assert_eq!(r.params, json!({ "key": FIB }));
        assert!(request_from_args("resetCallSite", &[]).is_err());
        let r = request_from_args("listCallSites", &[]).unwrap();
        assert_eq!(r.params, json!({}));
        assert_eq!(
            serde_json::to_string(&request_from_args("metrics", &[]).unwrap()).unwrap(),
            r#"{"op":"metrics","params":{}}"#
        );
    }
}
