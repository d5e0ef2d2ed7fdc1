//! Dynamic call sites and the registry that tracks them.
//!
//! A site's target is read on every call with a single atomic pointer load;
//! the registry is only touched at link time and by management operations.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{fence, AtomicPtr, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::bytecode::FunctionType;
use crate::handles::{FunctionHandle, HandleError};
use crate::transformer::SiteKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    #[default]
    Volatile,
    Mutable,
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Semantics::Volatile => "volatile",
            Semantics::Mutable => "mutable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallSiteError {
    #[error("target type {found} does not match site type {expected}")]
    TypeMismatch {
        expected: FunctionType,
        found: FunctionType,
    },
    #[error("site #{0} is already registered")]
    Duplicate(u64),
}

static NEXT_SITE_ID: AtomicU64 = AtomicU64::new(1);

pub struct DynamicCallSite {
    key: SiteKey,
    key_text: String,
    site_id: u64,
    semantics: Semantics,
    declared: FunctionType,
    /// Points into `installed`. Never dangles: handles are only dropped with the site.
    target: AtomicPtr<FunctionHandle>,
    /// Every handle ever installed here, current one last. Boxed so addresses survive growth.
    #[allow(clippy::vec_box)]
    installed: Mutex<Vec<Box<FunctionHandle>>>,
    original: FunctionHandle,
    invocations: AtomicU64,
    bootstraps: AtomicU64,
    /// Installed advice, oldest first. Guarded together with target rewrites.
    aspects: Mutex<Vec<String>>,
}

fn bump(c: &AtomicU64) {
    if c.load(Ordering::Relaxed) != u64::MAX {
        c.fetch_add(1, Ordering::Relaxed);
    }
}

/// Load then store: no locked instruction on the call path. Concurrent
/// callers of one site may lose increments, so the count is a lower bound.
#[inline]
fn bump_approx(c: &AtomicU64) {
    let n = c.load(Ordering::Relaxed);
    c.store(n.saturating_add(1), Ordering::Relaxed);
}

impl DynamicCallSite {
    pub fn new(
        key: SiteKey,
        ty: FunctionType,
        semantics: Semantics,
        initial: FunctionHandle,
    ) -> Result<Self, CallSiteError> {
        if initial.ty() != &ty {
            return Err(CallSiteError::TypeMismatch {
                expected: ty,
                found: initial.ty().clone(),
            });
        }
        let mut first = Box::new(initial.clone());
        let ptr: *mut FunctionHandle = &mut *first;
        Ok(DynamicCallSite {
            key_text: key.to_string(),
            key,
            site_id: NEXT_SITE_ID.fetch_add(1, Ordering::Relaxed),
            semantics,
            declared: ty,
            target: AtomicPtr::new(ptr),
            installed: Mutex::new(vec![first]),
            original: initial,
            invocations: AtomicU64::new(0),
            bootstraps: AtomicU64::new(0),
            aspects: Mutex::new(Vec::new()),
        })
    }

    pub fn key(&self) -> &SiteKey {
        &self.key
    }

    pub fn key_text(&self) -> &str {
        &self.key_text
    }

    pub fn site_id(&self) -> u64 {
        self.site_id
    }

    pub fn semantics(&self) -> Semantics {
        self.semantics
    }

    pub fn declared_type(&self) -> &FunctionType {
        &self.declared
    }

    /// Current target. This is the only read on the call path.
    #[inline]
    pub fn target(&self) -> &FunctionHandle {
        // SAFETY: the pointer always refers to a box owned by `installed`,
        // which only grows, and the boxes live as long as `self`.
        unsafe { &*self.target.load(Ordering::Acquire) }
    }

    pub fn current(&self) -> FunctionHandle {
        self.target().clone()
    }

    pub fn original(&self) -> &FunctionHandle {
        &self.original
    }

    pub fn set_target(&self, h: FunctionHandle) -> Result<(), CallSiteError> {
        if h.ty() != &self.declared {
            return Err(CallSiteError::TypeMismatch {
                expected: self.declared.clone(),
                found: h.ty().clone(),
            });
        }
        let mut installed = self.installed.lock();
        let mut b = Box::new(h);
        let ptr: *mut FunctionHandle = &mut *b;
        installed.push(b);
        match self.semantics {
            Semantics::Volatile => {
                self.target.store(ptr, Ordering::SeqCst);
                fence(Ordering::SeqCst);
            }
            Semantics::Mutable => self.target.store(ptr, Ordering::Release),
        }
        Ok(())
    }

    /// Reinstalls the bootstrap-time target and drops all advice.
    pub fn reset(&self) {
        let mut aspects = self.aspects.lock();
        self.set_target(self.original.clone())
            .expect("original handle has the declared type");
        aspects.clear();
    }

    pub fn aspects(&self) -> Vec<String> {
        self.aspects.lock().clone()
    }

    #[inline]
    pub fn record_invocation(&self) {
        bump_approx(&self.invocations);
    }

    pub fn record_bootstrap(&self) {
        bump(&self.bootstraps);
    }

    pub fn invocation_count(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn bootstrap_count(&self) -> u64 {
        self.bootstraps.load(Ordering::Relaxed)
    }

    pub fn metrics(&self) -> SiteMetrics {
        SiteMetrics {
            key: self.key_text.clone(),
            site_id: self.site_id,
            kind: self.key.kind.to_string(),
            r#type: self.declared.to_string(),
            semantics: self.semantics,
            invocation_count: self.invocation_count(),
            bootstrap_count: self.bootstrap_count(),
            target: self.current().to_string(),
            aspects: self.aspects(),
        }
    }
}

impl fmt::Debug for DynamicCallSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicCallSite")
            .field("key", &self.key_text)
            .field("site_id", &self.site_id)
            .field("semantics", &self.semantics)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SiteMetrics {
    pub key: String,
    pub site_id: u64,
    pub kind: String,
    pub r#type: String,
    pub semantics: Semantics,
    pub invocation_count: u64,
    pub bootstrap_count: u64,
    pub target: String,
    pub aspects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub site_count: usize,
    pub sites: Vec<SiteMetrics>,
}

pub type Wrapper =
    Arc<dyn Fn(&FunctionHandle) -> Result<FunctionHandle, HandleError> + Send + Sync>;

/// A management change to the sites under a key pattern.
#[derive(Clone)]
pub enum Modification {
    Replace(FunctionHandle),
    /// Wraps the current target; `label` is recorded in the site's aspect list.
    Wrap {
        label: String,
        wrapper: Wrapper,
    },
    Reset,
}

impl Modification {
    fn target_for(&self, site: &DynamicCallSite) -> Result<FunctionHandle, HandleError> {
        let h = match self {
            Modification::Replace(h) => h.clone(),
            Modification::Reset => site.original.clone(),
            Modification::Wrap { wrapper, .. } => wrapper(&site.current())?,
        };
        if h.ty() != &site.declared {
            return Err(HandleError::TypeMismatch(format!(
                "target type {} does not match site type {}",
                h.ty(),
                site.declared
            )));
        }
        Ok(h)
    }

    fn install(&self, site: &DynamicCallSite, h: FunctionHandle) {
        let mut aspects = site.aspects.lock();
        site.set_target(h).expect("checked by target_for");
        match self {
            Modification::Wrap { label, .. } => aspects.push(label.clone()),
            _ => aspects.clear(),
        }
    }
}

/// Exact key text, or a prefix ending in `*`.
pub fn pattern_matches(pattern: &str, key: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => key.starts_with(prefix),
        None => key == pattern,
    }
}

#[derive(Default)]
struct RegistryInner {
    by_key: BTreeMap<String, Vec<Arc<DynamicCallSite>>>,
    by_id: BTreeMap<u64, Arc<DynamicCallSite>>,
    /// Every modification so far, replayed on sites that link later.
    log: Vec<(String, Modification)>,
}

impl RegistryInner {
    fn matching(&self, pattern: &str) -> Vec<Arc<DynamicCallSite>> {
        match pattern.strip_suffix('*') {
            Some(prefix) => self
                .by_key
                .range(prefix.to_string()..)
                .take_while(|(k, _)| k.starts_with(prefix))
                .flat_map(|(_, v)| v.iter().cloned())
                .collect(),
            None => self.by_key.get(pattern).cloned().unwrap_or_default(),
        }
    }
}

/// Key → sites map. Every access bumps `accesses`, which tests use to show
/// the call path never comes here once a site is linked.
#[derive(Default)]
pub struct SiteRegistry {
    inner: Mutex<RegistryInner>,
    accesses: AtomicU64,
}

impl SiteRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, site: Arc<DynamicCallSite>) -> Result<(), CallSiteError> {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        let mut inner = self.inner.lock();
        if inner.by_id.contains_key(&site.site_id) {
            return Err(CallSiteError::Duplicate(site.site_id));
        }
        // A late site ends up as if it had been linked before every change.
        for (pattern, m) in &inner.log {
            if !pattern_matches(pattern, &site.key_text) {
                continue;
            }
            match m.target_for(&site) {
                Ok(h) => m.install(&site, h),
                Err(e) => log::warn!("skipping change for {pattern} on {}: {e}", site.key_text),
            }
        }
        inner.by_id.insert(site.site_id, site.clone());
        inner
            .by_key
            .entry(site.key_text.clone())
            .or_default()
            .push(site);
        Ok(())
    }

    /// Applies `m` to every site matching `pattern`, and to any site linked
    /// under a matching key later. Either every current site changes or none
    /// does. Returns the number of sites changed; with none, nothing is recorded.
    pub fn modify(&self, pattern: &str, m: Modification) -> Result<usize, HandleError> {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        let mut inner = self.inner.lock();
        let sites = inner.matching(pattern);
        if sites.is_empty() {
            return Ok(0);
        }
        let targets = sites
            .iter()
            .map(|s| m.target_for(s))
            .collect::<Result<Vec<_>, _>>()?;
        for (s, h) in sites.iter().zip(targets) {
            m.install(s, h);
        }
        if !matches!(m, Modification::Wrap { .. }) {
            inner.log.retain(|(p, _)| p != pattern);
        }
        inner.log.push((pattern.to_string(), m));
        Ok(sites.len())
    }

    /// Exact key text, or a prefix ending in `*`.
    pub fn sites_matching(&self, pattern: &str) -> Vec<Arc<DynamicCallSite>> {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        self.inner.lock().matching(pattern)
    }

    pub fn site(&self, id: u64) -> Option<Arc<DynamicCallSite>> {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        self.inner.lock().by_id.get(&id).cloned()
    }

    pub fn keys(&self) -> Vec<String> {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        self.inner.lock().by_key.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn metrics(&self, pattern: Option<&str>) -> Metrics {
        let sites: Vec<SiteMetrics> = match pattern {
            Some(p) => self.sites_matching(p).iter().map(|s| s.metrics()).collect(),
            None => {
                self.accesses.fetch_add(1, Ordering::Relaxed);
                let all: Vec<_> = self.inner.lock().by_id.values().cloned().collect();
                all.iter().map(|s| s.metrics()).collect()
            }
        };
        Metrics {
            site_count: sites.len(),
            sites,
        }
    }

    /// Number of registry operations performed so far.
    pub fn accesses(&self) -> u64 {
        self.accesses.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::InvocationKind;
    use crate::handles;
    use crate::value::Value;

    fn constant(ty: &str, v: i64) -> FunctionHandle {
        let ty: FunctionType = ty.parse().unwrap();
        handles::constant(ty, Value::Int(v)).unwrap()
    }

    fn key(text: &str) -> SiteKey {
        text.parse().unwrap()
    }

    #[test]
    fn make_site_checks_type() {
        let ok = DynamicCallSite::new(
            key("static:M.f:(I)I"),
            "(I)I".parse().unwrap(),
            Semantics::Volatile,
            constant("(I)I", 1),
        );
        assert!(ok.is_ok());
        let bad = DynamicCallSite::new(
            key("static:M.f:(I)I"),
            "(I)I".parse().unwrap(),
            Semantics::Volatile,
            constant("()I", 1),
        );
        assert!(matches!(bad, Err(CallSiteError::TypeMismatch { .. })));
        let m = DynamicCallSite::new(
            key("static:M.f:(I)I"),
            "(I)I".parse().unwrap(),
            Semantics::Mutable,
            constant("(I)I", 1),
        )
        .unwrap();
        assert_eq!(m.semantics(), Semantics::Mutable);
        assert_eq!(m.invocation_count(), 0);
        assert_eq!(m.bootstrap_count(), 0);
    }

    #[test]
    fn set_target_enforces_declared_type() {
        let s = DynamicCallSite::new(
            key("static:M.f:(I)I"),
            "(I)I".parse().unwrap(),
            Semantics::Volatile,
            constant("(I)I", 1),
        )
        .unwrap();
        assert!(s.set_target(constant("(I)I", 2)).is_ok());
        assert!(s.set_target(constant("(II)I", 3)).is_err());
        assert!(s.current().to_string().contains('2'));
        s.reset();
        assert!(s.current().to_string().contains('1'));
    }

    #[test]
    fn registry_matching() {
        let r = SiteRegistry::new();
        assert_eq!(r.metrics(None).site_count, 0);
        for k in [
            "virtual:Listener.a:(LListener;)V",
            "virtual:Listener.b:(LListener;)V",
            "static:Fib.f:(I)I",
        ] {
            let k = key(k);
            let ty = k.ty.clone();
            let h = if ty.ret.is_void() {
                handles::constant(ty.clone(), Value::Null).unwrap()
            } else {
                handles::constant(ty.clone(), Value::Int(0)).unwrap()
            };
            let s = Arc::new(DynamicCallSite::new(k, ty, Semantics::Volatile, h).unwrap());
            r.register(s.clone()).unwrap();
            assert!(matches!(r.register(s), Err(CallSiteError::Duplicate(_))));
        }
        assert_eq!(r.sites_matching("virtual:Listener.*").len(), 2);
        assert_eq!(r.sites_matching("static:Fib.f:(I)I").len(), 1);
        assert!(r.sites_matching("static:Nope.*").is_empty());
        assert_eq!(r.sites_matching("*").len(), 3);
        assert_eq!(r.metrics(None).site_count, 3);
        assert_eq!(
            r.sites_matching("static:Fib.f:(I)I")[0].key().kind,
            InvocationKind::Static
        );
    }

    fn site(k: &str, v: i64) -> Arc<DynamicCallSite> {
        let k = key(k);
        let ty = k.ty.clone();
        Arc::new(
            DynamicCallSite::new(
                k,
                ty.clone(),
                Semantics::Volatile,
                handles::constant(ty, Value::Int(v)).unwrap(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn late_sites_replay_modifications() {
        let r = SiteRegistry::new();
        let early = site("static:M.f:(I)I", 1);
        r.register(early.clone()).unwrap();
        assert_eq!(
            r.modify("static:M.*", Modification::Replace(constant("(I)I", 2)))
                .unwrap(),
            1
        );
        let wrap: Wrapper = Arc::new(|h| handles::insert_arguments(h, 0, vec![]));
        let m = Modification::Wrap {
            label: "noop".into(),
            wrapper: wrap,
        };
        assert_eq!(r.modify("static:M.f:(I)I", m).unwrap(), 1);
        let late = site("static:M.f:(I)I", 1);
        r.register(late.clone()).unwrap();
        assert!(late.current().to_string().contains('2'));
        assert_eq!(late.aspects(), vec!["noop"]);
        assert_eq!(early.aspects(), vec!["noop"]);
        assert_eq!(r.modify("static:M.f:(I)I", Modification::Reset).unwrap(), 2);
        let later = site("static:M.f:(I)I", 1);
        r.register(later.clone()).unwrap();
        assert!(later.current().to_string().contains('1'));
        assert!(later.aspects().is_empty());
        assert_eq!(r.modify("static:Nope.*", Modification::Reset).unwrap(), 0);
    }

    #[test]
    fn modify_is_all_or_nothing() {
        let r = SiteRegistry::new();
        let s = site("static:M.f:(I)I", 1);
        r.register(s.clone()).unwrap();
        let e = r.modify("static:M.f:(I)I", Modification::Replace(constant("()I", 5)));
        assert!(matches!(e, Err(HandleError::TypeMismatch(_))));
        assert!(s.current().to_string().contains('1'));
    }
}
