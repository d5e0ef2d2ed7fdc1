//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use fluxvm::agent::{self, Agent};
use fluxvm::bench::{self, BenchConfig, Variant};
use fluxvm::bytecode::{assemble, FunctionType, InvocationKind, ModuleFile};
use fluxvm::callsite::Semantics;
use fluxvm::corpus::{self, PROGRAMS};
use fluxvm::handles::{self, FunctionHandle};
use fluxvm::transformer::{self, TransformStats};
use fluxvm::value::Value;
use fluxvm::vm::io::{Capture, Channel, InputSource};
use fluxvm::vm::{Callable, ExecContext, Image, ImageConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

/// Input that can be refilled between runs of the same image.
#[derive(Default)]
struct Replay(Mutex<VecDeque<String>>);

impl Replay {
    fn fill(&self, lines: &[&str]) {
        *self.0.lock() = lines.iter().map(|s| s.to_string()).collect();
    }
}

impl InputSource for Replay {
    fn read_line(&self) -> Option<String> {
        self.0.lock().pop_front()
    }
}

fn fib_iter(n: i64) -> i64 {
    let (mut a, mut b) = (0i64, 1i64);
    for _ in 0..n {
        (a, b) = (b, a + b);
    }
    a
}

/// Calls made by the doubly recursive fib, main's call included.
fn fib_calls(n: i64) -> u64 {
    2 * fib_iter(n + 1) as u64 - 1
}

struct Setup {
    image: Arc<Image>,
    out: Capture,
    input: Arc<Replay>,
}

fn setup(program: &ModuleFile, transform: bool, semantics: Semantics) -> Setup {
    let mut image = Image::new(ImageConfig {
        semantics,
        ..ImageConfig::default()
    });
    let out = Capture::new();
    let input = Arc::new(Replay::default());
    image.set_output(Arc::new(out.clone()));
    image.set_input(input.clone());
    image.load(program.clone(), transform).unwrap();
    for (name, _) in corpus::ADVICE {
        image.load(corpus::advice(name).unwrap(), false).unwrap();
    }
    Setup {
        image: Arc::new(image),
        out,
        input,
    }
}

fn run_once(s: &Setup, p: &corpus::Program) -> Result<(String, Value), String> {
    s.out.clear();
    s.input.fill(p.input);
    let v = s
        .image
        .run(None, p.arg_values())
        .map_err(|e| format!("{}: {e}", p.name))?;
    Ok((s.out.text(), v))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    ensure!(
        PROGRAMS.len() >= 10,
        "corpus has only {} programs",
        PROGRAMS.len()
    );
    for p in PROGRAMS {
        let m = p.module();
        let plain = run_once(&setup(&m, false, Semantics::Volatile), p)?;
        let transformed = run_once(&setup(&m, true, Semantics::Volatile), p)?;
        ensure!(
            plain == transformed,
            "{}: transformed run differs: {plain:?} vs {transformed:?}",
            p.name
        );

        // Identity advice on every linked site must not change anything either.
        let s = setup(&m, true, Semantics::Volatile);
        run_once(&s, p)?;
        let agent = Agent::new(s.image.clone());
        for key in s.image.registry().keys() {
            agent
                .apply_before_aspect(&key, "Empty", "onCall")
                .map_err(|e| e.to_string())?;
            let returns = !s.image.registry().sites_matching(&key)[0]
                .declared_type()
                .ret
                .is_void();
            if returns {
                agent
                    .apply_after_aspect(&key, "Empty", "onReturn")
                    .map_err(|e| e.to_string())?;
            }
        }
        let aspected = run_once(&s, p)?;
        ensure!(
            plain == aspected,
            "{}: identity aspects changed the run",
            p.name
        );
    }
    let fib = corpus::program("classicfibo").unwrap();
    let (text, _) = run_once(&setup(&fib.module(), true, Semantics::Volatile), fib)?;
    ensure!(
        text == format!("{}\n", fib_iter(fib.args[0])),
        "fib output {text:?} disagrees with the iterative oracle"
    );
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{} programs x 3 configurations identical in {elapsed:.2?}",
        PROGRAMS.len()
    ))
}

fn replace_spaces() -> Outcome {
    let s = setup(
        &assemble("module Empty0\n").unwrap(),
        false,
        Semantics::Volatile,
    );
    let ty: FunctionType = "(LStr;SS)S".parse().unwrap();
    let h = handles::lookup_direct(InvocationKind::Virtual, "Str", "replace_all", &ty, &s.image)
        .map_err(|e| e.to_string())?;
    let bound = handles::insert_arguments(&h, 1, vec![Value::str("%20"), Value::str(" ")])
        .map_err(|e| e.to_string())?;
    let v = s
        .image
        .invoke_handle(&bound, vec![Value::str("A%20B%20C")])
        .map_err(|e| e.to_string())?;
    s.image.output().write_line(&v.to_string());
    ensure!(s.out.text() == "A B C\n", "printed {:?}", s.out.text());
    Ok(format!("{bound} printed \"A B C\""))
}

fn wait_for_lines(out: &Capture, n: usize) -> Result<Vec<String>, String> {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let lines = out.lines();
        if lines.len() >= n {
            return Ok(lines);
        }
        if Instant::now() > deadline {
            return Err(format!(
                "timed out waiting for output line {n}; have {lines:?}"
            ));
        }
        std::thread::sleep(Duration::from_millis(2));
    }
}

fn live_retarget() -> Outcome {
    let p = corpus::program("switcher").unwrap();
    let mut image = Image::new(ImageConfig::default());
    let out = Capture::new();
    let (tx, rx) = mpsc::channel::<String>();
    image.set_output(Arc::new(out.clone()));
    image.set_input(Arc::new(Channel::new(rx)));
    image.load(p.module(), true).unwrap();
    let image = Arc::new(image);
    let server = agent::serve(Arc::new(Agent::new(image.clone())), "127.0.0.1:0")
        .map_err(|e| e.to_string())?;
    let addr = server.local_addr();
    let runner = {
        let image = image.clone();
        std::thread::spawn(move || image.run(None, vec![]))
    };
    tx.send("click".into()).unwrap();
    tx.send("click".into()).unwrap();
    let before = wait_for_lines(&out, 2)?;
    ensure!(
        before == ["counter 1", "counter 2"],
        "unexpected output before the swap: {before:?}"
    );
    let args: Vec<String> = [
        "virtual",
        "Listener.counterIncrement:(LListener;)V",
        "Listener.pictureSwitch:(LListener;)V",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let req = agent::request_from_args("changeCallSiteTarget", &args)?;
    let reply = agent::send(addr, &req).map_err(|e| e.to_string())?;
    ensure!(
        reply == r#"{"ok":true,"result":{"sitesChanged":1}}"#,
        "agent replied {reply}"
    );
    tx.send("click".into()).unwrap();
    tx.send("click".into()).unwrap();
    let after = wait_for_lines(&out, 4)?;
    ensure!(
        after[2..] == ["picture 1", "picture 0"],
        "unexpected output after the swap: {after:?}"
    );
    drop(tx);
    let ret = runner.join().unwrap().map_err(|e| e.to_string())?;
    ensure!(ret == Value::Int(4), "event loop returned {ret}");
    server.shutdown();
    Ok(format!(
        "swap over the wire took effect at the next event; reply {reply}"
    ))
}

fn dumpers() -> Outcome {
    const KEY: &str = "static:Fib.classicfibo:(I)I";
    let fib = corpus::program("classicfibo").unwrap();
    let s = setup(&fib.module(), true, Semantics::Volatile);
    let run = |n: i64| -> Result<String, String> {
        s.out.clear();
        s.image
            .run(None, vec![Value::Int(n)])
            .map_err(|e| e.to_string())?;
        Ok(s.out.text())
    };
    let pristine = run(10)?;
    ensure!(pristine == "55\n", "fib(10) printed {pristine:?}");
    let agent = Agent::new(s.image.clone());
    agent
        .apply_before_aspect(KEY, "Dumpers", "onCall")
        .map_err(|e| e.to_string())?;
    agent
        .apply_after_aspect(KEY, "Dumpers", "onReturn")
        .map_err(|e| e.to_string())?;
    let text = run(10)?;
    let lines: Vec<&str> = text.lines().collect();
    ensure!(
        lines.first() == Some(&">>> [10]"),
        "first line {:?}",
        lines.first()
    );
    ensure!(
        lines[lines.len() - 2..] == ["<<< 55", "55"],
        "last lines {:?}",
        &lines[lines.len() - 2..]
    );
    let calls = fib_calls(10) as usize;
    let entries = lines.iter().filter(|l| l.starts_with(">>> ")).count();
    let exits = lines.iter().filter(|l| l.starts_with("<<< ")).count();
    ensure!(
        entries == calls && exits == calls,
        "{entries} entries and {exits} exits for {calls} calls"
    );

    // Newest outermost: `second` was installed last so it sees the arguments first.
    agent.reset_call_site(KEY).map_err(|e| e.to_string())?;
    agent
        .apply_before_aspect(KEY, "Tags", "first")
        .map_err(|e| e.to_string())?;
    agent
        .apply_before_aspect(KEY, "Tags", "second")
        .map_err(|e| e.to_string())?;
    let stacked = run(1)?;
    ensure!(
        stacked == "second [1]\nfirst [1]\n1\n",
        "stacked before advice printed {stacked:?}"
    );
    agent.reset_call_site(KEY).map_err(|e| e.to_string())?;
    agent
        .apply_after_aspect(KEY, "Dumpers", "onReturn")
        .map_err(|e| e.to_string())?;
    agent
        .apply_before_aspect(KEY, "Dumpers", "onCall")
        .map_err(|e| e.to_string())?;
    ensure!(
        run(10)? == text,
        "install order of one before and one after changed the output"
    );

    agent.reset_call_site(KEY).map_err(|e| e.to_string())?;
    let restored = run(10)?;
    ensure!(restored == pristine, "after reset printed {restored:?}");
    Ok(format!(
        "{calls} calls bracketed from \">>> [10]\" to \"<<< 55\"; stacking order and reset hold"
    ))
}

fn bootstrap_once() -> Outcome {
    let fib = corpus::program("classicfibo").unwrap().module();
    let trials = 1000;
    for t in 0..trials {
        let s = setup(&fib, true, Semantics::Volatile);
        let results = s
            .image
            .run_concurrent(Some("classicfibo"), vec![Value::Int(6)], 4, 1)
            .map_err(|e| e.to_string())?;
        for r in results {
            let r = r.map_err(|e| e.to_string())?;
            ensure!(r == [Value::Int(8)], "trial {t}: wrong result {r:?}");
        }
        let m = s.image.registry().metrics(None);
        ensure!(m.site_count == 2, "trial {t}: {} sites", m.site_count);
        for site in &m.sites {
            ensure!(
                site.bootstrap_count == 1,
                "trial {t}: site {} bootstrapped {} times",
                site.site_id,
                site.bootstrap_count
            );
        }
        ensure!(
            s.image.bootstrap_count() == 2,
            "trial {t}: {} bootstraps",
            s.image.bootstrap_count()
        );
    }

    let s = setup(&fib, true, Semantics::Volatile);
    s.image
        .run(None, vec![Value::Int(10)])
        .map_err(|e| e.to_string())?;
    let registry = s.image.registry();
    let invocations = |r: &fluxvm::callsite::SiteRegistry| -> u64 {
        r.metrics(None)
            .sites
            .iter()
            .map(|m| m.invocation_count)
            .sum()
    };
    let calls_before = invocations(registry);
    let (reg0, look0) = (registry.accesses(), s.image.lookup_count());
    s.image
        .run(None, vec![Value::Int(28)])
        .map_err(|e| e.to_string())?;
    let (reg1, look1) = (registry.accesses(), s.image.lookup_count());
    let calls = invocations(registry) - calls_before;
    ensure!(
        calls == fib_calls(28) && calls >= 1_000_000,
        "{calls} invocations counted"
    );
    ensure!(
        reg1 == reg0 && look1 == look0,
        "registry delta {} lookup delta {}",
        reg1 - reg0,
        look1 - look0
    );
    Ok(format!("{trials} trials x 4 threads: one bootstrap per site; {calls} invocations, registry delta 0, lookup delta 0"))
}

fn volatile_publication() -> Outcome {
    let src = "module P\nfn v0:()I {\n CONST 0\n RET\n}\nfn probe:()I {\n INVOKE_STATIC P.v0:()I\n RET\n}\n";
    let s = setup(&assemble(src).unwrap(), true, Semantics::Volatile);
    s.image
        .run(Some("probe"), vec![])
        .map_err(|e| e.to_string())?;
    let site = s
        .image
        .registry()
        .sites_matching("static:P.v0:()I")
        .pop()
        .ok_or("probe site not linked")?;
    let (probe, _) = s.image.entry(Some("probe")).map_err(|e| e.to_string())?;
    let ty: FunctionType = "()I".parse().unwrap();
    let swaps: i64 = 10_000;
    let targets: Vec<FunctionHandle> = (1..=swaps)
        .map(|i| handles::constant(ty.clone(), Value::Int(i)).unwrap())
        .collect();
    let published = AtomicU64::new(0);
    let done = AtomicBool::new(false);
    let violations = AtomicU64::new(0);
    let checks = AtomicU64::new(0);
    std::thread::scope(|scope| {
        for _ in 0..3 {
            scope.spawn(|| {
                let mut ctx = ExecContext::new(&s.image);
                while !done.load(Ordering::Acquire) {
                    let seen = published.load(Ordering::Acquire) as i64;
                    let v = ctx
                        .call(&Callable::Bytecode(probe), vec![])
                        .unwrap()
                        .as_int()
                        .unwrap();
                    if v < seen {
                        violations.fetch_add(1, Ordering::Relaxed);
                    }
                    checks.fetch_add(1, Ordering::Relaxed);
                }
            });
        }
        for (i, h) in targets.iter().enumerate() {
            site.set_target(h.clone()).unwrap();
            published.store(i as u64 + 1, Ordering::Release);
            // Give readers a chance to start invocations between swaps.
            if i % 64 == 0 {
                std::thread::yield_now();
            }
        }
        while checks.load(Ordering::Relaxed) < swaps as u64 {
            std::thread::yield_now();
        }
        done.store(true, Ordering::Release);
    });
    let (v, c) = (
        violations.load(Ordering::Relaxed),
        checks.load(Ordering::Relaxed),
    );
    ensure!(v == 0, "{v} stale reads in {c} checks");
    Ok(format!("{swaps} swaps, {c} reader checks, 0 violations"))
}

fn bench_protocol() -> Outcome {
    let table1 = [
        611.0, 612.0, 613.0, 614.0, 615.0, 615.0, 616.0, 616.0, 620.0, 636.0,
    ];
    let q = bench::quartiles(&table1).map_err(|e| e.to_string())?;
    ensure!(
        (q.min, q.q25, q.median, q.q75, q.max) == (611.0, 613.0, 615.0, 616.0, 636.0),
        "quartiles {q:?}"
    );
    let q = bench::quartiles(&[5.0, 1.0, 4.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    ensure!(
        (q.min, q.q25, q.median, q.q75, q.max) == (1.0, 2.0, 3.0, 4.0, 5.0),
        "quartiles {q:?}"
    );
    ensure!(bench::overhead(100.0, 150.0) == 50.0, "overhead formula");

    let start = Instant::now();
    let cfg = BenchConfig::default();
    ensure!(
        cfg.reps == 10 && cfg.n == Some(25),
        "default protocol changed"
    );
    let report = bench::run_bench(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    print!("{}", bench::render_table(&report));
    ensure!(report.rows.len() == 5, "{} rows", report.rows.len());
    for row in &report.rows {
        ensure!(
            row.samples_ms.len() == 10,
            "{}: {} samples",
            row.label,
            row.samples_ms.len()
        );
        let q = row.quartiles;
        ensure!(
            q.min <= q.q25 && q.q25 <= q.median && q.median <= q.q75 && q.q75 <= q.max,
            "{}: quartiles out of order",
            row.label
        );
    }
    let row = |v: Variant| report.rows.iter().find(|r| r.label == v.label()).unwrap();
    let transformed = row(Variant::Transformed).overhead_pct.unwrap();
    ensure!(
        transformed <= 50.0,
        "transformed overhead {transformed:+.1}%"
    );
    let both = row(Variant::Both).quartiles.median;
    for single in [Variant::Before, Variant::After] {
        let m = row(single).quartiles.median;
        ensure!(
            both >= 0.95 * m,
            "both ({both:.3} ms) below {} ({m:.3} ms) beyond the 5% band",
            single.label()
        );
    }
    ensure!(elapsed < Duration::from_secs(600), "bench took {elapsed:?}");
    Ok(format!(
        "Table 1 quartiles reproduced; transformed {transformed:+.1}%, suite in {elapsed:.2?}"
    ))
}

fn transform_stats() -> Outcome {
    let mut total = TransformStats::default();
    let mut classic = 0usize;
    let start = Instant::now();
    let modules: Vec<ModuleFile> = PROGRAMS
        .iter()
        .map(|p| p.module())
        .chain(
            corpus::ADVICE
                .iter()
                .map(|(n, _)| corpus::advice(n).unwrap()),
        )
        .collect();
    for m in &modules {
        classic += m
            .all_functions()
            .iter()
            .flat_map(|(_, f)| f.code.iter())
            .filter(|i| i.is_classic_invoke())
            .count();
        let (_, s) = transformer::transform_module(m).map_err(|e| e.to_string())?;
        total.merge(&s);
    }
    let wall = start.elapsed();
    ensure!(
        total.sites_rewritten == classic,
        "rewrote {} of {classic} invokes",
        total.sites_rewritten
    );
    ensure!(
        total.classes_transformed > 0 && total.methods_transformed > 0,
        "stats {total}"
    );
    ensure!(
        total.elapsed_ms <= 1000.0 && wall <= Duration::from_secs(1),
        "took {wall:?}"
    );
    Ok(format!("{} modules: {total}", modules.len()))
}

fn handle_laws() -> Outcome {
    let src = "module Laws\n\
        fn sub:(II)I {\n LOAD 0\n LOAD 1\n SUB\n RET\n}\n\
        fn join:(SS)S {\n LOAD 0\n CONST \"|\"\n ADD\n LOAD 1\n ADD\n RET\n}\n\
        fn tag:(IS)S {\n LOAD 0\n CONST \":\"\n ADD\n LOAD 1\n ADD\n RET\n}\n";
    let s = setup(&assemble(src).unwrap(), false, Semantics::Volatile);
    let lookup = |name: &str, ty: &str| {
        handles::lookup_direct(
            InvocationKind::Static,
            "Laws",
            name,
            &ty.parse().unwrap(),
            &s.image,
        )
        .unwrap()
    };
    let ints: Vec<Value> = (-3..=3).map(Value::Int).collect();
    let strs: Vec<Value> = ["", "a", "ab", "%20", "A B"]
        .iter()
        .map(|t| Value::str(t))
        .collect();
    let cases: Vec<(FunctionHandle, &Vec<Value>, &Vec<Value>)> = vec![
        (lookup("sub", "(II)I"), &ints, &ints),
        (lookup("join", "(SS)S"), &strs, &strs),
        (lookup("tag", "(IS)S"), &ints, &strs),
    ];
    let mut checked = 0usize;
    let same = |a: &FunctionHandle,
                b: &FunctionHandle,
                xs: &Vec<Value>,
                ys: &Vec<Value>,
                checked: &mut usize|
     -> Result<(), String> {
        ensure!(a.ty() == b.ty(), "types differ: {} vs {}", a.ty(), b.ty());
        for x in xs {
            for y in ys {
                let args = vec![x.clone(), y.clone()];
                let l = s
                    .image
                    .invoke_handle(a, args.clone())
                    .map_err(|e| e.to_string())?;
                let r = s.image.invoke_handle(b, args).map_err(|e| e.to_string())?;
                ensure!(l == r, "{a} and {b} differ on ({x}, {y}): {l} vs {r}");
                *checked += 1;
            }
        }
        Ok(())
    };
    for (h, xs, ys) in &cases {
        for p in 0..=h.arity() {
            let ins = handles::insert_arguments(h, p, vec![]).map_err(|e| e.to_string())?;
            ensure!(
                ins.ptr_eq(h),
                "insert_arguments({h}, {p}, []) is a new handle"
            );
            same(&ins, h, xs, ys, &mut checked)?;
            let fil = handles::filter_arguments(h, p.min(h.arity() - 1), vec![])
                .map_err(|e| e.to_string())?;
            ensure!(
                fil.ptr_eq(h),
                "filter_arguments({h}, {p}, []) is a new handle"
            );
            same(&fil, h, xs, ys, &mut checked)?;
        }
        for t in [h.ty().erased(), h.ty().clone()] {
            let there = handles::as_type(h, &t).map_err(|e| e.to_string())?;
            let back = handles::as_type(&there, h.ty()).map_err(|e| e.to_string())?;
            same(&back, h, xs, ys, &mut checked)?;
        }
        let erased = handles::as_type(h, &h.ty().erased()).map_err(|e| e.to_string())?;
        for n in 0..=erased.arity() {
            let round = handles::as_collector(
                &handles::as_spreader(&erased, n).map_err(|e| e.to_string())?,
                n,
            )
            .map_err(|e| e.to_string())?;
            same(&round, &erased, xs, ys, &mut checked)?;
        }
    }
    Ok(format!("4 laws hold over {checked} argument pairs"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 oracle equivalence over the corpus", oracle_equivalence),
        ("2 replace-spaces through insert_arguments", replace_spaces),
        ("3 live retarget of a running event loop", live_retarget),
        ("4 Dumpers before/after aspects", dumpers),
        (
            "5 bootstrap once, no registry on the call path",
            bootstrap_once,
        ),
        ("6 volatile target publication", volatile_publication),
        ("7 benchmark protocol", bench_protocol),
        ("8 transform statistics", transform_stats),
        ("9 handle algebra laws", handle_laws),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({:.2?}): {detail}", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name} ({:.2?}): {why}", start.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
