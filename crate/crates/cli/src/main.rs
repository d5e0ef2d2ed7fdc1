//! `fluxvm`: assemble, inspect, transform and run modules, benchmark call-site
//! configurations, and talk to a running program's management agent.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use fluxvm::agent::{self, Agent};
use fluxvm::bench::{self, BenchConfig};
use fluxvm::bytecode::{self, ModuleFile};
use fluxvm::callsite::Semantics;
use fluxvm::corpus;
use fluxvm::transformer;
use fluxvm::value::Value;
use fluxvm::vm::{Image, ImageConfig};

const FAULT: u8 = 1;
const LOAD: u8 = 2;
const USAGE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fluxvm",
    version,
    about = "Bytecode VM with live call-site rewiring"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble a text module into its binary form.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print a binary module as text.
    Dis { input: PathBuf },
    /// Rewrite every invoke into a dynamic call site.
    Transform {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Print classes, methods and sites rewritten and the time taken.
        #[arg(long)]
        stats: bool,
    },
    /// Load and run a module (`.fxb`, or `.fxa` assembled on the fly).
    Run {
        program: PathBuf,
        #[arg(long)]
        transform: bool,
        /// Serve the management agent on this address while the program runs.
        #[arg(long, value_name = "HOST:PORT")]
        agent: Option<String>,
        /// `fn`, `Owner.fn`; defaults to the module's entry directive, then `main`.
        #[arg(long)]
        entry: Option<String>,
        /// Entry arguments: integers, floats, true/false, null, or strings.
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        args: Vec<String>,
        /// Extra modules loaded untransformed, by path or by bundled advice name.
        #[arg(long, value_name = "MODULE")]
        load: Vec<String>,
        #[arg(long, value_enum, default_value_t = Publish::Volatile)]
        semantics: Publish,
        /// Print the entry function's return value after the program's output.
        #[arg(long)]
        print_result: bool,
    },
    /// Time a bundled program under each call-site configuration.
    Bench {
        #[arg(long, default_value = "classicfibo")]
        program: String,
        #[arg(long, default_value_t = 25)]
        n: i64,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        warmups: usize,
        #[arg(long, value_enum, default_value_t = Out::Table)]
        out: Out,
    },
    /// Send one request to an agent and print the raw response.
    Ctl {
        #[arg(long, value_name = "HOST:PORT")]
        connect: String,
        op: String,
        params: Vec<String>,
    },
    /// List the bundled programs, or print one's source.
    Corpus { name: Option<String> },
}

#[derive(Clone, Copy, ValueEnum)]
enum Publish {
    Volatile,
    Mutable,
}

#[derive(Clone, Copy, ValueEnum)]
enum Out {
    Table,
    Json,
}

struct Failure(u8, String);

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure(USAGE, msg.into())
    }

    fn load(msg: impl ToString) -> Self {
        Failure(LOAD, msg.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("fluxvm: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Cmd) -> Result<u8, Failure> {
    match cmd {
        Cmd::Asm { input, output } => {
            let src = read_text(&input)?;
            let m = bytecode::assemble(&src)
                .map_err(|e| Failure::usage(format!("{}: {e}", input.display())))?;
            write(&output, &bytecode::encode(&m))?;
            Ok(0)
        }
        Cmd::Dis { input } => {
            print!("{}", bytecode::disassemble(&read_module(&input)?));
            Ok(0)
        }
        Cmd::Transform {
            input,
            output,
            stats,
        } => {
            let m = read_module(&input)?;
            let (t, s) = transformer::transform_module(&m).map_err(Failure::load)?;
            write(&output, &bytecode::encode(&t))?;
            if stats {
                println!("{s}");
            }
            Ok(0)
        }
        Cmd::Run {
            program,
            transform,
            agent,
            entry,
            args,
            load,
            semantics,
            print_result,
        } => {
            let semantics = match semantics {
                Publish::Volatile => Semantics::Volatile,
                Publish::Mutable => Semantics::Mutable,
            };
            let mut image = Image::new(ImageConfig {
                semantics,
                ..ImageConfig::default()
            });
            image
                .load(read_module(&program)?, transform)
                .map_err(Failure::load)?;
            for extra in &load {
                let m = match corpus::advice(extra) {
                    Some(m) if !Path::new(extra).exists() => m,
                    _ => read_module(Path::new(extra))?,
                };
                image.load(m, false).map_err(Failure::load)?;
            }
            let image = Arc::new(image);
            let _server = match &agent {
                Some(addr) => {
                    let server = agent::serve(Arc::new(Agent::new(image.clone())), addr.as_str())
                        .map_err(|e| {
                        Failure(FAULT, format!("cannot serve agent on {addr}: {e}"))
                    })?;
                    eprintln!("agent listening on {}", server.local_addr());
                    Some(server)
                }
                None => None,
            };
            let args = args.iter().map(|a| parse_arg(a)).collect();
            match image.run(entry.as_deref(), args) {
                Ok(v) => {
                    if print_result {
                        println!("{v}");
                    }
                    Ok(0)
                }
                Err(e) => Err(Failure(e.exit_code() as u8, e.to_string())),
            }
        }
        Cmd::Bench {
            program,
            n,
            reps,
            warmups,
            out,
        } => {
            if reps < 3 {
                return Err(Failure::usage("--reps must be at least 3"));
            }
            if warmups < 1 {
                return Err(Failure::usage("--warmups must be at least 1"));
            }
            let cfg = BenchConfig {
                program,
                n: Some(n),
                reps,
                warmups,
                ..BenchConfig::default()
            };
            let report = bench::run_bench(&cfg).map_err(|e| match e {
                bench::BenchError::NoProgram(_) => Failure::usage(e.to_string()),
                other => Failure(FAULT, other.to_string()),
            })?;
            match out {
                Out::Table => print!("{}", bench::render_table(&report)),
                Out::Json => println!("{}", bench::render_json(&report)),
            }
            Ok(0)
        }
        Cmd::Ctl {
            connect,
            op,
            params,
        } => {
            let req = agent::request_from_args(&op, &params).map_err(Failure::usage)?;
            let reply = agent::send(connect.as_str(), &req)
                .map_err(|e| Failure(FAULT, format!("cannot reach agent at {connect}: {e}")))?;
            println!("{reply}");
            Ok(if reply.starts_with(r#"{"ok":true"#) {
                0
            } else {
                FAULT
            })
        }
        Cmd::Corpus { name: None } => {
            for p in corpus::PROGRAMS {
                println!("{}", p.name);
            }
            for (n, _) in corpus::ADVICE {
                println!("{n} (advice)");
            }
            Ok(0)
        }
        Cmd::Corpus { name: Some(name) } => {
            let src = corpus::program(&name)
                .map(|p| p.source)
                .or_else(|| {
                    corpus::ADVICE
                        .iter()
                        .find(|(n, _)| n.eq_ignore_ascii_case(&name))
                        .map(|(_, s)| *s)
                })
                .ok_or_else(|| Failure::usage(format!("no bundled program named {name:?}")))?;
            print!("{src}");
            Ok(0)
        }
    }
}

fn read_text(p: &Path) -> Result<String, Failure> {
    fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
}

fn write(p: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(p, bytes).map_err(|e| Failure(FAULT, format!("{}: {e}", p.display())))
}

/// Binary modules, or text when the file ends in `.fxa`.
fn read_module(p: &Path) -> Result<ModuleFile, Failure> {
    if p.extension().is_some_and(|e| e == "fxa") {
        let src = read_text(p)?;
        return bytecode::assemble(&src)
            .map_err(|e| Failure::usage(format!("{}: {e}", p.display())));
    }
    let bytes = fs::read(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
    bytecode::decode(&bytes).map_err(|e| Failure::load(format!("{}: {e}", p.display())))
}

fn parse_arg(a: &str) -> Value {
    if let Ok(n) = a.parse::<i64>() {
        return Value::Int(n);
    }
    if let Ok(f) = a.parse::<f64>() {
        return Value::Flt(f);
    }
    match a {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        "null" => Value::Null,
        _ => {
            let unquoted = a
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .unwrap_or(a);
            Value::str(unquoted)
        }
    }
}
