//! Python bindings: assemble, transform and run modules, and drive the
//! management operations of a live image from Python.

use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyBytes, PyDict, PyFloat, PyInt, PyList, PyString, PyTuple};
use pyo3::IntoPyObjectExt;

use fluxvm::agent::{self, Agent, AgentError};
use fluxvm::bench::{self, BenchConfig};
use fluxvm::bytecode::{self, ModuleFile};
use fluxvm::callsite::Semantics;
use fluxvm::corpus;
use fluxvm::transformer::{self, TransformStats};
use fluxvm::value::Value;
use fluxvm::vm::io::{Capture, Script};
use fluxvm::vm::{Image, ImageConfig};

create_exception!(
    pyfluxvm,
    VmError,
    PyException,
    "A program failed while running."
);
create_exception!(
    pyfluxvm,
    LoadError,
    PyException,
    "A module failed to assemble, decode, validate or link."
);
create_exception!(
    pyfluxvm,
    ManagementError,
    PyException,
    "A management operation was rejected; `args[0]` is the error code."
);

fn load_err(e: impl ToString) -> PyErr {
    LoadError::new_err(e.to_string())
}

fn mgmt_err(e: AgentError) -> PyErr {
    let code = serde_json::to_value(e.code).expect("codes serialize");
    ManagementError::new_err((code.as_str().unwrap_or_default().to_string(), e.message))
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).expect("json values serialize");
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    match v {
        Value::Int(i) => i.into_py_any(py),
        Value::Flt(f) => f.into_py_any(py),
        Value::Bool(b) => b.into_py_any(py),
        Value::Str(s) => (&**s).into_py_any(py),
        Value::Null => Ok(py.None()),
        Value::Arr(a) => {
            let items = a
                .to_vec()
                .iter()
                .map(|x| to_py(py, x))
                .collect::<PyResult<Vec<_>>>()?;
            items.into_py_any(py)
        }
        // Objects have no Python counterpart; hand back their printed form.
        Value::Obj(_) => v.to_string().into_py_any(py),
    }
}

fn from_py(o: &Bound<'_, PyAny>) -> PyResult<Value> {
    if o.is_none() {
        Ok(Value::Null)
    } else if o.is_instance_of::<PyBool>() {
        Ok(Value::Bool(o.extract()?))
    } else if o.is_instance_of::<PyInt>() {
        Ok(Value::Int(o.extract()?))
    } else if o.is_instance_of::<PyFloat>() {
        Ok(Value::Flt(o.extract()?))
    } else if let Ok(s) = o.cast::<PyString>() {
        Ok(Value::str(s.to_str()?))
    } else if o.is_instance_of::<PyList>() || o.is_instance_of::<PyTuple>() {
        let items = o
            .try_iter()?
            .map(|x| from_py(&x?))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Value::array(items))
    } else {
        Err(PyValueError::new_err(format!(
            "cannot pass {} to the VM",
            o.get_type().name()?
        )))
    }
}

/// Text source (`str`) is assembled, anything bytes-like is decoded.
fn module_of(src: &Bound<'_, PyAny>) -> PyResult<ModuleFile> {
    if let Ok(s) = src.cast::<PyString>() {
        return bytecode::assemble(s.to_str()?).map_err(load_err);
    }
    let data: Vec<u8> = src.extract()?;
    bytecode::decode(&data).map_err(load_err)
}

fn stats_dict<'py>(py: Python<'py>, s: &TransformStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("classes", s.classes_transformed)?;
    d.set_item("methods", s.methods_transformed)?;
    d.set_item("sites", s.sites_rewritten)?;
    d.set_item("elapsed_ms", s.elapsed_ms)?;
    Ok(d)
}

/// Assembles text into the binary module format.
#[pyfunction]
fn assemble<'py>(py: Python<'py>, source: &str) -> PyResult<Bound<'py, PyBytes>> {
    let m = bytecode::assemble(source).map_err(load_err)?;
    Ok(PyBytes::new(py, &bytecode::encode(&m)))
}

#[pyfunction]
fn disassemble(module: &Bound<'_, PyAny>) -> PyResult<String> {
    Ok(bytecode::disassemble(&module_of(module)?))
}

/// Returns the rewritten binary module and its statistics.
#[pyfunction]
fn transform<'py>(
    py: Python<'py>,
    module: &Bound<'py, PyAny>,
) -> PyResult<(Bound<'py, PyBytes>, Bound<'py, PyDict>)> {
    let (t, s) = transformer::transform_module(&module_of(module)?).map_err(load_err)?;
    Ok((PyBytes::new(py, &bytecode::encode(&t)), stats_dict(py, &s)?))
}

/// Nearest-rank min/25%/median/75%/max.
#[pyfunction]
fn quartiles(samples: Vec<f64>) -> PyResult<(f64, f64, f64, f64, f64)> {
    let q = bench::quartiles(&samples).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((q.min, q.q25, q.median, q.q75, q.max))
}

#[pyfunction]
#[pyo3(signature = (program="classicfibo", n=25, reps=10, warmups=2))]
fn run_bench(
    py: Python<'_>,
    program: &str,
    n: i64,
    reps: usize,
    warmups: usize,
) -> PyResult<Py<PyAny>> {
    let cfg = BenchConfig {
        program: program.to_string(),
        n: Some(n),
        reps,
        warmups,
        ..BenchConfig::default()
    };
    let report = py
        .detach(|| bench::run_bench(&cfg))
        .map_err(|e| VmError::new_err(e.to_string()))?;
    json_to_py(
        py,
        &serde_json::to_value(&report).expect("reports serialize"),
    )
}

/// Names of the bundled programs and advice modules.
#[pyfunction]
fn corpus_names() -> Vec<&'static str> {
    corpus::PROGRAMS
        .iter()
        .map(|p| p.name)
        .chain(corpus::ADVICE.iter().map(|(n, _)| *n))
        .collect()
}

#[pyfunction]
fn corpus_source(name: &str) -> PyResult<&'static str> {
    corpus::program(name)
        .map(|p| p.source)
        .or_else(|| {
            corpus::ADVICE
                .iter()
                .find(|(n, _)| n.eq_ignore_ascii_case(name))
                .map(|(_, s)| *s)
        })
        .ok_or_else(|| PyValueError::new_err(format!("no bundled program named {name:?}")))
}

/// One runtime image. Modules can be loaded until the image is first run
/// or shared with an agent server.
#[pyclass(module = "pyfluxvm")]
struct Vm {
    image: Arc<Image>,
    output: Capture,
    input: Arc<Script>,
    server: Option<agent::AgentServer>,
}

impl Vm {
    fn image_mut(&mut self) -> PyResult<&mut Image> {
        Arc::get_mut(&mut self.image).ok_or_else(|| {
            PyRuntimeError::new_err(
                "the image is shared with an agent server and can no longer change",
            )
        })
    }

    fn agent(&self) -> Agent {
        Agent::new(self.image.clone())
    }
}

#[pymethods]
impl Vm {
    /// `semantics` is "volatile" or "mutable"; `input` feeds `Sys.read_line`.
    #[new]
    #[pyo3(signature = (semantics="volatile", input=None))]
    fn new(semantics: &str, input: Option<Vec<String>>) -> PyResult<Self> {
        let semantics = match semantics {
            "volatile" => Semantics::Volatile,
            "mutable" => Semantics::Mutable,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown semantics {other:?}"
                )))
            }
        };
        let mut image = Image::new(ImageConfig {
            semantics,
            ..ImageConfig::default()
        });
        let output = Capture::new();
        image.set_output(Arc::new(output.clone()));
        let script = Arc::new(Script::new(input.unwrap_or_default()));
        image.set_input(script.clone());
        Ok(Vm {
            image: Arc::new(image),
            output,
            input: script,
            server: None,
        })
    }

    /// Loads text or binary module source. Returns transform statistics when
    /// `transform` is set, else None.
    #[pyo3(signature = (module, transform=true))]
    fn load<'py>(
        &mut self,
        py: Python<'py>,
        module: &Bound<'py, PyAny>,
        transform: bool,
    ) -> PyResult<Option<Bound<'py, PyDict>>> {
        let m = module_of(module)?;
        let stats = self.image_mut()?.load(m, transform).map_err(load_err)?;
        stats.map(|s| stats_dict(py, &s)).transpose()
    }

    /// Loads a bundled program or advice module by name, untransformed unless asked.
    #[pyo3(signature = (name, transform=false))]
    fn load_bundled(&mut self, name: &str, transform: bool) -> PyResult<()> {
        let m = corpus::program(name)
            .map(|p| p.module())
            .or_else(|| corpus::advice(name))
            .ok_or_else(|| PyValueError::new_err(format!("no bundled program named {name:?}")))?;
        self.image_mut()?.load(m, transform).map_err(load_err)?;
        Ok(())
    }

    #[pyo3(signature = (entry=None, args=Vec::new()))]
    fn run(
        &self,
        py: Python<'_>,
        entry: Option<String>,
        args: Vec<Bound<'_, PyAny>>,
    ) -> PyResult<Py<PyAny>> {
        let args = args.iter().map(from_py).collect::<PyResult<Vec<_>>>()?;
        let image = self.image.clone();
        let v = py
            .detach(move || image.run(entry.as_deref(), args))
            .map_err(|e| VmError::new_err(e.to_string()))?;
        to_py(py, &v)
    }

    /// Everything printed so far.
    fn output(&self) -> String {
        self.output.text()
    }

    fn clear_output(&self) {
        self.output.clear()
    }

    /// Queues lines for `Sys.read_line`.
    fn feed(&self, lines: Vec<String>) {
        self.input.extend(lines)
    }

    /// Linked sites and their counters, optionally filtered by a key pattern.
    #[pyo3(signature = (pattern=None))]
    fn call_sites(&self, py: Python<'_>, pattern: Option<&str>) -> PyResult<Py<PyAny>> {
        let m = self.agent().list_call_sites(pattern);
        json_to_py(py, &serde_json::to_value(&m).expect("metrics serialize"))
    }

    fn change_call_site_target(
        &self,
        method_type: &str,
        old_target: &str,
        new_target: &str,
    ) -> PyResult<usize> {
        self.agent()
            .change_call_site_target(method_type, old_target, new_target)
            .map_err(mgmt_err)
    }

    fn apply_before_aspect(&self, pattern: &str, owner: &str, method: &str) -> PyResult<usize> {
        self.agent()
            .apply_before_aspect(pattern, owner, method)
            .map_err(mgmt_err)
    }

    fn apply_after_aspect(&self, pattern: &str, owner: &str, method: &str) -> PyResult<usize> {
        self.agent()
            .apply_after_aspect(pattern, owner, method)
            .map_err(mgmt_err)
    }

    fn reset_call_site(&self, key: &str) -> PyResult<usize> {
        self.agent().reset_call_site(key).map_err(mgmt_err)
    }

    fn metrics(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &self.agent().metrics())
    }

    /// Handles one wire-protocol request line and returns the response line.
    fn request(&self, line: &str) -> String {
        self.agent().handle_text(line)
    }

    /// Serves the management protocol; returns the bound address.
    #[pyo3(signature = (addr="127.0.0.1:0"))]
    fn serve(&mut self, addr: &str) -> PyResult<String> {
        if let Some(s) = &self.server {
            return Ok(s.local_addr().to_string());
        }
        let server = agent::serve(Arc::new(self.agent()), addr)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let bound = server.local_addr().to_string();
        self.server = Some(server);
        Ok(bound)
    }

    fn stop_serving(&mut self) {
        if let Some(s) = self.server.take() {
            s.shutdown();
        }
    }
}

#[pymodule]
fn pyfluxvm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vm>()?;
    m.add("VmError", m.py().get_type::<VmError>())?;
    m.add("LoadError", m.py().get_type::<LoadError>())?;
    m.add("ManagementError", m.py().get_type::<ManagementError>())?;
    m.add_function(wrap_pyfunction!(assemble, m)?)?;
    m.add_function(wrap_pyfunction!(disassemble, m)?)?;
    m.add_function(wrap_pyfunction!(transform, m)?)?;
    m.add_function(wrap_pyfunction!(quartiles, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_names, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_source, m)?)?;
    Ok(())
}
