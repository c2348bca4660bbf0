//! Python bindings: corpus generation, training, parsing, rendering and
//! evaluation.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use gramlearn::agent::ActionRecord;
use gramlearn::atoms::ParseTree;
use gramlearn::config::{Preset, RunConfig};
use gramlearn::embedding::Embedder;
use gramlearn::error::Error;
use gramlearn::eval::{evaluate, recursive_types};
use gramlearn::trainer::Trainer as CoreTrainer;
use gramlearn::{checkpoint, data, render};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::InvalidState(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_bytes<'py>(py: Python<'py>, items: Vec<Vec<u8>>) -> Vec<Bound<'py, PyBytes>> {
    items.iter().map(|s| PyBytes::new(py, s)).collect()
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Simple-JSON sentences; returns `(sentences, eval_indices)`.
#[pyfunction]
#[pyo3(signature = (count, seed=0))]
fn gen_simple_json(py: Python<'_>, count: usize, seed: u64) -> PyResult<(Vec<Bound<'_, PyBytes>>, Vec<usize>)> {
    let c = data::gen_simple_json(count, seed).map_err(py_err)?;
    Ok((to_bytes(py, c.sentences), c.eval))
}

/// Simple-JSON wrapped in random noise; returns `(sentences, eval_indices)`.
#[pyfunction]
#[pyo3(signature = (count, seed=0))]
fn gen_stream(py: Python<'_>, count: usize, seed: u64) -> PyResult<(Vec<Bound<'_, PyBytes>>, Vec<usize>)> {
    let c = data::gen_stream(count, seed).map_err(py_err)?;
    Ok((to_bytes(py, c.sentences), c.eval))
}

/// Top-level `<<...>>` dictionaries of raw PDF bytes; returns
/// `(dictionaries, dropped)`.
#[pyfunction]
fn extract_pdf_dictionaries<'py>(py: Python<'py>, raw: &[u8]) -> (Vec<Bound<'py, PyBytes>>, usize) {
    let x = data::extract_pdf_dictionaries(raw);
    (to_bytes(py, x.dictionaries), x.dropped)
}

/// Default configuration of a preset in `key = value` form.
#[pyfunction]
#[pyo3(signature = (preset="simple-json"))]
fn default_config(preset: &str) -> PyResult<String> {
    let p: Preset = preset.parse().map_err(py_err)?;
    Ok(RunConfig::preset(p).to_text())
}

/// Raw compositional embeddings of byte strings.
#[pyclass(module = "pygramlearn", frozen)]
struct Embeddings {
    inner: Embedder,
}

#[pymethods]
impl Embeddings {
    #[new]
    #[pyo3(signature = (seed=0, dim=64, theta=1.0))]
    fn new(seed: u64, dim: usize, theta: f64) -> PyResult<Self> {
        Ok(Embeddings {
            inner: Embedder::new(seed, dim, theta).map_err(py_err)?,
        })
    }

    /// Raw embedding of the byte string `text`.
    fn raw(&self, text: &[u8]) -> Vec<f64> {
        let tokens: Vec<_> = text.iter().map(|&b| gramlearn::atoms::TokenId::from_byte(b)).collect();
        self.inner.raw(&tokens)
    }
}

/// Result of one greedy parse.
#[pyclass(module = "pygramlearn", frozen)]
struct Parse {
    sentence: Vec<u8>,
    tree: ParseTree,
    actions: Vec<ActionRecord>,
    root_types: Vec<String>,
    recursive_types: Vec<String>,
    svg: String,
}

#[pymethods]
impl Parse {
    #[getter]
    fn sentence<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.sentence)
    }

    #[getter]
    fn root_types(&self) -> Vec<String> {
        self.root_types.clone()
    }

    #[getter]
    fn recursive_types(&self) -> Vec<String> {
        self.recursive_types.clone()
    }

    /// Actions in application order as dictionaries.
    #[getter]
    fn actions<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.actions
            .iter()
            .map(|a| {
                let d = PyDict::new(py);
                d.set_item("kind", a.kind.name())?;
                d.set_item("position", a.position)?;
                d.set_item("span", (a.span.start, a.span.end))?;
                d.set_item("result", &a.result)?;
                d.set_item("reward", a.reward)?;
                Ok(d)
            })
            .collect()
    }

    fn ascii(&self) -> String {
        render::ascii(&self.sentence, &self.tree)
    }

    fn svg(&self) -> String {
        self.svg.clone()
    }

    /// The JSON action trace.
    fn json(&self) -> String {
        render::Trace::new(&self.sentence, &self.actions).to_json()
    }
}

/// A training run over a fixed list of sentences.
#[pyclass(module = "pygramlearn")]
struct Trainer {
    inner: CoreTrainer,
    train: Vec<Vec<u8>>,
}

#[pymethods]
impl Trainer {
    /// `overrides` holds `key = value` lines applied on top of `preset`.
    #[new]
    #[pyo3(signature = (sentences, preset="simple-json", overrides=""))]
    fn new(sentences: Vec<Vec<u8>>, preset: &str, overrides: &str) -> PyResult<Self> {
        let p: Preset = preset.parse().map_err(py_err)?;
        let config = RunConfig::preset(p).parse_overrides(overrides).map_err(py_err)?;
        Ok(Trainer {
            inner: CoreTrainer::new(config, &sentences).map_err(py_err)?,
            train: sentences,
        })
    }

    /// Restore a checkpoint; `sentences` are needed only to keep training.
    #[staticmethod]
    #[pyo3(signature = (path, sentences=Vec::new()))]
    fn load(path: PathBuf, sentences: Vec<Vec<u8>>) -> PyResult<Self> {
        Ok(Trainer {
            inner: checkpoint::load(&path).map_err(py_err)?,
            train: sentences,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn config(&self) -> String {
        self.inner.config.to_text()
    }

    /// Train one epoch and return its metrics.
    fn run_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = self.inner.run_epoch(&self.train).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("epoch", m.epoch)?;
        d.set_item("critic_loss", m.critic_loss)?;
        d.set_item("policy_loss", m.policy_loss)?;
        d.set_item("mean_reward", m.mean_reward)?;
        d.set_item("atom_types", m.atom_types)?;
        d.set_item("memories", m.memories)?;
        d.set_item("train_steps", m.train_steps)?;
        Ok(d)
    }

    /// Greedy parse.
    fn parse(&self, sentence: &[u8]) -> PyResult<Parse> {
        let t = &self.inner;
        let out = t.parse(sentence).map_err(py_err)?;
        let root_types = out.tree.roots().iter().map(|&r| t.types.render(out.tree.node(r).ty)).collect();
        let rec = recursive_types(&out.tree, &t.types).into_iter().map(|ty| t.types.render(ty)).collect();
        Ok(Parse {
            svg: render::svg(sentence, &out.tree, &t.types),
            sentence: sentence.to_vec(),
            tree: out.tree,
            actions: out.actions,
            root_types,
            recursive_types: rec,
        })
    }

    /// Evaluation report over `sentences` as a dictionary.
    #[pyo3(signature = (sentences, top=10))]
    fn evaluate<'py>(&self, py: Python<'py>, sentences: Vec<Vec<u8>>, top: usize) -> PyResult<Bound<'py, PyAny>> {
        let report = evaluate(&self.inner, &sentences, top).map_err(py_err)?;
        let text = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        json_to_py(py, &text)
    }
}

#[pymodule]
fn pygramlearn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_simple_json, m)?)?;
    m.add_function(wrap_pyfunction!(gen_stream, m)?)?;
    m.add_function(wrap_pyfunction!(extract_pdf_dictionaries, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_class::<Embeddings>()?;
    m.add_class::<Parse>()?;
    m.add_class::<Trainer>()?;
    Ok(())
}
