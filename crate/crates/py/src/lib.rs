//! Python bindings for the scoring and statistics core.

use std::collections::BTreeMap;

use grade_core::backends::Role;
use grade_core::metrics;
use grade_core::model::{self, AnswerRecord, Schema, SupportSet, ValueDistribution};
use grade_core::stats::{self, CorrelationMethod, PermutationConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Value distribution for one question, over one prompt or averaged.
#[pyclass(name = "ValueDistribution", module = "grade", frozen, from_py_object)]
#[derive(Clone)]
struct PyDistribution(ValueDistribution);

#[pymethods]
impl PyDistribution {
    #[getter]
    fn question_id(&self) -> &str {
        &self.0.question_id
    }

    #[getter]
    fn concept_id(&self) -> &str {
        &self.0.concept_id
    }

    /// "multi" or "single:<prompt_id>".
    #[getter]
    fn scope(&self) -> String {
        self.0.scope.to_string()
    }

    #[getter]
    fn probabilities(&self) -> BTreeMap<String, f64> {
        self.0.probabilities.clone()
    }

    #[getter]
    fn support_size(&self) -> usize {
        self.0.support_size
    }

    #[getter]
    fn n_counted(&self) -> usize {
        self.0.n_counted
    }

    #[getter]
    fn n_discarded(&self) -> usize {
        self.0.n_discarded
    }

    #[getter]
    fn n_prompts(&self) -> usize {
        self.0.n_prompts
    }

    #[getter]
    fn valid(&self) -> bool {
        self.0.valid
    }

    /// Most frequent value and its frequency, or None.
    fn mode(&self) -> Option<(String, f64)> {
        self.0.mode().map(|(v, p)| (v.to_string(), p))
    }

    /// Normalized entropy over the full support.
    fn entropy(&self) -> PyResult<f64> {
        metrics::normalized_entropy(&self.0)
            .map(|s| s.entropy)
            .map_err(value_err)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("distribution serializes")
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(PyDistribution).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ValueDistribution({} {}, {:?})",
            self.0.question_id, self.0.scope, self.0.probabilities
        )
    }
}

#[pyclass(name = "PermutationTestResult", module = "grade", frozen, get_all)]
struct PyPermutationResult {
    d_obs: f64,
    p_value: f64,
    n_permutations: usize,
    n_extreme: usize,
    alpha: f64,
    significant: bool,
}

#[pymethods]
impl PyPermutationResult {
    fn __repr__(&self) -> String {
        format!(
            "PermutationTestResult(d_obs={}, p_value={}, significant={})",
            self.d_obs, self.p_value, self.significant
        )
    }
}

/// A parsed concept schema.
#[pyclass(name = "Schema", module = "grade", frozen)]
struct PySchema(Schema);

#[pymethods]
impl PySchema {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(PySchema).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Schema::load(&path).map(PySchema).map_err(value_err)
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("schema serializes")
    }

    #[getter]
    fn concept_ids(&self) -> Vec<String> {
        self.0.concepts.iter().map(|c| c.id.clone()).collect()
    }

    #[getter]
    fn prompt_ids(&self) -> Vec<String> {
        self.0.prompts().map(|p| p.id.clone()).collect()
    }

    /// Support values of a question.
    fn support(&self, question_id: &str) -> PyResult<Vec<String>> {
        self.0
            .question(question_id)
            .map(|(_, q)| q.support.clone())
            .ok_or_else(|| value_err(format!("unknown question {question_id}")))
    }

    /// Rule violations as strings; empty when the schema is valid.
    fn validate(&self) -> Vec<String> {
        model::validate_schema(&self.0)
            .iter()
            .map(ToString::to_string)
            .collect()
    }

    /// Single- and multi-prompt distributions from a JSONL answers file.
    fn estimate(&self, answers_path: std::path::PathBuf) -> PyResult<Vec<PyDistribution>> {
        let answers: Vec<AnswerRecord> = model::read_jsonl(&answers_path).map_err(value_err)?;
        let dists = grade_core::extraction::estimate_all(&self.0, &answers).map_err(value_err)?;
        Ok(dists.into_iter().map(PyDistribution).collect())
    }
}

/// Normalized entropy of a probability vector over a support of the given size.
#[pyfunction]
fn entropy(probabilities: Vec<f64>, support_size: usize) -> PyResult<f64> {
    if support_size == 0 || probabilities.len() > support_size {
        return Err(value_err("support_size must be at least the number of probabilities"));
    }
    Ok(metrics::normalized_entropy_of(&probabilities, support_size))
}

/// Distribution of one prompt's mapped answers over `support`.
#[pyfunction]
#[pyo3(signature = (answers, support, question_id = "q", concept_id = "c", prompt_id = "p"))]
fn estimate_single_prompt(
    answers: Vec<String>,
    support: Vec<String>,
    question_id: &str,
    concept_id: &str,
    prompt_id: &str,
) -> PyDistribution {
    let records: Vec<AnswerRecord> = answers
        .into_iter()
        .enumerate()
        .map(|(i, v)| AnswerRecord {
            image_id: i.to_string(),
            question_id: question_id.into(),
            prompt_id: prompt_id.into(),
            model_id: String::new(),
            raw_answer: v.clone(),
            mapped_value: v,
        })
        .collect();
    let refs: Vec<&AnswerRecord> = records.iter().collect();
    let support = SupportSet {
        question_id: question_id.into(),
        values: support,
    };
    PyDistribution(grade_core::extraction::estimate_single_prompt(
        concept_id, prompt_id, &support, &refs,
    ))
}

/// Equal-weight average of single-prompt distributions.
#[pyfunction]
fn estimate_multi_prompt(dists: Vec<PyDistribution>) -> PyResult<PyDistribution> {
    let inner: Vec<ValueDistribution> = dists.into_iter().map(|d| d.0).collect();
    grade_core::extraction::estimate_multi_prompt(&inner)
        .map(PyDistribution)
        .map_err(value_err)
}

/// Total variation distance between two {value: probability} maps.
#[pyfunction]
fn tvd(p: BTreeMap<String, f64>, q: BTreeMap<String, f64>) -> f64 {
    metrics::tvd_maps(&p, &q)
}

#[pyfunction]
fn pcc(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::pcc(&x, &y).map_err(value_err)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::spearman(&x, &y).map_err(value_err)
}

/// Two-tailed p-value of a correlation coefficient from `n` pairs.
#[pyfunction]
#[pyo3(signature = (r, n, method = "pearson"))]
fn correlation_pvalue(r: f64, n: usize, method: &str) -> PyResult<f64> {
    let method = match method {
        "pearson" => CorrelationMethod::Pearson,
        "spearman" => CorrelationMethod::Spearman,
        other => return Err(value_err(format!("unknown method {other:?}"))),
    };
    stats::correlation_pvalue(r, n, method).map_err(value_err)
}

/// Two-sided permutation test on the difference of means.
#[pyfunction]
#[pyo3(signature = (a, b, n_permutations = stats::DEFAULT_PERMUTATIONS, alpha = stats::DEFAULT_ALPHA, seed = 0, add_one = false))]
fn permutation_test(
    py: Python<'_>,
    a: Vec<f64>,
    b: Vec<f64>,
    n_permutations: usize,
    alpha: f64,
    seed: u64,
    add_one: bool,
) -> PyResult<PyPermutationResult> {
    let cfg = PermutationConfig {
        n_permutations,
        alpha,
        seed,
        stream: 0,
        add_one,
    };
    let r = py.detach(|| stats::permutation_test(&a, &b, &cfg)).map_err(value_err)?;
    Ok(PyPermutationResult {
        d_obs: r.d_obs,
        p_value: r.p_value,
        n_permutations: r.n_permutations,
        n_extreme: r.n_extreme,
        alpha: r.alpha,
        significant: r.significant,
    })
}

/// Fraction of mapped answers equal to the sentinel.
#[pyfunction]
fn nota_rate(mapped_values: Vec<String>) -> PyResult<f64> {
    if mapped_values.is_empty() {
        return Err(value_err("no answers"));
    }
    let n = mapped_values.iter().filter(|v| *v == model::NONE_OF_THE_ABOVE).count();
    Ok(n as f64 / mapped_values.len() as f64)
}

/// Flags distributions whose most frequent value reaches `tau`.
#[pyfunction]
#[pyo3(signature = (dists, tau = metrics::DEFAULT_TAU))]
fn detect_default_behaviors<'py>(
    py: Python<'py>,
    dists: Vec<PyDistribution>,
    tau: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let inner: Vec<ValueDistribution> = dists.into_iter().map(|d| d.0).collect();
    let s = metrics::detect_default_behaviors(&inner, tau);
    let out = PyDict::new(py);
    out.set_item("pct_at_least_one", s.pct_at_least_one)?;
    out.set_item("pct_total", s.pct_total)?;
    out.set_item("n_concepts", s.n_concepts)?;
    out.set_item("n_distributions", s.n_distributions)?;
    let flagged: Vec<(String, String, String, f64)> = s
        .behaviors
        .into_iter()
        .map(|b| (b.question_id, b.scope.to_string(), b.value, b.frequency))
        .collect();
    out.set_item("behaviors", flagged)?;
    Ok(out)
}

#[pymodule]
fn grade(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyPermutationResult>()?;
    m.add_class::<PySchema>()?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_single_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_multi_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(tvd, m)?)?;
    m.add_function(wrap_pyfunction!(pcc, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_pvalue, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(nota_rate, m)?)?;
    m.add_function(wrap_pyfunction!(detect_default_behaviors, m)?)?;
    m.add("NONE_OF_THE_ABOVE", model::NONE_OF_THE_ABOVE)?;
    m.add("ROLES", [Role::Llm, Role::Vqa, Role::T2i].map(|r| r.to_string()))?;
    Ok(())
}
