//! JSON descriptions of scales and problems, CSV grid functions, and the
//! JSON shapes of reports written by the command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::expr::Lagrangian;
use crate::nabla::GridFunction;
use crate::solver::Solution;
use crate::timescale::{Family, TimeScale};
use crate::variational::{BoundaryConditions, ElReport, VariationalProblem};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeSpec {
    family: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    a: f64,
    b: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointsSpec {
    points: Vec<f64>,
}

fn input_err(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Input(format!("{what}: {e}"))
}

fn take_param(params: &mut BTreeMap<String, f64>, family: &str, key: &str) -> Result<f64> {
    params
        .remove(key)
        .ok_or_else(|| Error::Input(format!("family `{family}` needs params.{key}")))
}

/// Builds a scale from `{"family", "params", "a", "b"}` or `{"points"}`.
pub fn scale_from_json(v: &Value) -> Result<TimeScale> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Input("scale must be a JSON object".into()))?;
    if obj.contains_key("points") {
        let spec: PointsSpec = serde_json::from_value(v.clone()).map_err(|e| input_err("scale", e))?;
        return TimeScale::from_points(spec.points);
    }
    let spec: LatticeSpec = serde_json::from_value(v.clone()).map_err(|e| input_err("scale", e))?;
    let mut params = spec.params;
    let name = spec.family.as_str();
    let family = match name {
        "integer_lattice" => Family::IntegerLattice,
        "h_lattice" => Family::HLattice { h: take_param(&mut params, name, "h")? },
        "q_lattice" => Family::QLattice { q: take_param(&mut params, name, "q")? },
        "sampled_interval" => Family::SampledInterval { h: take_param(&mut params, name, "h")? },
        "custom" => return Err(Error::Input("a custom scale is given by {\"points\": [...]}".into())),
        other => return Err(Error::Input(format!("unknown scale family `{other}`"))),
    };
    if let Some(extra) = params.keys().next() {
        return Err(Error::Input(format!("family `{name}` takes no parameter `{extra}`")));
    }
    TimeScale::make_lattice(family, spec.a, spec.b)
}

/// JSON description of `ts` that [`scale_from_json`] reads back.
pub fn scale_to_json(ts: &TimeScale) -> Value {
    let (a, b) = (ts.min(), ts.max());
    let lattice = |family: &str, params: Value| {
        serde_json::json!({ "family": family, "params": params, "a": a, "b": b })
    };
    match ts.family() {
        Family::IntegerLattice => lattice("integer_lattice", serde_json::json!({})),
        Family::HLattice { h } => lattice("h_lattice", serde_json::json!({ "h": h })),
        Family::QLattice { q } => lattice("q_lattice", serde_json::json!({ "q": q })),
        Family::SampledInterval { h } => lattice("sampled_interval", serde_json::json!({ "h": h })),
        Family::Custom => serde_json::json!({ "points": ts.points() }),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| input_err(&path.display().to_string(), e))
}

/// Reads a scale from inline JSON (anything starting with `{`) or a file.
pub fn load_scale(arg: &str) -> Result<TimeScale> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        read_text(Path::new(arg))?
    };
    let v: Value = serde_json::from_str(&text).map_err(|e| input_err("scale JSON", e))?;
    scale_from_json(&v)
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub scale: Value,
    pub order: usize,
    pub lagrangian: String,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl ProblemSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| input_err("problem JSON", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&read_text(path)?)
    }

    /// With `allow_degenerate`, scales of exactly `2r` points are accepted
    /// for evaluation.
    pub fn build(&self, allow_degenerate: bool) -> Result<VariationalProblem> {
        if self.order == 0 {
            return Err(Error::BadParam("order must be at least 1".into()));
        }
        let ts = Arc::new(scale_from_json(&self.scale)?);
        let lagrangian = Lagrangian::parse(&self.lagrangian, self.order)?;
        let bc = BoundaryConditions::new(self.alphas.clone(), self.betas.clone());
        if allow_degenerate && ts.len() == 2 * self.order {
            VariationalProblem::new_degenerate_evaluate(ts, lagrangian, bc)
        } else {
            VariationalProblem::new(ts, lagrangian, bc)
        }
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Reads a grid CSV whose rows are consecutive points of `ts`.
pub fn read_grid_csv(path: &Path, ts: &Arc<TimeScale>) -> Result<GridFunction> {
    let text = read_text(path)?;
    parse_grid_csv(&text, ts)
}

/// Reads `t,value`, or the `t,y,...` layout written by `solve`, in which
/// case the derivative columns are ignored.
pub fn parse_grid_csv(text: &str, ts: &Arc<TimeScale>) -> Result<GridFunction> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| input_err("CSV header", e))?.clone();
    let plain = headers.len() == 2 && &headers[1] == "value";
    let solution = headers.len() >= 2 && &headers[1] == "y";
    if &headers[0] != "t" || !(plain || solution) {
        return Err(Error::Input(format!(
            "CSV header must be `t,value` or `t,y,...`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut start = None;
    let mut values = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| input_err("CSV", e))?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| Error::Input(format!("CSV row {}: `{}`: {e}", row + 2, &rec[k])))
        };
        let (t, v) = (num(0)?, num(1)?);
        let idx = ts.index_of(t).map_err(|_| Error::Input(format!("CSV row {}: t = {t} is not a scale point", row + 2)))?;
        let first = *start.get_or_insert(idx);
        if idx != first + values.len() {
            return Err(Error::Input(format!(
                "CSV row {}: t = {t} breaks the point order of the scale",
                row + 2
            )));
        }
        values.push(v);
    }
    let start = start.ok_or_else(|| Error::Input("CSV has no rows".into()))?;
    GridFunction::new(ts.clone(), start, values)
}

pub fn write_grid_csv(out: &mut impl Write, f: &GridFunction) -> std::io::Result<()> {
    writeln!(out, "t,value")?;
    for (t, v) in f.iter() {
        writeln!(out, "{},{}", fmt_num(t), fmt_num(v))?;
    }
    Ok(())
}

pub fn grid_csv_string(f: &GridFunction) -> String {
    let mut buf = Vec::new();
    write_grid_csv(&mut buf, f).expect("writing to memory");
    String::from_utf8(buf).expect("ASCII output")
}

/// `t, y, y_nabla1, ..., y_nabla{r}`; cells outside a derivative's domain
/// are left empty.
pub fn solution_csv_string(y: &GridFunction, r: usize) -> Result<String> {
    let derivs: Vec<GridFunction> = (1..=r).map(|i| y.nabla_n(i)).collect::<Result<_>>()?;
    let mut s = String::from("t,y");
    for i in 1..=r {
        s.push_str(&format!(",y_nabla{i}"));
    }
    s.push('\n');
    for (k, (t, v)) in y.iter().enumerate() {
        let idx = y.start() + k;
        s.push_str(&format!("{},{}", fmt_num(t), fmt_num(v)));
        for d in &derivs {
            s.push(',');
            if let Some(x) = d.at(idx) {
                s.push_str(&fmt_num(x));
            }
        }
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeInfo {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
    /// Objective of the direct solve on the same problem.
    pub direct_objective: Option<f64>,
    /// Lipschitz bound on how far the lattice optimum may sit above it.
    pub gap_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub method: String,
    pub sense: String,
    pub objective: f64,
    pub el_sup_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub free_count: usize,
    pub residual_points: usize,
    pub note: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeInfo>,
}

impl SolveSummary {
    /// `maximize` reports the objective of the original (un-negated)
    /// Lagrangian.
    pub fn new(problem: &VariationalProblem, sol: &Solution, maximize: bool) -> Self {
        let (residual_points, free_count) = problem.counting();
        Self {
            method: sol.method.name().to_string(),
            sense: if maximize { "max" } else { "min" }.to_string(),
            objective: if maximize { -sol.objective } else { sol.objective },
            el_sup_norm: sol.el_sup_norm,
            iterations: sol.iterations,
            converged: sol.converged,
            free_count,
            residual_points,
            note: "the Euler-Lagrange residual certifies stationarity only, not a global extremum".into(),
            lattice: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TermSummary {
    pub index: usize,
    pub coefficient: f64,
    pub sup_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ElReportJson {
    pub order: usize,
    pub a1: f64,
    pub sup_norm: f64,
    pub partials_scale: f64,
    pub residual_start: f64,
    pub admissible: bool,
    pub objective: Option<f64>,
    pub terms: Vec<TermSummary>,
    pub residual_csv: String,
}

impl ElReportJson {
    pub fn new(problem: &VariationalProblem, y: &GridFunction, report: &ElReport) -> Self {
        let admissible = problem.check_admissible(y).is_ok();
        Self {
            order: problem.order(),
            a1: report.a1,
            sup_norm: report.sup_norm,
            partials_scale: report.partials_scale,
            residual_start: report.residual.domain_points()[0],
            admissible,
            objective: if admissible { problem.evaluate_functional(y).ok() } else { None },
            terms: report
                .terms
                .iter()
                .map(|t| TermSummary {
                    index: t.index,
                    coefficient: t.coefficient,
                    sup_norm: t.values.sup_norm(),
                })
                .collect(),
            residual_csv: grid_csv_string(&report.residual),
        }
    }
}

pub fn to_json_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize")
}
