//! End-to-end construction of correcting ensembles, their deployment rule and
//! the JSON model file.
//!
//! An ensemble is a list of stages, one per iteration. Each stage carries its
//! own preprocessing and its members (bare nodes or cascaded pairs). A sample
//! is corrected when any member of any stage fires.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Number, Value};

use crate::cascade::{
    complementary_set, fit_second_stage, project_rows, CascadePair, SecondStage, SecondStageMethod,
    DEFAULT_MAX_EPOCHS,
};
use crate::cluster::{kmeans, positive_correlation_report, KMeansConfig};
use crate::data::{fmt_real, Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::nodes::{build_nodes, CorrectorNode};
use crate::preprocess::{fit_preprocess, PreprocessConfig, PreprocessModel, Retention};
use crate::rng::RngSpec;

pub const MODEL_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Single Fisher nodes.
    Alg1,
    /// Nodes cascaded with a second hyperplane.
    Alg2,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(Algorithm::Alg1),
            "alg2" => Ok(Algorithm::Alg2),
            other => Err(Error::InvalidArgument(format!("unknown algorithm {other:?}"))),
        }
    }
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
        }
    }
}

/// What the host system should do with a sample the ensemble fires on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectingAction {
    #[default]
    FlagError,
    SuppressOutput,
    Relabel(usize),
}

impl CorrectingAction {
    pub fn kind(&self) -> &'static str {
        match self {
            CorrectingAction::FlagError => "flag_error",
            CorrectingAction::SuppressOutput => "suppress_output",
            CorrectingAction::Relabel(_) => "relabel",
        }
    }

    pub fn relabel_target(&self) -> Option<usize> {
        match self {
            CorrectingAction::Relabel(target) => Some(*target),
            _ => None,
        }
    }

    pub fn from_parts(kind: &str, target: Option<usize>) -> Result<Self> {
        match (kind, target) {
            ("flag_error", None) => Ok(CorrectingAction::FlagError),
            ("suppress_output", None) => Ok(CorrectingAction::SuppressOutput),
            ("relabel", Some(t)) => Ok(CorrectingAction::Relabel(t)),
            ("relabel", None) => Err(Error::InvalidArgument("relabel needs a target class".into())),
            (k, Some(_)) if k == "flag_error" || k == "suppress_output" => Err(
                Error::InvalidArgument(format!("action {k} does not take a relabel target")),
            ),
            (k, _) => Err(Error::InvalidArgument(format!("unknown action {k:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Member {
    Node(CorrectorNode),
    Pair(CascadePair),
}

impl Member {
    pub fn node(&self) -> &CorrectorNode {
        match self {
            Member::Node(node) => node,
            Member::Pair(pair) => &pair.first,
        }
    }

    /// Response on a point in the stage's whitened coordinates.
    pub fn fires(&self, z: &DVector<f64>) -> bool {
        match self {
            Member::Node(node) => node.fires(z),
            Member::Pair(pair) => pair.fires(z),
        }
    }
}

/// One iteration's worth of correctors sharing a preprocessing model.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub prep: PreprocessModel,
    pub algorithm: Algorithm,
    pub members: Vec<Member>,
}

impl Stage {
    pub fn new(prep: PreprocessModel, algorithm: Algorithm, members: Vec<Member>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyEnsemble { rejected: Vec::new() });
        }
        let m = prep.output_dim();
        for member in &members {
            let node = member.node();
            if node.dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: node.dim(),
                });
            }
            match (algorithm, member) {
                (Algorithm::Alg1, Member::Node(_)) | (Algorithm::Alg2, Member::Pair(_)) => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "member kind does not match algorithm {}",
                        algorithm.as_str()
                    )))
                }
            }
        }
        Ok(Self {
            prep,
            algorithm,
            members,
        })
    }

    pub fn fires(&self, x: &DVector<f64>) -> Result<bool> {
        let z = self.prep.transform(x)?;
        Ok(self.members.iter().any(|m| m.fires(&z)))
    }

    /// Per-row firing of a raw sample matrix.
    pub fn fires_rows(&self, rows: &DMatrix<f64>) -> Result<Vec<bool>> {
        let z = self.prep.transform_rows(rows)?;
        Ok(fire_whitened(&self.members, &z))
    }
}

fn fire_whitened(members: &[Member], z: &DMatrix<f64>) -> Vec<bool> {
    (0..z.nrows())
        .into_par_iter()
        .map(|i| {
            let row = z.row(i).transpose();
            members.iter().any(|m| m.fires(&row))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Corrected(CorrectingAction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectingEnsemble {
    stages: Vec<Stage>,
    action: CorrectingAction,
}

impl CorrectingEnsemble {
    pub fn new(stages: Vec<Stage>, action: CorrectingAction) -> Result<Self> {
        let Some(first) = stages.first() else {
            return Err(Error::EmptyEnsemble { rejected: Vec::new() });
        };
        let n = first.prep.input_dim();
        if let Some(bad) = stages.iter().find(|s| s.prep.input_dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.prep.input_dim(),
            });
        }
        Ok(Self { stages, action })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn action(&self) -> CorrectingAction {
        self.action
    }

    pub fn with_action(mut self, action: CorrectingAction) -> Self {
        self.action = action;
        self
    }

    /// Zero-based index of the latest iteration.
    pub fn iteration(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.stages[0].prep.input_dim()
    }

    pub fn member_count(&self) -> usize {
        self.stages.iter().map(|s| s.members.len()).sum()
    }

    pub fn fires(&self, x: &DVector<f64>) -> Result<bool> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        for stage in &self.stages {
            if stage.fires(x)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<Outcome> {
        Ok(if self.fires(x)? {
            Outcome::Corrected(self.action)
        } else {
            Outcome::Pass
        })
    }

    pub fn fires_rows(&self, rows: &DMatrix<f64>) -> Result<Vec<bool>> {
        let mut fired = vec![false; rows.nrows()];
        for stage in &self.stages {
            for (acc, f) in fired.iter_mut().zip(stage.fires_rows(rows)?) {
                *acc |= f;
            }
        }
        Ok(fired)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub clusters: usize,
    pub theta: f64,
    pub algorithm: Algorithm,
    pub project_to_sphere: bool,
    pub retention: Retention,
    pub eig_floor: f64,
    pub restarts: usize,
    pub max_iters: usize,
    pub max_epochs: usize,
    pub action: CorrectingAction,
    pub rng: RngSpec,
}

impl EnsembleConfig {
    pub fn new(clusters: usize) -> Self {
        let prep = PreprocessConfig::default();
        let km = KMeansConfig::new(clusters);
        Self {
            clusters,
            theta: 0.2,
            algorithm: Algorithm::Alg1,
            project_to_sphere: false,
            retention: prep.retention,
            eig_floor: prep.eig_floor,
            restarts: km.restarts,
            max_iters: km.max_iters,
            max_epochs: DEFAULT_MAX_EPOCHS,
            action: CorrectingAction::FlagError,
            rng: RngSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    pub cluster_id: usize,
    pub size: usize,
    /// `c_j`, the smallest projection of the cluster on its unit normal.
    pub threshold: f64,
    pub retained: bool,
    /// Smallest pairwise cosine between members.
    pub beta_hat: f64,
    /// Training correct points the bare node fires on (`|C_j|`), retained nodes only.
    pub node_pickups: Option<usize>,
    pub second_stage: Option<SecondStageMethod>,
    /// Training correct points the cascaded pair still fires on.
    pub pair_pickups: Option<usize>,
    /// Training error points of this cluster the member fires on.
    pub cluster_hits: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub errors: usize,
    pub errors_fired: usize,
    pub correct: usize,
    pub correct_fired: usize,
}

impl Confusion {
    /// Share of error samples the ensemble fires on (1 when there are none).
    pub fn error_detection_rate(&self) -> f64 {
        if self.errors == 0 {
            1.0
        } else {
            self.errors_fired as f64 / self.errors as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildReport {
    pub iteration: usize,
    pub algorithm: Algorithm,
    pub input_dim: usize,
    pub retained_dim: usize,
    pub clusters: usize,
    pub wcss: f64,
    pub members: usize,
    pub cluster_reports: Vec<ClusterReport>,
    /// Training-set counts for the stage built in this call.
    pub training: Confusion,
}

/// Runs the full construction on one labelled dataset.
pub fn fit_ensemble(data: &LabeledDataset, config: &EnsembleConfig) -> Result<(CorrectingEnsemble, BuildReport)> {
    let (stage, report) = fit_stage(data, config, 0)?;
    Ok((CorrectingEnsemble::new(vec![stage], config.action)?, report))
}

/// Fits a new stage on fresh data and appends it to `prev`.
pub fn iterate(
    prev: &CorrectingEnsemble,
    data: &LabeledDataset,
    config: &EnsembleConfig,
) -> Result<(CorrectingEnsemble, BuildReport)> {
    if data.dim() != prev.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: prev.input_dim(),
            got: data.dim(),
        });
    }
    let (stage, report) = fit_stage(data, config, prev.stages.len())?;
    let mut stages = prev.stages.clone();
    stages.push(stage);
    Ok((CorrectingEnsemble::new(stages, prev.action)?, report))
}

fn fit_stage(data: &LabeledDataset, config: &EnsembleConfig, iteration: usize) -> Result<(Stage, BuildReport)> {
    let error_rows = data.indices_of(Label::Error);
    if error_rows.is_empty() {
        return Err(Error::Empty("no error samples to correct".into()));
    }
    if config.clusters == 0 || config.clusters > error_rows.len() {
        return Err(Error::InvalidArgument(format!(
            "cluster count {} must lie in 1..={}",
            config.clusters,
            error_rows.len()
        )));
    }
    let prep = fit_preprocess(
        data,
        &PreprocessConfig {
            project_to_sphere: config.project_to_sphere,
            eig_floor: config.eig_floor,
            retention: config.retention,
        },
    )?;
    let whitened = prep.transform_rows(data.features())?;
    let errors = whitened.select_rows(&error_rows);
    let correct_rows = data.indices_of(Label::Correct);
    let correct = whitened.select_rows(&correct_rows);

    let km = KMeansConfig {
        clusters: config.clusters,
        restarts: config.restarts,
        max_iters: config.max_iters,
    };
    let clustering = kmeans(&errors, &km, config.rng.child(0))?;
    let betas = positive_correlation_report(&clustering, &errors);
    let node_set = build_nodes(&whitened, &error_rows, &clustering, config.theta)?;
    if node_set.nodes.is_empty() {
        return Err(Error::EmptyEnsemble {
            rejected: node_set.rejected(),
        });
    }

    let second_rng = config.rng.child(1);
    let built: Vec<(Member, usize, Option<usize>)> = node_set
        .nodes
        .par_iter()
        .map(|node| -> Result<_> {
            let pickups = complementary_set(node, &correct);
            match config.algorithm {
                Algorithm::Alg1 => Ok((Member::Node(node.clone()), pickups.nrows(), None)),
                Algorithm::Alg2 => {
                    let own = errors.select_rows(&clustering.members(node.cluster_id()));
                    let stage = fit_second_stage(
                        &project_rows(node, &pickups),
                        &project_rows(node, &own),
                        config.max_epochs,
                        second_rng.child(node.cluster_id() as u64),
                    )?;
                    let pair = CascadePair::new(node.clone(), stage)?;
                    let left = (0..pickups.nrows())
                        .filter(|&i| pair.fires(&pickups.row(i).transpose()))
                        .count();
                    Ok((Member::Pair(pair), pickups.nrows(), Some(left)))
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut cluster_reports = Vec::with_capacity(node_set.candidates.len());
    let mut members = Vec::with_capacity(built.len());
    let mut built = built.into_iter();
    for candidate in &node_set.candidates {
        let mut report = ClusterReport {
            cluster_id: candidate.cluster_id,
            size: candidate.size,
            threshold: candidate.threshold,
            retained: candidate.retained,
            beta_hat: betas[candidate.cluster_id],
            node_pickups: None,
            second_stage: None,
            pair_pickups: None,
            cluster_hits: None,
        };
        if candidate.retained {
            let (member, node_pickups, pair_pickups) = built.next().expect("one member per retained node");
            let own = errors.select_rows(&clustering.members(candidate.cluster_id));
            report.cluster_hits = Some((0..own.nrows()).filter(|&i| member.fires(&own.row(i).transpose())).count());
            report.node_pickups = Some(node_pickups);
            report.pair_pickups = pair_pickups;
            if let Member::Pair(pair) = &member {
                report.second_stage = Some(pair.second.method());
            }
            members.push(member);
        }
        cluster_reports.push(report);
    }

    let error_fired = fire_whitened(&members, &errors).into_iter().filter(|&f| f).count();
    let correct_fired = fire_whitened(&members, &correct).into_iter().filter(|&f| f).count();
    let report = BuildReport {
        iteration,
        algorithm: config.algorithm,
        input_dim: prep.input_dim(),
        retained_dim: prep.output_dim(),
        clusters: config.clusters,
        wcss: clustering.wcss,
        members: members.len(),
        cluster_reports,
        training: Confusion {
            errors: errors.nrows(),
            errors_fired: error_fired,
            correct: correct.nrows(),
            correct_fired,
        },
    };
    Ok((Stage::new(prep, config.algorithm, members)?, report))
}

pub fn save_model(ensemble: &CorrectingEnsemble, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(ensemble)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CorrectingEnsemble> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

pub fn model_to_string(ensemble: &CorrectingEnsemble) -> String {
    let (base, rest) = ensemble.stages.split_first().expect("ensembles are non-empty");
    let mut root = Map::new();
    root.insert("version".into(), json!(MODEL_VERSION));
    for (key, value) in stage_json(base) {
        root.insert(key, value);
    }
    let mut action = Map::new();
    action.insert("kind".into(), json!(ensemble.action.kind()));
    if let Some(t) = ensemble.action.relabel_target() {
        action.insert("relabel_target".into(), json!(t));
    }
    root.insert("action".into(), Value::Object(action));
    root.insert(
        "iterations".into(),
        Value::Array(rest.iter().map(|s| Value::Object(stage_json(s))).collect()),
    );
    let mut text = serde_json::to_string_pretty(&Value::Object(root)).expect("model json is serialisable");
    text.push('\n');
    text
}

pub fn model_from_str(text: &str) -> Result<CorrectingEnsemble> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    let obj = root.as_object().ok_or_else(|| schema("model must be a JSON object"))?;
    let version = obj.get("version").ok_or_else(|| schema("missing field version"))?;
    let version = version.as_str().ok_or_else(|| schema("version must be a string"))?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version.to_string(),
            expected: MODEL_VERSION.to_string(),
        });
    }
    let mut stages = vec![stage_from_json(obj).map_err(in_context("model"))?];
    for (i, it) in field(obj, "iterations")?
        .as_array()
        .ok_or_else(|| schema("iterations must be an array"))?
        .iter()
        .enumerate()
    {
        let it = it.as_object().ok_or_else(|| schema("iteration must be an object"))?;
        stages.push(stage_from_json(it).map_err(in_context(&format!("iteration {}", i + 1)))?);
    }
    let action = field(obj, "action")?
        .as_object()
        .ok_or_else(|| schema("action must be an object"))?;
    let kind = field(action, "kind")?.as_str().ok_or_else(|| schema("action kind must be a string"))?;
    let target = match action.get("relabel_target") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| schema("relabel_target must be a class id"))? as usize),
    };
    let action = CorrectingAction::from_parts(kind, target).map_err(|e| schema(&e.to_string()))?;
    CorrectingEnsemble::new(stages, action).map_err(|e| schema(&e.to_string()))
}

fn schema(message: &str) -> Error {
    Error::Schema(message.to_string())
}

fn in_context(context: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Schema(m) => Error::Schema(format!("{context}: {m}")),
        other => Error::Schema(format!("{context}: {other}")),
    }
}

fn real(value: f64) -> Value {
    Value::Number(Number::from_str(&fmt_real(value)).expect("finite reals render as JSON numbers"))
}

fn vector_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| real(x)).collect())
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array(m.row_iter().map(|r| Value::Array(r.iter().map(|&x| real(x)).collect())).collect())
}

fn stage_json(stage: &Stage) -> Map<String, Value> {
    let mut out = Map::new();
    out.insert("algorithm".into(), json!(stage.algorithm.as_str()));
    out.insert("project_to_sphere".into(), json!(stage.prep.projects_to_sphere()));
    out.insert("mean".into(), vector_json(stage.prep.mean()));
    out.insert("H".into(), matrix_json(stage.prep.basis()));
    out.insert("W".into(), matrix_json(stage.prep.whitening()));
    let members = stage
        .members
        .iter()
        .map(|member| {
            let node = member.node();
            let mut m = Map::new();
            m.insert("cluster_id".into(), json!(node.cluster_id()));
            m.insert("w".into(), vector_json(node.weights()));
            m.insert("c".into(), real(node.threshold()));
            if let Member::Pair(pair) = member {
                m.insert("w2".into(), vector_json(pair.second.weights()));
                if pair.second.method() != SecondStageMethod::AlwaysPass {
                    m.insert("c2".into(), real(pair.second.threshold()));
                }
                m.insert(
                    "method".into(),
                    serde_json::to_value(pair.second.method()).expect("method serialises"),
                );
            }
            Value::Object(m)
        })
        .collect();
    out.insert("members".into(), Value::Array(members));
    out
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| schema(&format!("missing field {key}")))
}

fn real_from(value: &Value, what: &str) -> Result<f64> {
    value
        .as_f64()
        .filter(|v| v.is_finite())
        .ok_or_else(|| schema(&format!("{what} must be a finite number")))
}

fn vector_from(value: &Value, what: &str) -> Result<DVector<f64>> {
    let items = value.as_array().ok_or_else(|| schema(&format!("{what} must be an array")))?;
    let values = items.iter().map(|v| real_from(v, what)).collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(values))
}

fn matrix_from(value: &Value, what: &str) -> Result<DMatrix<f64>> {
    let rows = value.as_array().ok_or_else(|| schema(&format!("{what} must be an array of rows")))?;
    let rows = rows.iter().map(|r| vector_from(r, what)).collect::<Result<Vec<_>>>()?;
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(schema(&format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn stage_from_json(obj: &Map<String, Value>) -> Result<Stage> {
    let algorithm: Algorithm = field(obj, "algorithm")?
        .as_str()
        .ok_or_else(|| schema("algorithm must be a string"))?
        .parse()?;
    let project = field(obj, "project_to_sphere")?
        .as_bool()
        .ok_or_else(|| schema("project_to_sphere must be a boolean"))?;
    let prep = PreprocessModel::from_parts(
        vector_from(field(obj, "mean")?, "mean")?,
        matrix_from(field(obj, "H")?, "H")?,
        matrix_from(field(obj, "W")?, "W")?,
        project,
    )?;
    let members = field(obj, "members")?
        .as_array()
        .ok_or_else(|| schema("members must be an array"))?
        .iter()
        .map(|m| member_from(m, algorithm))
        .collect::<Result<Vec<_>>>()?;
    Stage::new(prep, algorithm, members)
}

fn member_from(value: &Value, algorithm: Algorithm) -> Result<Member> {
    let obj = value.as_object().ok_or_else(|| schema("member must be an object"))?;
    let cluster_id = match obj.get("cluster_id") {
        Some(v) => v.as_u64().ok_or_else(|| schema("cluster_id must be an index"))? as usize,
        None => 0,
    };
    let node = CorrectorNode::from_unit(
        vector_from(field(obj, "w")?, "w")?,
        real_from(field(obj, "c")?, "c")?,
        cluster_id,
    )?;
    match algorithm {
        Algorithm::Alg1 => Ok(Member::Node(node)),
        Algorithm::Alg2 => {
            let method: SecondStageMethod = serde_json::from_value(field(obj, "method")?.clone())
                .map_err(|e| schema(&format!("method: {e}")))?;
            let w2 = vector_from(field(obj, "w2")?, "w2")?;
            let c2 = match (method, obj.get("c2")) {
                (SecondStageMethod::AlwaysPass, _) => f64::NEG_INFINITY,
                (_, Some(v)) => real_from(v, "c2")?,
                (_, None) => return Err(schema("missing field c2")),
            };
            Ok(Member::Pair(CascadePair::new(node, SecondStage::new(w2, c2, method)?)?))
        }
    }
}
