//! File formats: the `aw-tree/1` JSON tree schema and run configurations.
//!
//! Floats are written in the shortest representation that parses back to
//! the same `f64`, so files round-trip exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapted::AwParams;
use crate::control::{ControlBounds, SolverOptions};
use crate::cost::{CatalogModel, ControlledSpec, CostModel, StoppingSpec, TerminalSpec};
use crate::error::{Error, Result};
use crate::robust::{AscentConfig, RobustQuery};
use crate::sensitivity::ProblemClass;
use crate::stopping::DEFAULT_STOPPING_TOL;
use crate::tree::{Node, NodeId, ScenarioTree};

pub const TREE_SCHEMA: &str = "aw-tree/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub time: usize,
    pub value: Option<f64>,
    pub cond_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFileV1 {
    pub schema_version: String,
    pub horizon: usize,
    pub nodes: Vec<NodeRecord>,
}

impl TreeFileV1 {
    pub fn from_tree(tree: &ScenarioTree) -> Self {
        Self {
            schema_version: TREE_SCHEMA.into(),
            horizon: tree.horizon(),
            nodes: tree
                .nodes()
                .iter()
                .map(|n| NodeRecord {
                    id: n.id.0,
                    parent: n.parent.map(|p| p.0),
                    time: n.time,
                    value: n.value,
                    cond_prob: n.cond_prob,
                })
                .collect(),
        }
    }

    pub fn into_tree(self) -> Result<ScenarioTree> {
        if self.schema_version != TREE_SCHEMA {
            return Err(Error::tree(
                None,
                format!(
                    "unsupported schema_version {:?}, expected {TREE_SCHEMA:?}",
                    self.schema_version
                ),
            ));
        }
        let nodes = self
            .nodes
            .into_iter()
            .map(|r| Node {
                id: NodeId(r.id),
                time: r.time,
                value: r.value,
                cond_prob: r.cond_prob,
                parent: r.parent.map(NodeId),
            })
            .collect();
        ScenarioTree::new(self.horizon, nodes)
    }
}

/// Serializes a tree with one node record per line.
pub fn tree_to_json(tree: &ScenarioTree) -> String {
    let file = TreeFileV1::from_tree(tree);
    let mut out = format!(
        "{{\n  \"schema_version\": {},\n  \"horizon\": {},\n  \"nodes\": [\n",
        serde_json::to_string(&file.schema_version).expect("string serializes"),
        file.horizon
    );
    for (i, rec) in file.nodes.iter().enumerate() {
        let sep = if i + 1 == file.nodes.len() { "" } else { "," };
        out.push_str("    ");
        out.push_str(&serde_json::to_string(rec).expect("node record serializes"));
        out.push_str(sep);
        out.push('\n');
    }
    out.push_str("  ]\n}\n");
    out
}

/// 1-based line of the record of node `id`, looked up by its `"id"` key.
fn node_line(text: &str, id: usize) -> Option<usize> {
    text.lines()
        .position(|line| {
            line.match_indices("\"id\"").any(|(at, key)| {
                let rest = line[at + key.len()..].trim_start();
                rest.strip_prefix(':').is_some_and(|rest| {
                    let rest = rest.trim_start();
                    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
                    digits.parse() == Ok(id)
                })
            })
        })
        .map(|i| i + 1)
}

/// Parses an `aw-tree/1` document; errors carry the offending line.
pub fn tree_from_json(text: &str) -> Result<ScenarioTree> {
    let file: TreeFileV1 = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let reason = msg
            .rsplit_once(" at line ")
            .map_or(msg.as_str(), |(head, _)| head)
            .to_string();
        Error::InvalidTree {
            node: None,
            line: Some(e.line()),
            reason,
        }
    })?;
    file.into_tree().map_err(|e| match e {
        Error::InvalidTree {
            node: Some(n),
            line: None,
            reason,
        } => Error::InvalidTree {
            node: Some(n),
            line: node_line(text, n),
            reason,
        },
        other => other,
    })
}

pub fn read_tree(path: &Path) -> Result<ScenarioTree> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    tree_from_json(&text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

/// A catalog model reference: `{"name": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

fn default_p() -> f64 {
    2.0
}

fn default_l() -> f64 {
    ControlBounds::default().l
}

fn default_stopping_tol() -> f64 {
    DEFAULT_STOPPING_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem_class: ProblemClass,
    pub model: ModelRef,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Control box `[-L, L]`.
    #[serde(rename = "L", default = "default_l")]
    pub l: f64,
    #[serde(default)]
    pub radii: Vec<f64>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_stopping_tol")]
    pub stopping_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ascent: AscentConfig,
    /// Bicausalization offset of the perturbed model; `r / 100` if unset.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub outputs: OutputPaths,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !CatalogModel::is_known_name(&self.model.name) {
            return Err(Error::Config(format!(
                "unknown model {:?}",
                self.model.name
            )));
        }
        let names: &[&str] = match self.problem_class {
            ProblemClass::Terminal => &CatalogModel::TERMINAL_NAMES,
            ProblemClass::Control => &CatalogModel::CONTROLLED_NAMES,
            ProblemClass::Stopping => &CatalogModel::STOPPING_NAMES,
        };
        if !names.contains(&self.model.name.as_str()) {
            return Err(Error::Config(format!(
                "model {:?} does not belong to problem class {:?}",
                self.model.name, self.problem_class
            )));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("p = {} must exceed 1", self.p)));
        }
        ControlBounds::new(self.l).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::Config(
                "solver tolerance and iteration cap must be positive".into(),
            ));
        }
        if !(self.stopping_tol >= 0.0) {
            return Err(Error::Config("stopping_tol must be nonnegative".into()));
        }
        if let Some(d) = self.delta {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("delta = {d} must be nonnegative")));
            }
        }
        if !self.radii.iter().all(|r| r.is_finite() && *r > 0.0)
            || !self.radii.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::Config(
                "radii must be positive and strictly ascending".into(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<AwParams> {
        AwParams::new(self.p)
    }

    pub fn bounds(&self) -> Result<ControlBounds> {
        ControlBounds::new(self.l)
    }

    /// The catalog entry named by the configuration.
    pub fn catalog_model(&self) -> Result<CatalogModel> {
        let doc = serde_json::json!({ "name": self.model.name, "params": self.model.params });
        let parse_err =
            |e: serde_json::Error| Error::Config(format!("model {:?}: {e}", self.model.name));
        Ok(match self.problem_class {
            ProblemClass::Terminal => CatalogModel::Terminal(
                serde_json::from_value::<TerminalSpec>(doc).map_err(parse_err)?,
            ),
            ProblemClass::Control => CatalogModel::Controlled(
                serde_json::from_value::<ControlledSpec>(doc).map_err(parse_err)?,
            ),
            ProblemClass::Stopping => CatalogModel::Stopping(
                serde_json::from_value::<StoppingSpec>(doc).map_err(parse_err)?,
            ),
        })
    }

    pub fn build_model(&self, horizon: usize) -> Result<CostModel> {
        self.catalog_model()?.build(horizon)
    }

    pub fn robust_query(&self, tree: &ScenarioTree) -> Result<RobustQuery> {
        let model = self.build_model(tree.horizon())?;
        let mut query = RobustQuery::new(
            self.problem_class,
            tree.clone(),
            model,
            self.params()?,
            self.radii.clone(),
        );
        query.ascent = AscentConfig {
            seed: self.seed,
            ..self.ascent
        };
        query.bounds = self.bounds()?;
        query.solver = self.solver;
        query.stopping_tol = self.stopping_tol;
        Ok(query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{gen_binomial, gen_random};

    #[test]
    fn tree_round_trip_is_exact() {
        let tree = gen_random(3, 2, 11).unwrap();
        let text = tree_to_json(&tree);
        let back = tree_from_json(&text).unwrap();
        assert_eq!(back.nodes(), tree.nodes());
        assert_eq!(tree_to_json(&back), text);
    }

    #[test]
    fn invariant_errors_point_at_the_node_line() {
        let tree = gen_binomial(1, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let text = tree_to_json(&tree).replace("\"value\":-1.0", "\"value\":1.0");
        match tree_from_json(&text) {
            Err(Error::InvalidTree { node, line, .. }) => {
                assert_eq!(line, node_line(&text, node.unwrap()));
                assert!(line.unwrap() >= 5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let text = "{\n  \"schema_version\": \"aw-tree/1\",\n  \"horizon\": ,\n}";
        assert!(matches!(
            tree_from_json(text),
            Err(Error::InvalidTree { line: Some(3), .. })
        ));
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let tree = gen_binomial(1, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let text = tree_to_json(&tree).replace("aw-tree/1", "aw-tree/2");
        assert!(matches!(
            tree_from_json(&text),
            Err(Error::InvalidTree { .. })
        ));
    }

    #[test]
    fn config_rejects_unknown_model_and_small_p() {
        let bad = r#"{"problem_class":"terminal","model":{"name":"nope","params":{}}}"#;
        assert!(matches!(RunConfig::from_json(bad), Err(Error::Config(_))));
        let bad_p = r#"{"problem_class":"terminal","model":{"name":"constant","params":{"value":1}},"p":1.0}"#;
        assert!(matches!(RunConfig::from_json(bad_p), Err(Error::Config(_))));
        let wrong_class =
            r#"{"problem_class":"stopping","model":{"name":"linear","params":{"c":[1]}}}"#;
        assert!(matches!(
            RunConfig::from_json(wrong_class),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_builds_model() {
        let cfg = RunConfig::from_json(
            r#"{"problem_class":"terminal","model":{"name":"linear","params":{"c":[0,1]}},"radii":[0.01,0.1]}"#,
        )
        .unwrap();
        assert_eq!(cfg.p, 2.0);
        assert_eq!(cfg.build_model(2).unwrap().horizon(), 2);
    }
}
