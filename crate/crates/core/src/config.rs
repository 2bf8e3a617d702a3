//! Experiment configuration files.
//!
//! A config is a JSON object. Unknown keys are rejected and every error names
//! the offending path (`mgac.sigma`, `post.op`, ...). Relative paths are
//! resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::colorspace::PccConfig;
use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::morphology::{ElementSpec, StructuringElement};
use crate::snakes::{ContourInit, GateMode, GimageParams, MacweParams, MgacParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gmm,
    Macwe,
    Mgac,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gmm => "gmm",
            Method::Macwe => "macwe",
            Method::Mgac => "mgac",
        }
    }
}

/// Geodesic snake settings together with the edge-map parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgacConfig {
    pub balloon: f64,
    pub threshold: f64,
    pub iterations: u32,
    pub smoothing: u32,
    pub gate_mode: GateMode,
    pub sigma: f64,
    pub alpha: f64,
}

impl Default for MgacConfig {
    fn default() -> Self {
        let (p, g) = (MgacParams::default(), GimageParams::default());
        Self {
            balloon: p.balloon,
            threshold: p.threshold,
            iterations: p.iterations,
            smoothing: p.smoothing,
            gate_mode: p.gate_mode,
            sigma: g.sigma,
            alpha: g.alpha,
        }
    }
}

impl MgacConfig {
    pub fn snake_params(&self) -> MgacParams {
        MgacParams {
            balloon: self.balloon,
            threshold: self.threshold,
            iterations: self.iterations,
            smoothing: self.smoothing,
            gate_mode: self.gate_mode,
        }
    }

    pub fn gimage_params(&self) -> GimageParams {
        GimageParams {
            sigma: self.sigma,
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostOp {
    Opening,
    Closing,
}

/// Post-processing applied to predicted masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostConfig {
    pub op: PostOp,
    #[serde(default)]
    pub element: ElementSpec,
    /// Drop 8-connected foreground blobs smaller than this after `op`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_area: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Directory of frames (png/ppm/pgm), processed in file-name order.
    #[serde(default)]
    pub frames: Option<PathBuf>,
    /// Directory of ground-truth masks matched to frames by file name.
    #[serde(default)]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// 0-based frame indices to score; all frames when absent.
    #[serde(default)]
    pub frames: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnakesConfig {
    /// 0-based frame indices to segment; all frames when absent.
    #[serde(default)]
    pub frames: Option<Vec<usize>>,
    #[serde(default)]
    pub init: Option<ContourInit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm: Option<GmmParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macwe: Option<MacweParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mgac: Option<MgacConfig>,
    #[serde(default)]
    pub pcc: Option<PccConfig>,
    #[serde(default)]
    pub post: Option<PostConfig>,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snakes: Option<SnakesConfig>,
    #[serde(default)]
    pub seed: u64,
}

/// Values supplied on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub frames: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    /// A config with the method's default parameter block and nothing else.
    pub fn new(method: Method) -> Self {
        let mut cfg = Self {
            method,
            gmm: None,
            macwe: None,
            mgac: None,
            pcc: None,
            post: None,
            input: InputConfig::default(),
            output: None,
            eval: None,
            snakes: None,
            seed: 0,
        };
        cfg.fill_defaults();
        cfg
    }

    /// Inserts the default block for the selected method and the CLAHE
    /// defaults when applicable.
    pub fn fill_defaults(&mut self) {
        match self.method {
            Method::Gmm => {
                self.gmm.get_or_insert_with(GmmParams::default);
            }
            Method::Macwe => {
                self.macwe.get_or_insert_with(MacweParams::default);
            }
            Method::Mgac => {
                self.mgac.get_or_insert_with(MgacConfig::default);
            }
        }
        if let Some(pcc) = &mut self.pcc {
            pcc.fill_defaults();
        }
    }

    /// Checks everything that does not need the file system.
    pub fn validate(&self) -> Result<()> {
        let stray = [
            ("gmm", self.gmm.is_some(), Method::Gmm),
            ("macwe", self.macwe.is_some(), Method::Macwe),
            ("mgac", self.mgac.is_some(), Method::Mgac),
        ]
        .into_iter()
        .find(|(_, present, m)| *present && *m != self.method);
        if let Some((block, _, _)) = stray {
            return Err(Error::config(format!(
                "{block}: parameter block does not match method \"{}\"",
                self.method.name()
            )));
        }
        let prefixed = |prefix: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{prefix}: {msg}")),
                other => other,
            })
        };
        if let Some(p) = &self.gmm {
            prefixed("gmm", p.validate())?;
        }
        if let Some(p) = &self.macwe {
            prefixed("macwe", p.validate())?;
        }
        if let Some(p) = &self.mgac {
            prefixed("mgac", p.snake_params().validate())?;
            prefixed("mgac", p.gimage_params().validate())?;
        }
        if let Some(pcc) = &self.pcc {
            prefixed("pcc", pcc.validate())?;
        }
        if let Some(post) = &self.post {
            prefixed("post.element", post.element.resolve().map(|_| ()))?;
        }
        if self.eval.is_some() && self.input.gt.is_none() {
            return Err(Error::config("eval: requested but input.gt is not set"));
        }
        if self.snakes.is_some() && self.method == Method::Gmm {
            return Err(Error::config("snakes: only valid with method macwe or mgac"));
        }
        Ok(())
    }

    /// Additional checks for a full directory run.
    pub fn validate_for_run(&self) -> Result<()> {
        self.validate()?;
        if self.input.frames.is_none() {
            return Err(Error::config("input.frames: missing frames directory"));
        }
        if self.output.is_none() {
            return Err(Error::config("output: missing output directory"));
        }
        if self.method != Method::Gmm && self.contour_init().is_none() {
            return Err(Error::config("snakes.init: snakes need an initial contour"));
        }
        Ok(())
    }

    pub fn contour_init(&self) -> Option<&ContourInit> {
        self.snakes.as_ref().and_then(|s| s.init.as_ref())
    }

    pub fn post_element(&self) -> Result<Option<StructuringElement>> {
        self.post.as_ref().map(|p| p.element.resolve()).transpose()
    }
}

fn parse_with(text: &str, overrides: &Overrides, base: Option<&Path>) -> Result<ExperimentConfig> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| Error::config(format!("malformed JSON: {e}")))?;
    let method_only = Overrides {
        method: overrides.method,
        ..Overrides::default()
    };
    apply_overrides(&mut value, &method_only)?;
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(&value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(format!("{path}: {}", e.into_inner()))
    })?;
    if let Some(base) = base {
        resolve_paths(&mut cfg, base);
    }
    apply_typed_overrides(&mut cfg, overrides)?;
    cfg.fill_defaults();
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a config from a JSON string; relative paths are left untouched.
pub fn parse_config_str(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    parse_with(text, overrides, None)
}

/// Reads, validates and completes a config file. Paths given in the file are
/// relative to it; paths in `overrides` are used as given.
pub fn parse_config(path: impl AsRef<Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_with(&text, overrides, Some(path.parent().unwrap_or(Path::new(""))))
}

fn resolve_paths(cfg: &mut ExperimentConfig, base: &Path) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let Some(p) = &mut cfg.input.frames {
        fix(p);
    }
    if let Some(p) = &mut cfg.input.gt {
        fix(p);
    }
    if let Some(p) = &mut cfg.output {
        fix(p);
    }
}

fn apply_typed_overrides(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    if let Some(m) = o.method {
        if m != cfg.method {
            return Err(Error::config(format!(
                "method: config selects \"{}\" but the command runs \"{}\"",
                cfg.method.name(),
                m.name()
            )));
        }
    }
    if let Some(p) = &o.frames {
        cfg.input.frames = Some(p.clone());
    }
    if let Some(p) = &o.gt {
        cfg.input.gt = Some(p.clone());
    }
    if let Some(p) = &o.output {
        cfg.output = Some(p.clone());
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    Ok(())
}

fn apply_overrides(value: &mut Value, o: &Overrides) -> Result<()> {
    let Value::Object(map) = value else {
        return Err(Error::config("config must be a JSON object"));
    };
    if let Some(m) = o.method {
        match map.get("method") {
            Some(Value::String(s)) if s != m.name() => {
                return Err(Error::config(format!(
                    "method: config selects \"{s}\" but the command runs \"{}\"",
                    m.name()
                )))
            }
            _ => {
                map.insert("method".into(), Value::String(m.name().into()));
            }
        }
    }
    Ok(())
}
