use std::path::{Path, PathBuf};

use lcf_core::kernel::AssemblyOptions;
use lcf_core::riesz::{SingularCorrection, Tolerances};
use lcf_core::solver::{SolveOptions, YamabeOptions};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::group::GroupSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Str,
    FloatList,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Int => "non-negative integer",
            Kind::Float => "number",
            Kind::Bool => "boolean",
            Kind::Str => "string",
            Kind::FloatList => "array of numbers",
        }
    }
}

const SECTIONS: &[&str] = &[
    "tolerances",
    "kernel",
    "solve",
    "yamabe",
    "poincare",
    "moving_plane",
    "rescale",
    "continue",
    "verify",
];

const SCHEMA: &[(&str, Kind)] = &[
    ("n", Kind::Int),
    ("alpha", Kind::Float),
    ("alpha_range", Kind::FloatList),
    ("resolution", Kind::Int),
    ("group_file", Kind::Str),
    ("output_dir", Kind::Str),
    ("threads", Kind::Int),
    ("tolerances.tail_tol", Kind::Float),
    ("tolerances.solve_tol", Kind::Float),
    ("tolerances.quad_tol", Kind::Float),
    ("kernel.correction", Kind::Str),
    ("kernel.bump_width", Kind::Float),
    ("kernel.cutoff", Kind::Int),
    ("kernel.max_cutoff", Kind::Int),
    ("solve.u0", Kind::Str),
    ("solve.max_iter", Kind::Int),
    ("solve.theta", Kind::Float),
    ("solve.picard_max", Kind::Int),
    ("solve.max_halvings", Kind::Int),
    ("solve.polish", Kind::Bool),
    ("solve.yamabe", Kind::Bool),
    ("yamabe.random_starts", Kind::Int),
    ("yamabe.seed", Kind::Int),
    ("yamabe.max_iter", Kind::Int),
    ("yamabe.noise_multiple", Kind::Float),
    ("poincare.s", Kind::Float),
    ("poincare.point", Kind::FloatList),
    ("poincare.cutoff", Kind::Int),
    ("moving_plane.lambdas", Kind::FloatList),
    ("moving_plane.base_point", Kind::FloatList),
    ("moving_plane.axis", Kind::Int),
    ("moving_plane.center", Kind::FloatList),
    ("moving_plane.half_width", Kind::Float),
    ("moving_plane.depth", Kind::Float),
    ("moving_plane.samples", Kind::Int),
    ("moving_plane.floor", Kind::Float),
    ("rescale.node", Kind::Int),
    ("rescale.lambdas", Kind::FloatList),
    ("rescale.window", Kind::Float),
    ("rescale.per_radius", Kind::Int),
    ("rescale.big_lambda", Kind::Float),
    ("rescale.fit", Kind::Bool),
    ("continue.step", Kind::Float),
    ("continue.bound", Kind::Float),
    ("continue.yamabe", Kind::Bool),
    ("verify.samples", Kind::Int),
    ("verify.fields", Kind::Int),
    ("verify.seed", Kind::Int),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TolerancesConfig {
    pub tail_tol: f64,
    pub solve_tol: f64,
    pub quad_tol: f64,
}

impl Default for TolerancesConfig {
    fn default() -> Self {
        let t = Tolerances::default();
        TolerancesConfig {
            tail_tol: t.tail_tol,
            solve_tol: t.solve_tol,
            quad_tol: t.quad_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// `calibrated` or `ball`.
    pub correction: String,
    pub bump_width: f64,
    pub cutoff: Option<usize>,
    pub max_cutoff: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            correction: "calibrated".into(),
            bump_width: 3.0,
            cutoff: None,
            max_cutoff: AssemblyOptions::default().max_cutoff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    /// `ones` or `guess`.
    pub u0: String,
    pub max_iter: usize,
    pub theta: f64,
    pub picard_max: usize,
    pub max_halvings: usize,
    pub polish: bool,
    pub yamabe: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        SolveConfig {
            u0: "ones".into(),
            max_iter: d.max_iter,
            theta: d.theta,
            picard_max: d.picard_max,
            max_halvings: d.max_halvings,
            polish: d.polish,
            yamabe: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YamabeConfig {
    pub random_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub noise_multiple: f64,
}

impl Default for YamabeConfig {
    fn default() -> Self {
        let d = YamabeOptions::default();
        YamabeConfig {
            random_starts: d.random_starts,
            seed: d.seed,
            max_iter: d.max_iter,
            noise_multiple: d.noise_multiple,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoincareConfig {
    /// Defaults to (n − α)/2.
    pub s: Option<f64>,
    /// Defaults to the group's base point.
    pub point: Option<Vec<f64>>,
    pub cutoff: usize,
}

impl Default for PoincareConfig {
    fn default() -> Self {
        PoincareConfig {
            s: None,
            point: None,
            cutoff: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MovingPlaneConfig {
    pub lambdas: Vec<f64>,
    /// Centre of the unit inversion used as the new projection base point.
    pub base_point: Option<Vec<f64>>,
    pub axis: Option<usize>,
    pub center: Option<Vec<f64>>,
    pub half_width: f64,
    pub depth: f64,
    pub samples: usize,
    pub floor: f64,
}

impl Default for MovingPlaneConfig {
    fn default() -> Self {
        MovingPlaneConfig {
            lambdas: (0..12).map(|i| (12 - i) as f64 / 10.0).collect(),
            base_point: None,
            axis: None,
            center: None,
            half_width: 2.0,
            depth: 2.0,
            samples: 16,
            floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RescaleConfig {
    /// Defaults to the node where u is largest.
    pub node: Option<usize>,
    pub lambdas: Vec<f64>,
    pub window: f64,
    pub per_radius: usize,
    pub big_lambda: f64,
    pub fit: bool,
}

impl Default for RescaleConfig {
    fn default() -> Self {
        RescaleConfig {
            node: None,
            lambdas: vec![2.0, 4.0, 8.0],
            window: 2.0,
            per_radius: 3,
            big_lambda: 2.0,
            fit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinueConfig {
    pub step: f64,
    pub bound: f64,
    pub yamabe: bool,
}

impl Default for ContinueConfig {
    fn default() -> Self {
        ContinueConfig {
            step: 0.1,
            bound: 100.0,
            yamabe: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub samples: usize,
    pub fields: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 1000,
            fields: 20,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n: usize,
    pub alpha: f64,
    /// [2, α₀] for `continue`.
    pub alpha_range: Vec<f64>,
    pub resolution: usize,
    /// Absent means the trivial group (the round sphere).
    pub group_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub tolerances: TolerancesConfig,
    pub kernel: KernelConfig,
    pub solve: SolveConfig,
    pub yamabe: YamabeConfig,
    pub poincare: PoincareConfig,
    pub moving_plane: MovingPlaneConfig,
    pub rescale: RescaleConfig,
    #[serde(rename = "continue")]
    pub continuation: ContinueConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 3,
            alpha: 2.0,
            alpha_range: vec![2.0, 2.8],
            resolution: 9,
            group_file: None,
            output_dir: PathBuf::from("out"),
            threads: None,
            tolerances: TolerancesConfig::default(),
            kernel: KernelConfig::default(),
            solve: SolveConfig::default(),
            yamabe: YamabeConfig::default(),
            poincare: PoincareConfig::default(),
            moving_plane: MovingPlaneConfig::default(),
            rescale: RescaleConfig::default(),
            continuation: ContinueConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            tail_tol: self.tolerances.tail_tol,
            solve_tol: self.tolerances.solve_tol,
            quad_tol: self.tolerances.quad_tol,
        }
    }

    pub fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions {
            correction: if self.kernel.correction == "ball" {
                SingularCorrection::EqualVolumeBall
            } else {
                SingularCorrection::CalibratedBump {
                    width: self.kernel.bump_width,
                }
            },
            max_cutoff: self.kernel.max_cutoff,
            cutoff: self.kernel.cutoff,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_iter: self.solve.max_iter,
            theta: self.solve.theta,
            picard_max: self.solve.picard_max,
            max_halvings: self.solve.max_halvings,
            polish: self.solve.polish,
        }
    }

    pub fn yamabe_options(&self) -> YamabeOptions {
        YamabeOptions {
            random_starts: self.yamabe.random_starts,
            seed: self.yamabe.seed,
            max_iter: self.yamabe.max_iter,
            noise_multiple: self.yamabe.noise_multiple,
        }
    }
}

/// The validated configuration together with the parsed group.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    #[serde(flatten)]
    pub config: RunConfig,
    pub group: GroupSpec,
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Checks key names and value types, coercing integers where numbers are
/// expected. Every problem is reported.
fn check_shape(root: &mut toml::Table, errors: &mut Vec<String>) {
    let keys: Vec<String> = root.keys().cloned().collect();
    for key in keys {
        if SECTIONS.contains(&key.as_str()) {
            match root.get_mut(&key) {
                Some(Value::Table(t)) => {
                    let inner: Vec<String> = t.keys().cloned().collect();
                    for k in inner {
                        let path = format!("{key}.{k}");
                        check_value(&path, t.get_mut(&k).expect("key listed"), errors);
                    }
                }
                Some(other) => errors.push(format!("{key}: expected table, found {}", kind_of(other))),
                None => {}
            }
        } else {
            check_value(&key, root.get_mut(&key).expect("key listed"), errors);
        }
    }
}

fn check_value(path: &str, value: &mut Value, errors: &mut Vec<String>) {
    let Some(&(_, kind)) = SCHEMA.iter().find(|(p, _)| *p == path) else {
        errors.push(format!("{path}: unknown key"));
        return;
    };
    let ok = match (kind, &*value) {
        (Kind::Int, Value::Integer(i)) => *i >= 0,
        (Kind::Float, Value::Float(_)) => true,
        (Kind::Float, Value::Integer(i)) => {
            *value = Value::Float(*i as f64);
            true
        }
        (Kind::Bool, Value::Boolean(_)) => true,
        (Kind::Str, Value::String(_)) => true,
        (Kind::FloatList, Value::Array(items)) => {
            let mut all = true;
            let coerced: Vec<Value> = items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) => Value::Float(*i as f64),
                    Value::Float(_) => v.clone(),
                    _ => {
                        all = false;
                        v.clone()
                    }
                })
                .collect();
            if all {
                *value = Value::Array(coerced);
            }
            all
        }
        _ => false,
    };
    if !ok {
        errors.push(format!("{path}: expected {}, found {}", kind.name(), describe(value)));
    }
}

fn describe(v: &Value) -> String {
    match v {
        Value::Integer(i) if *i < 0 => format!("negative integer {i}"),
        Value::Array(items) => match items.iter().find(|x| !matches!(x, Value::Integer(_) | Value::Float(_))) {
            Some(bad) => format!("array containing {}", kind_of(bad)),
            None => "array".into(),
        },
        other => kind_of(other).into(),
    }
}

/// Sets a dotted key from a `KEY=VALUE` override. The value is read as a
/// TOML value and falls back to a bare string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not of the form KEY=VALUE"))?;
    let key = key.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| format!("override `{key}`: `{part}` is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn semantic_errors(c: &RunConfig) -> Vec<String> {
    let mut e = Vec::new();
    let n = c.n;
    let nf = n as f64;
    if n != 3 {
        e.push(format!("n: charts are implemented for n = 3 only, got {n}"));
    }
    if !(c.alpha >= 2.0 && c.alpha < nf) {
        e.push(format!("alpha: must lie in [2, {n}), got {}", c.alpha));
    }
    match c.alpha_range.as_slice() {
        [a, b] => {
            if *a != 2.0 {
                e.push(format!("alpha_range: continuation starts at 2, got {a}"));
            }
            if !(*b >= 2.0 && *b < nf) {
                e.push(format!("alpha_range: end must lie in [2, {n}), got {b}"));
            }
        }
        other => e.push(format!("alpha_range: expected two numbers, found {}", other.len())),
    }
    if c.resolution < 2 {
        e.push(format!("resolution: must be at least 2, got {}", c.resolution));
    }
    if c.threads == Some(0) {
        e.push("threads: must be at least 1".into());
    }
    for (name, v) in [
        ("tolerances.tail_tol", c.tolerances.tail_tol),
        ("tolerances.solve_tol", c.tolerances.solve_tol),
        ("tolerances.quad_tol", c.tolerances.quad_tol),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            e.push(format!("{name}: must be positive, got {v}"));
        }
    }
    if !["calibrated", "ball"].contains(&c.kernel.correction.as_str()) {
        e.push(format!(
            "kernel.correction: expected `calibrated` or `ball`, got `{}`",
            c.kernel.correction
        ));
    }
    if !(c.kernel.bump_width > 0.0) {
        e.push(format!("kernel.bump_width: must be positive, got {}", c.kernel.bump_width));
    }
    if c.kernel.max_cutoff == 0 {
        e.push("kernel.max_cutoff: must be at least 1".into());
    }
    if !["ones", "guess"].contains(&c.solve.u0.as_str()) {
        e.push(format!("solve.u0: expected `ones` or `guess`, got `{}`", c.solve.u0));
    }
    if !(c.solve.theta > 0.0 && c.solve.theta <= 1.0) {
        e.push(format!("solve.theta: must lie in (0, 1], got {}", c.solve.theta));
    }
    if !(c.yamabe.noise_multiple >= 0.0) {
        e.push(format!("yamabe.noise_multiple: must be non-negative, got {}", c.yamabe.noise_multiple));
    }
    if let Some(s) = c.poincare.s {
        if !(s > 0.0) {
            e.push(format!("poincare.s: must be positive, got {s}"));
        }
    }
    check_len(&mut e, "poincare.point", c.poincare.point.as_deref(), n);
    if c.poincare.cutoff == 0 {
        e.push("poincare.cutoff: must be at least 1".into());
    }
    let mp = &c.moving_plane;
    if mp.lambdas.is_empty() {
        e.push("moving_plane.lambdas: must not be empty".into());
    }
    if mp.lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        e.push("moving_plane.lambdas: must be strictly decreasing".into());
    }
    check_len(&mut e, "moving_plane.base_point", mp.base_point.as_deref(), n);
    check_len(&mut e, "moving_plane.center", mp.center.as_deref(), n);
    if let Some(a) = mp.axis {
        if a >= n {
            e.push(format!("moving_plane.axis: must be below n = {n}, got {a}"));
        }
    }
    for (name, v) in [("moving_plane.half_width", mp.half_width), ("moving_plane.depth", mp.depth)] {
        if !(v > 0.0) {
            e.push(format!("{name}: must be positive, got {v}"));
        }
    }
    if mp.samples == 0 {
        e.push("moving_plane.samples: must be at least 1".into());
    }
    if !(mp.floor >= 0.0) {
        e.push(format!("moving_plane.floor: must be non-negative, got {}", mp.floor));
    }
    let rs = &c.rescale;
    if rs.lambdas.is_empty() {
        e.push("rescale.lambdas: must not be empty".into());
    }
    if let Some(l) = rs.lambdas.iter().find(|l| !(**l >= 1.0)) {
        e.push(format!("rescale.lambdas: every entry must be at least 1, found {l}"));
    }
    for (name, v) in [("rescale.window", rs.window), ("rescale.big_lambda", rs.big_lambda)] {
        if !(v > 0.0) {
            e.push(format!("{name}: must be positive, got {v}"));
        }
    }
    if rs.per_radius == 0 {
        e.push("rescale.per_radius: must be at least 1".into());
    }
    if !(c.continuation.step > 0.0) {
        e.push(format!("continue.step: must be positive, got {}", c.continuation.step));
    }
    if !(c.continuation.bound > 0.0) {
        e.push(format!("continue.bound: must be positive, got {}", c.continuation.bound));
    }
    if c.verify.samples == 0 {
        e.push("verify.samples: must be at least 1".into());
    }
    if c.verify.fields == 0 {
        e.push("verify.fields: must be at least 1".into());
    }
    e
}

fn check_len(e: &mut Vec<String>, name: &str, v: Option<&[f64]>, n: usize) {
    if let Some(v) = v {
        if v.len() != n {
            e.push(format!("{name}: expected {n} coordinates, found {}", v.len()));
        }
    }
}

/// Parses, applies overrides and validates. All problems are returned together.
pub fn load(text: Option<&str>, base_dir: &Path, overrides: &[String]) -> Result<Resolved, Vec<String>> {
    let mut root = match text {
        Some(t) => toml::from_str::<toml::Table>(t).map_err(|err| vec![format!("config: {}", err.message())])?,
        None => toml::Table::new(),
    };
    let mut errors = Vec::new();
    for o in overrides {
        if let Err(msg) = apply_override(&mut root, o) {
            errors.push(msg);
        }
    }
    check_shape(&mut root, &mut errors);
    if !errors.is_empty() {
        return Err(errors);
    }
    let mut config: RunConfig = Value::Table(root)
        .try_into()
        .map_err(|err: toml::de::Error| vec![format!("config: {}", err.message())])?;
    errors.extend(semantic_errors(&config));
    let group = match &config.group_file {
        None => Some(GroupSpec::Trivial),
        Some(path) => {
            let path = if path.is_relative() { base_dir.join(path) } else { path.clone() };
            config.group_file = Some(path.clone());
            match std::fs::read_to_string(&path) {
                Ok(text) => match GroupSpec::parse(&text, config.n) {
                    Ok(g) => Some(g),
                    Err(errs) => {
                        errors.extend(errs.into_iter().map(|m| format!("group_file: {m}")));
                        None
                    }
                },
                Err(err) => {
                    errors.push(format!("group_file: cannot read {}: {err}", path.display()));
                    None
                }
            }
        }
    };
    match group {
        Some(group) if errors.is_empty() => Ok(Resolved { config, group }),
        _ => Err(errors),
    }
}
