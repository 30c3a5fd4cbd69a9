use lcf_core::mobius::{KleinianGroup, MoebiusMap};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorSpec {
    pub inversion: bool,
    pub scale: f64,
    pub rotation: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Group description as read from a group file.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GroupSpec {
    Trivial,
    Dilation {
        k: f64,
        rotation: Option<Vec<f64>>,
    },
    Generators {
        generators: Vec<GeneratorSpec>,
        base_point: Option<Vec<f64>>,
    },
}

struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn number(&mut self, obj: &serde_json::Map<String, Value>, path: &str, key: &str) -> Option<f64> {
        match obj.get(key) {
            Some(Value::Number(x)) => x.as_f64(),
            Some(other) => {
                self.errors.push(format!("{path}{key}: expected number, found {}", kind(other)));
                None
            }
            None => {
                self.errors.push(format!("{path}{key}: missing"));
                None
            }
        }
    }

    fn vector(&mut self, obj: &serde_json::Map<String, Value>, path: &str, key: &str, len: usize, required: bool) -> Option<Vec<f64>> {
        let v = match obj.get(key) {
            Some(v) => v,
            None => {
                if required {
                    self.errors.push(format!("{path}{key}: missing"));
                }
                return None;
            }
        };
        let Value::Array(items) = v else {
            self.errors.push(format!("{path}{key}: expected array of numbers, found {}", kind(v)));
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            match item.as_f64() {
                Some(x) => out.push(x),
                None => {
                    self.errors.push(format!("{path}{key}[{i}]: expected number, found {}", kind(item)));
                    return None;
                }
            }
        }
        if out.len() != len {
            self.errors.push(format!("{path}{key}: expected {len} numbers, found {}", out.len()));
            return None;
        }
        Some(out)
    }

    fn unknown(&mut self, obj: &serde_json::Map<String, Value>, path: &str, allowed: &[&str]) {
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.errors.push(format!("{path}{key}: unknown field"));
            }
        }
    }
}

fn message(e: &lcf_core::Error) -> String {
    match e {
        lcf_core::Error::Domain(m) => m.clone(),
        other => other.to_string(),
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

impl GroupSpec {
    /// Reads a group file for R^n. Errors carry the path of the offending field.
    pub fn parse(text: &str, n: usize) -> Result<GroupSpec, Vec<String>> {
        let root: Value = serde_json::from_str(text).map_err(|e| vec![format!("invalid JSON: {e}")])?;
        let Value::Object(obj) = &root else {
            return Err(vec![format!("expected object, found {}", kind(&root))]);
        };
        let mut r = Reader { errors: Vec::new() };
        let spec = match obj.get("type") {
            Some(Value::String(t)) if t == "trivial" => {
                r.unknown(obj, "", &["type"]);
                Some(GroupSpec::Trivial)
            }
            Some(Value::String(t)) if t == "dilation" => {
                r.unknown(obj, "", &["type", "k", "rotation"]);
                let k = r.number(obj, "", "k");
                if let Some(k) = k {
                    if !(k > 1.0) {
                        r.errors.push(format!("k: must exceed 1, got {k}"));
                    }
                }
                let rotation = r.vector(obj, "", "rotation", n * n, false);
                k.map(|k| GroupSpec::Dilation { k, rotation })
            }
            Some(Value::String(t)) if t == "generators" => Self::generators(&mut r, obj, n),
            None if obj.contains_key("generators") => Self::generators(&mut r, obj, n),
            Some(Value::String(t)) => {
                r.errors.push(format!("type: expected `trivial`, `dilation` or `generators`, got `{t}`"));
                None
            }
            Some(other) => {
                r.errors.push(format!("type: expected string, found {}", kind(other)));
                None
            }
            None => {
                r.errors.push("type: missing (or give a `generators` list)".into());
                None
            }
        };
        if r.errors.is_empty() {
            if let Some(spec) = spec {
                if let Err(e) = spec.build(n) {
                    return Err(vec![message(&e)]);
                }
                return Ok(spec);
            }
        }
        Err(r.errors)
    }

    fn generators(r: &mut Reader, obj: &serde_json::Map<String, Value>, n: usize) -> Option<GroupSpec> {
        r.unknown(obj, "", &["type", "generators", "base_point"]);
        let base_point = r.vector(obj, "", "base_point", n, false);
        let Some(list) = obj.get("generators") else {
            r.errors.push("generators: missing".into());
            return None;
        };
        let Value::Array(items) = list else {
            r.errors.push(format!("generators: expected array, found {}", kind(list)));
            return None;
        };
        let mut gens = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let path = format!("generators[{i}].");
            let Value::Object(g) = item else {
                r.errors.push(format!("generators[{i}]: expected object, found {}", kind(item)));
                continue;
            };
            r.unknown(g, &path, &["inversion", "scale", "rotation", "a", "b"]);
            let inversion = match g.get("inversion") {
                None => Some(false),
                Some(Value::Bool(b)) => Some(*b),
                Some(other) => {
                    r.errors.push(format!("{path}inversion: expected boolean, found {}", kind(other)));
                    None
                }
            };
            let scale = r.number(g, &path, "scale");
            if let Some(s) = scale {
                if !(s > 0.0) {
                    r.errors.push(format!("{path}scale: must be positive, got {s}"));
                }
            }
            let rotation = r.vector(g, &path, "rotation", n * n, true);
            let a = r.vector(g, &path, "a", n, false).or(Some(vec![0.0; n]));
            let b = r.vector(g, &path, "b", n, false).or(Some(vec![0.0; n]));
            if let (Some(inversion), Some(scale), Some(rotation), Some(a), Some(b)) = (inversion, scale, rotation, a, b) {
                match MoebiusMap::new(inversion, scale, rotation.clone(), a.clone(), b.clone()) {
                    Ok(_) => gens.push(GeneratorSpec { inversion, scale, rotation, a, b }),
                    Err(e) => r.errors.push(format!("generators[{i}].{}", message(&e))),
                }
            }
        }
        Some(GroupSpec::Generators {
            generators: gens,
            base_point,
        })
    }

    pub fn build(&self, n: usize) -> lcf_core::Result<KleinianGroup> {
        match self {
            GroupSpec::Trivial => Ok(KleinianGroup::trivial(n)),
            GroupSpec::Dilation { k, rotation } => KleinianGroup::dilation(n, *k, rotation.clone()),
            GroupSpec::Generators { generators, base_point } => {
                let maps = generators
                    .iter()
                    .map(|g| MoebiusMap::new(g.inversion, g.scale, g.rotation.clone(), g.a.clone(), g.b.clone()))
                    .collect::<lcf_core::Result<Vec<_>>>()?;
                KleinianGroup::from_generators(n, maps, base_point.clone())
            }
        }
    }
}
