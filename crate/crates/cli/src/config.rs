//! Run configuration: JSON file or preset, overlaid on the defaults, then
//! per-key command-line overrides.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ccpred::dataset::Trajectory;
use ccpred::pipeline::RunConfig;
use serde_json::{json, Map, Value};

use crate::error::{CliError, Result};

/// Name accepted by `--config` for the bundled demo scenario.
pub const DEMO: &str = "demo";

fn to_value(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("RunConfig serializes")
}

/// Every key path of the default configuration, nested keys joined by `.`.
pub fn config_keys() -> BTreeSet<String> {
    fn walk(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
        if let Value::Object(map) = v {
            for (k, child) in map {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                walk(child, &path, out);
                out.insert(path);
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(&to_value(&RunConfig::default()), "", &mut out);
    out
}

/// Removes `--<key> <value>` and `--<key>=<value>` pairs naming a config key.
pub type Overrides = Vec<(String, String)>;

pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides)> {
    let keys = config_keys();
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if !keys.contains(key) {
            rest.push(arg);
            continue;
        }
        let key = key.to_string();
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Overlay `top` on `base`. Objects merge key by key when every key of `top`
/// is known to `base`; otherwise `top` replaces `base` wholesale, which is
/// how an enum variant is switched.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) if t.keys().all(|k| b.contains_key(k)) => {
            for (k, v) in t {
                merge(b.get_mut(&k).expect("key checked"), v);
            }
        }
        (b, t) => *b = t,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m: &mut Map<String, Value>| m.get_mut(part))
            .ok_or_else(|| {
                CliError::Config(format!("key {key} does not apply to this configuration"))
            })?;
    }
    *node = value;
    Ok(())
}

/// Resolve `--config` (a JSON file or `demo`) plus overrides into a
/// validated configuration.
pub fn resolve(config: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut value = to_value(&RunConfig::default());
    match config {
        None => {}
        Some(DEMO) => value = to_value(&RunConfig::demo()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Input {
                path: path.into(),
                source: e.into(),
            })?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            if !file.is_object() {
                return Err(CliError::Config(format!(
                    "{path}: top level must be an object"
                )));
            }
            merge(&mut value, file);
        }
    }
    for (key, raw) in overrides {
        // Bare words that are not JSON are taken as strings.
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
        set_path(&mut value, key, v)?;
    }
    let cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Derive every seed of a run from one master seed.
pub fn apply_seed(cfg: &mut RunConfig, seed: u64) {
    cfg.scenario.seed = seed;
    if let Trajectory::Random { seed: s, .. } = &mut cfg.scenario.trajectory {
        *s = seed.wrapping_add(1);
    }
    cfg.pred_seed = seed.wrapping_add(2);
    cfg.pred_trajectory_seed = seed.wrapping_add(3);
    cfg.train_seed = seed.wrapping_add(4);
}

pub fn seeds(cfg: &RunConfig) -> Value {
    let trajectory = match &cfg.scenario.trajectory {
        Trajectory::Random { seed, .. } => json!(seed),
        Trajectory::Waypoints(_) => Value::Null,
    };
    json!({
        "scenario.seed": cfg.scenario.seed,
        "scenario.trajectory.random.seed": trajectory,
        "pred_seed": cfg.pred_seed,
        "pred_trajectory_seed": cfg.pred_trajectory_seed,
        "train_seed": cfg.train_seed,
    })
}

/// The record written next to every output: subcommand, resolved
/// configuration and seeds.
pub fn run_log(command: &str, cfg: &RunConfig, extra: Value) -> String {
    let mut log = json!({
        "command": command,
        "config": to_value(cfg),
        "seeds": seeds(cfg),
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut log, extra) {
        m.extend(e);
    }
    serde_json::to_string_pretty(&log).expect("log serializes") + "\n"
}

pub fn write_log(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_are_split_from_other_flags() {
        let (rest, ov) = split_overrides(args(&[
            "chart",
            "--memory",
            "10",
            "--out-dir",
            "x",
            "--scenario.speed=0.5",
        ]))
        .unwrap();
        assert_eq!(rest, args(&["chart", "--out-dir", "x"]));
        assert_eq!(
            ov,
            vec![
                ("memory".into(), "10".into()),
                ("scenario.speed".into(), "0.5".into())
            ]
        );
        assert!(matches!(
            split_overrides(args(&["--epochs"])),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn overrides_apply_and_are_typed() {
        let ov = vec![
            ("memory".to_string(), "7".to_string()),
            ("horizons".to_string(), "[0,3]".to_string()),
            ("pred_margin".to_string(), "1.5".to_string()),
        ];
        let cfg = resolve(Some(DEMO), &ov).unwrap();
        assert_eq!(
            (cfg.memory, cfg.horizons.clone(), cfg.pred_margin),
            (7, vec![0, 3], Some(1.5))
        );
        assert_eq!(
            cfg.scenario.num_snapshots,
            RunConfig::demo().scenario.num_snapshots
        );
        let bad = vec![("memory".to_string(), "many".to_string())];
        assert!(matches!(resolve(None, &bad), Err(CliError::Config(_))));
        let invalid = vec![("memory".to_string(), "1".to_string())];
        assert_eq!(resolve(None, &invalid).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn partial_files_merge_and_variants_switch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"epochs": 3, "scenario": {"speed": 1.0, "trajectory": {"waypoints": [[1,1],[5,5]]}}}"#).unwrap();
        let cfg = resolve(path.to_str(), &[]).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.scenario.speed, 1.0);
        assert_eq!(
            cfg.scenario.trajectory,
            Trajectory::Waypoints(vec![[1.0, 1.0], [5.0, 5.0]])
        );
        assert_eq!(
            cfg.scenario.num_subcarriers,
            RunConfig::default().scenario.num_subcarriers
        );
        fs::write(&path, r#"{"epochz": 3}"#).unwrap();
        assert!(matches!(
            resolve(path.to_str(), &[]),
            Err(CliError::Config(_))
        ));
        fs::write(&path, "{").unwrap();
        assert!(matches!(
            resolve(path.to_str(), &[]),
            Err(CliError::Config(_))
        ));
        let missing = dir.path().join("none.json");
        assert_eq!(resolve(missing.to_str(), &[]).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn bundled_demo_file_matches_preset() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json");
        let cfg = resolve(path.to_str(), &[]).unwrap();
        assert_eq!(cfg, RunConfig::demo());
        assert_eq!(cfg.horizons, (0..=25).collect::<Vec<_>>());
    }

    #[test]
    fn master_seed_reaches_every_stream() {
        let mut cfg = RunConfig::default();
        apply_seed(&mut cfg, 40);
        let s = seeds(&cfg);
        assert_eq!(s["scenario.seed"], 40);
        assert_eq!(s["pred_seed"], 42);
        assert_eq!(s["train_seed"], 44);
    }
}
