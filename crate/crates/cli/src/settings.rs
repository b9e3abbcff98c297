//! Resolution of run settings: built-in defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use gcon::config::KeyValues;
use gcon::dataset::{SyntheticKind, SyntheticSpec};
use gcon::encoder::PseudoLabelMode;
use gcon::propagation::{format_steps, parse_steps, Step};
use gcon::sensitivity::DEFAULT_AUDIT_MAX_NODES;
use gcon::{Error, InferenceMode, LossKind, Result, TrainConfig};

pub const TRAIN_KEYS: &[&str] = &[
    "dataset", "seed", "encoder_seed", "epsilon", "delta", "omega", "alpha", "steps", "lambda", "xi", "clip", "loss",
    "delta_l", "d1", "hidden", "epochs", "lr", "bias", "pseudo_label", "max_iters", "grad_tol",
];
pub const INFER_KEYS: &[&str] = &["artifact", "dataset", "mode", "alpha_i", "infer_one_over_s", "split"];
pub const AUDIT_KEYS: &[&str] = &["dataset", "alpha", "steps", "clip", "max_nodes", "bound_scale"];
pub const GEN_KEYS: &[&str] = &[
    "kind", "n", "classes", "p_intra", "p_inter", "feature_dim", "feature_noise", "seed", "train_per_class", "val",
    "test",
];

/// Merges the three layers. Unknown keys in the file are rejected.
pub fn resolve(
    defaults: Vec<(&str, String)>,
    config: Option<&Path>,
    flags: Vec<(&str, Option<String>)>,
    known: &[&str],
) -> Result<KeyValues> {
    let mut kv = KeyValues::default();
    for (k, v) in defaults {
        kv.set(k, v);
    }
    if let Some(path) = config {
        let file = KeyValues::load(path)?;
        file.reject_unknown(known)?;
        for (k, v) in file.into_map() {
            kv.set(&k, v);
        }
    }
    for (k, v) in flags {
        if let Some(v) = v {
            kv.set(k, v);
        }
    }
    kv.reject_unknown(known)?;
    Ok(kv)
}

/// Reads a required input path and stores it back in absolute form, so a
/// recorded run can be replayed from any working directory.
pub fn required_path(kv: &mut KeyValues, key: &'static str) -> Result<PathBuf> {
    let raw = kv
        .get(key)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .ok_or_else(|| Error::param(key, "is required"))?;
    let path = raw.canonicalize().map_err(|e| Error::io(&raw, e))?;
    kv.set(key, path.display());
    Ok(path)
}

fn steps(kv: &KeyValues) -> Result<Option<Vec<Step>>> {
    kv.get("steps")
        .map(|s| parse_steps(s).map_err(|e| Error::param("steps", e)))
        .transpose()
}

pub fn on_off(kv: &KeyValues, key: &'static str) -> Result<Option<bool>> {
    match kv.get(key) {
        None => Ok(None),
        Some("on") | Some("true") => Ok(Some(true)),
        Some("off") | Some("false") => Ok(Some(false)),
        Some(other) => Err(Error::param(key, format!("expected on or off, got `{other}`"))),
    }
}

pub fn train_defaults() -> Vec<(&'static str, String)> {
    let c = TrainConfig::default();
    vec![
        ("seed", c.seed.to_string()),
        ("epsilon", c.budget.epsilon.to_string()),
        ("delta", c.budget.delta.to_string()),
        ("omega", c.budget.omega.to_string()),
        ("alpha", c.propagation.alpha.to_string()),
        ("steps", format_steps(&c.propagation.steps)),
        ("lambda", c.lambda.to_string()),
        ("xi", c.xi.to_string()),
        ("clip", c.clip.to_string()),
        ("loss", c.loss.as_str().to_string()),
        ("delta_l", c.delta_l.to_string()),
        ("d1", c.encoder.d1.to_string()),
        ("hidden", c.encoder.hidden.to_string()),
        ("epochs", c.encoder.epochs.to_string()),
        ("lr", c.encoder.lr.to_string()),
        ("bias", if c.encoder.bias { "on" } else { "off" }.to_string()),
        ("pseudo_label", pseudo_label_str(c.pseudo_label).to_string()),
        ("max_iters", c.optimizer.max_iters.to_string()),
        ("grad_tol", c.optimizer.grad_tol.to_string()),
    ]
}

fn pseudo_label_str(m: PseudoLabelMode) -> &'static str {
    match m {
        PseudoLabelMode::None => "none",
        PseudoLabelMode::All => "all",
    }
}

/// Builds the training config and fills in `encoder_seed` so the stored
/// settings carry every value the run used.
pub fn train_config(kv: &mut KeyValues) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    kv.apply("seed", &mut c.seed)?;
    kv.apply("epsilon", &mut c.budget.epsilon)?;
    kv.apply("delta", &mut c.budget.delta)?;
    kv.apply("omega", &mut c.budget.omega)?;
    kv.apply("alpha", &mut c.propagation.alpha)?;
    if let Some(s) = steps(kv)? {
        c.propagation.steps = s;
    }
    kv.apply("lambda", &mut c.lambda)?;
    kv.apply("xi", &mut c.xi)?;
    kv.apply("clip", &mut c.clip)?;
    kv.apply::<LossKind>("loss", &mut c.loss)?;
    kv.apply("delta_l", &mut c.delta_l)?;
    kv.apply("d1", &mut c.encoder.d1)?;
    kv.apply("hidden", &mut c.encoder.hidden)?;
    kv.apply("epochs", &mut c.encoder.epochs)?;
    kv.apply("lr", &mut c.encoder.lr)?;
    if let Some(b) = on_off(kv, "bias")? {
        c.encoder.bias = b;
    }
    kv.apply::<PseudoLabelMode>("pseudo_label", &mut c.pseudo_label)?;
    kv.apply("max_iters", &mut c.optimizer.max_iters)?;
    kv.apply("grad_tol", &mut c.optimizer.grad_tol)?;
    c.encoder_seed = Some(kv.parsed("encoder_seed")?.unwrap_or(c.seed));
    kv.set("encoder_seed", c.resolved_encoder_seed());
    c.validate()?;
    Ok(c)
}

pub fn infer_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("mode", InferenceMode::Private.as_str().to_string()),
        ("infer_one_over_s", "on".to_string()),
        ("split", "auto".to_string()),
    ]
}

#[derive(Debug, Clone)]
pub struct AuditSettings {
    pub alpha: f64,
    pub steps: Vec<Step>,
    pub clip: f64,
    pub max_nodes: usize,
    /// Multiplier on the analytic bound; only tests move it off 1.
    pub bound_scale: f64,
}

pub fn audit_defaults() -> Vec<(&'static str, String)> {
    let c = TrainConfig::default();
    vec![
        ("alpha", c.propagation.alpha.to_string()),
        ("steps", format_steps(&c.propagation.steps)),
        ("clip", c.clip.to_string()),
        ("max_nodes", DEFAULT_AUDIT_MAX_NODES.to_string()),
        ("bound_scale", "1".to_string()),
    ]
}

pub fn audit_settings(kv: &KeyValues) -> Result<AuditSettings> {
    let d = TrainConfig::default();
    let mut s = AuditSettings {
        alpha: d.propagation.alpha,
        steps: d.propagation.steps,
        clip: d.clip,
        max_nodes: DEFAULT_AUDIT_MAX_NODES,
        bound_scale: 1.0,
    };
    kv.apply("alpha", &mut s.alpha)?;
    if let Some(st) = steps(kv)? {
        s.steps = st;
    }
    kv.apply("clip", &mut s.clip)?;
    kv.apply("max_nodes", &mut s.max_nodes)?;
    kv.apply("bound_scale", &mut s.bound_scale)?;
    if !(s.clip > 0.0 && s.clip <= 0.5) {
        return Err(Error::param("clip", format!("must lie in (0, 1/2], got {}", s.clip)));
    }
    if !(s.bound_scale > 0.0) {
        return Err(Error::param("bound_scale", "must be positive"));
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct GenSettings {
    pub spec: SyntheticSpec,
    pub train_per_class: usize,
    pub val: usize,
    pub test: usize,
}

pub fn gen_defaults() -> Vec<(&'static str, String)> {
    let s = SyntheticSpec::default();
    vec![
        ("kind", s.kind.as_str().to_string()),
        ("n", s.n.to_string()),
        ("classes", s.classes.to_string()),
        ("p_intra", s.p_intra.to_string()),
        ("p_inter", s.p_inter.to_string()),
        ("feature_dim", s.feature_dim.to_string()),
        ("feature_noise", s.feature_noise.to_string()),
        ("seed", s.seed.to_string()),
        ("train_per_class", "20".to_string()),
        ("val", "80".to_string()),
        ("test", "200".to_string()),
    ]
}

pub fn gen_settings(kv: &KeyValues) -> Result<GenSettings> {
    let mut spec = SyntheticSpec::default();
    kv.apply::<SyntheticKind>("kind", &mut spec.kind)?;
    kv.apply("n", &mut spec.n)?;
    kv.apply("classes", &mut spec.classes)?;
    kv.apply("p_intra", &mut spec.p_intra)?;
    kv.apply("p_inter", &mut spec.p_inter)?;
    kv.apply("feature_dim", &mut spec.feature_dim)?;
    kv.apply("feature_noise", &mut spec.feature_noise)?;
    kv.apply("seed", &mut spec.seed)?;
    spec.validate()?;
    let mut g = GenSettings {
        spec,
        train_per_class: 20,
        val: 80,
        test: 200,
    };
    kv.apply("train_per_class", &mut g.train_per_class)?;
    kv.apply("val", &mut g.val)?;
    kv.apply("test", &mut g.test)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "epsilon = 2\nalpha = 0.3\n").unwrap();
        let mut kv = resolve(
            train_defaults(),
            Some(&cfg),
            vec![("alpha", Some("0.7".into())), ("lambda", None)],
            TRAIN_KEYS,
        )
        .unwrap();
        let c = train_config(&mut kv).unwrap();
        assert_eq!(c.budget.epsilon, 2.0);
        assert_eq!(c.propagation.alpha, 0.7);
        assert_eq!(c.lambda, TrainConfig::default().lambda);
        assert_eq!(kv.get("encoder_seed"), Some("0"));
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "epsilom = 2\n").unwrap();
        assert!(resolve(train_defaults(), Some(&cfg), vec![], TRAIN_KEYS).is_err());
    }

    #[test]
    fn resolved_train_settings_round_trip() {
        let mut kv = resolve(train_defaults(), None, vec![("steps", Some("1,inf".into()))], TRAIN_KEYS).unwrap();
        let a = train_config(&mut kv).unwrap();
        let mut again = KeyValues::parse(&kv.to_text(), Path::new("m")).unwrap();
        assert_eq!(train_config(&mut again).unwrap(), a);
    }
}
