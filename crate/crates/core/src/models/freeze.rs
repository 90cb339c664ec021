use super::swin::ToySwinConfig;
use super::ModelError;
use crate::engine::{EngineError, ParamStore};

/// Which transformer parameters receive updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    #[default]
    AllTrainable,
    /// Only the last block of the last stage keeps its attention projections
    /// and layer norms trainable (its MLP stays frozen), plus the head.
    PaperPolicy,
}

/// Names of the parameters left trainable by [`FreezePolicy::PaperPolicy`].
pub fn paper_policy_trainable(cfg: &ToySwinConfig) -> Vec<String> {
    let stage = cfg.depths.len() - 1;
    let block = cfg.depths[stage] - 1;
    let pre = format!("stages.{stage}.blocks.{block}");
    let mut names: Vec<String> = [
        "norm1.gamma",
        "norm1.beta",
        "attn.qkv.w",
        "attn.qkv.b",
        "attn.proj.w",
        "attn.proj.b",
        "norm2.gamma",
        "norm2.beta",
    ]
    .iter()
    .map(|n| format!("{pre}.{n}"))
    .collect();
    if cfg.head_hidden > 0 {
        names.push("head.hidden.w".into());
        names.push("head.hidden.b".into());
    }
    names.push("head.out.w".into());
    names.push("head.out.b".into());
    names
}

/// Set every parameter's trainable flag according to `policy`.
pub fn apply_freeze(store: &mut ParamStore<f64>, cfg: &ToySwinConfig, policy: FreezePolicy) -> Result<(), ModelError> {
    match policy {
        FreezePolicy::AllTrainable => store.set_all_trainable(true),
        FreezePolicy::PaperPolicy => {
            store.set_all_trainable(false);
            for name in paper_policy_trainable(cfg) {
                store
                    .get_mut(&name)
                    .ok_or_else(|| EngineError::UnknownParam(name.clone()))?
                    .trainable = true;
            }
        }
    }
    Ok(())
}
