//! Positive/negative prompt templates per pathology.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

/// Map pathology -> templates. Every pathology carries at least one positive
/// and one negative template; the first positive template doubles as the
/// localization prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptSet(pub BTreeMap<String, PromptTemplates>);

impl PromptSet {
    pub fn validate(&self) -> Result<()> {
        for (k, t) in &self.0 {
            if t.positive.is_empty() || t.negative.is_empty() {
                return Err(Error::validation(format!(
                    "pathology {k:?} needs at least one positive and one negative template"
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, pathology: &str) -> Option<&PromptTemplates> {
        self.0.get(pathology)
    }

    pub fn pathologies(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(|s| s.as_str())
    }

    /// The canonical localization prompt for a pathology.
    pub fn localization_prompt(&self, pathology: &str) -> Result<&str> {
        self.get(pathology)
            .map(|t| t.positive[0].as_str())
            .ok_or_else(|| Error::validation(format!("unknown pathology {pathology:?}")))
    }
}

pub fn load_prompts(path: &Path) -> Result<PromptSet> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let set: PromptSet =
        serde_json::from_str(&raw).map_err(|e| Error::validation(e.to_string()))?;
    set.validate()?;
    Ok(set)
}

pub fn save_prompts(set: &PromptSet, path: &Path) -> Result<()> {
    set.validate()?;
    let mut buf = serde_json::to_vec_pretty(set).map_err(|e| Error::validation(e.to_string()))?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_negative_rejected() {
        let set = PromptSet(
            [(
                "p".to_string(),
                PromptTemplates {
                    positive: vec!["a p".into()],
                    negative: vec![],
                },
            )]
            .into(),
        );
        assert!(set.validate().is_err());
    }

    #[test]
    fn round_trip() {
        let d = std::env::temp_dir().join(format!("promptloc-prompts-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        let set = PromptSet(
            [(
                "red circle".to_string(),
                PromptTemplates {
                    positive: vec!["a red circle".into()],
                    negative: vec!["no red circle".into()],
                },
            )]
            .into(),
        );
        let p = d.join("prompts.json");
        save_prompts(&set, &p).unwrap();
        assert_eq!(load_prompts(&p).unwrap(), set);
    }
}
