//! Versioned prompt templates. Placeholders are written `{{name}}`.

use std::path::Path;

use crate::error::{Error, Result};

pub const TEMPLATE_VERSION: &str = "v1";

const EXPAND_V1: &str = include_str!("../data/prompts/expand_v1.txt");
const LABEL_V1: &str = include_str!("../data/prompts/label_v1.txt");
const VERIFY_V1: &str = include_str!("../data/prompts/verify_v1.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub expand: String,
    pub label: String,
    pub verify: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            expand: EXPAND_V1.to_owned(),
            label: LABEL_V1.to_owned(),
            verify: VERIFY_V1.to_owned(),
        }
    }
}

impl PromptTemplates {
    /// Loads `expand.txt`, `label.txt` and `verify.txt` from `dir`; any file
    /// that is absent keeps the built-in template.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("expand.txt", &mut t.expand),
            ("label.txt", &mut t.label),
            ("verify.txt", &mut t.verify),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(t)
    }
}

/// Substitutes `{{key}}` placeholders. Unknown placeholders are left as-is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_owned();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}
