//! Prompt templates. Built-in copies are compiled in; a directory holding files
//! of the same names overrides them one by one.

use std::path::Path;

use crate::graph::NodeInput;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub plan_initial: String,
    pub plan_subtree: String,
    pub search_query: String,
    pub refine: String,
    pub think: String,
    pub judge: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            plan_initial: include_str!("../prompts/plan_initial.txt").to_string(),
            plan_subtree: include_str!("../prompts/plan_subtree.txt").to_string(),
            search_query: include_str!("../prompts/search_query.txt").to_string(),
            refine: include_str!("../prompts/refine.txt").to_string(),
            think: include_str!("../prompts/think.txt").to_string(),
            judge: include_str!("../prompts/judge.txt").to_string(),
        }
    }
}

impl Prompts {
    /// Built-ins, with `<dir>/<name>.txt` replacing any template it provides.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut p = Self::default();
        for (name, slot) in [
            ("plan_initial", &mut p.plan_initial),
            ("plan_subtree", &mut p.plan_subtree),
            ("search_query", &mut p.search_query),
            ("refine", &mut p.refine),
            ("think", &mut p.think),
            ("judge", &mut p.judge),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(p)
    }
}

/// Replaces `{name}` for every listed name in one left-to-right pass.
/// Substituted text is never rescanned and unknown braces are left alone.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Parent outputs and evidence as a numbered text block.
pub fn format_context(input: &NodeInput) -> String {
    let mut out = String::new();
    if !input.parent_outputs.is_empty() {
        out.push_str("Results of earlier steps:\n");
        for (id, text) in &input.parent_outputs {
            out.push_str(&format!("[{id}] {}\n", text.trim()));
        }
    }
    if !input.parent_evidence.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("Evidence:\n");
        for item in input.parent_evidence.iter() {
            out.push_str(&format!(
                "[{}] ({}) {}\n",
                item.rank,
                item.source,
                item.content.trim()
            ));
        }
    }
    if out.is_empty() {
        out.push_str("No context is available yet.\n");
    }
    out
}
