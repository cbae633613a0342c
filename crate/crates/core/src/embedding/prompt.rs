use crate::data::Turn;
use crate::error::{Error, Result};

/// Structured-tagging prompt for encoding a single step.
pub fn render_extraction_prompt(task: &str, previous: &str, current: &str) -> Result<String> {
    if task.is_empty() {
        return Err(Error::EmptyTask);
    }
    Ok(format!(
        "[TASK]\n{task}\n\n[PREVIOUS_FEEDBACK]\n{previous}\n\n[CURRENT_ACTION]\n{current}"
    ))
}

/// History-focused prompt used before the next action is known.
pub fn render_history_prompt(task: &str, turns: &[Turn]) -> Result<String> {
    if task.is_empty() {
        return Err(Error::EmptyTask);
    }
    let joined = turns
        .iter()
        .map(|t| format!("{}: {}", t.agent, t.content))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(format!("[TASK]\n{task}\n\n[HISTORY]\n{joined}"))
}
