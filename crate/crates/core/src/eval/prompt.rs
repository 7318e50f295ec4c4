//! Per-setting prompt templates.

pub const INDIVIDUAL_TEMPLATE: &str = include_str!("../prompts/individual.txt");
pub const GLOBAL_TEMPLATE: &str = include_str!("../prompts/global.txt");
pub const PRD_TEMPLATE: &str = include_str!("../prompts/prd.txt");

pub const SLOTS: &[&str] = &["workdir", "task_text", "env_path", "feedback"];

#[derive(Debug, Clone, Copy)]
pub struct PromptSlots<'a> {
    pub workdir: &'a str,
    pub task_text: &'a str,
    pub env_path: &'a str,
    pub feedback: &'a str,
}

impl PromptSlots<'_> {
    fn get(&self, name: &str) -> Option<&str> {
        Some(match name {
            "workdir" => self.workdir,
            "task_text" => self.task_text,
            "env_path" => self.env_path,
            "feedback" => self.feedback,
            _ => return None,
        })
    }
}

/// Substitutes known `{slot}` markers in one pass; text inserted for a slot
/// is never rescanned, and unknown braces are kept verbatim.
pub fn render(template: &str, slots: &PromptSlots<'_>) -> String {
    let mut out = String::with_capacity(template.len() + slots.task_text.len() + slots.feedback.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}').and_then(|close| slots.get(&after[..close]).map(|v| (close, v))) {
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

#[cfg(test)]
mod tests {
    use super::*;

    fn slots<'a>(task: &'a str, feedback: &'a str) -> PromptSlots<'a> {
        PromptSlots { workdir: "/w", task_text: task, env_path: "/env/bin/python", feedback }
    }

    #[test]
    fn every_template_uses_every_slot_once_or_more() {
        for t in [INDIVIDUAL_TEMPLATE, GLOBAL_TEMPLATE, PRD_TEMPLATE] {
            for s in SLOTS {
                assert!(t.contains(&format!("{{{s}}}")), "missing {s}");
            }
            let r = render(t, &slots("T", "F"));
            assert!(SLOTS.iter().all(|s| !r.contains(&format!("{{{s}}}"))));
        }
    }

    #[test]
    fn substituted_text_is_not_rescanned() {
        let r = render("a {task_text} b {feedback}", &slots("{feedback}", "x"));
        assert_eq!(r, "a {feedback} b x");
        assert_eq!(render("{unknown} {", &slots("", "")), "{unknown} {");
    }

    #[test]
    fn individual_prompt_is_exact() {
        let r = render(INDIVIDUAL_TEMPLATE, &slots("Do it.", ""));
        let expected = INDIVIDUAL_TEMPLATE
            .replace("{workdir}", "/w")
            .replace("{task_text}", "Do it.")
            .replace("{env_path}", "/env/bin/python")
            .replace("{feedback}", "");
        assert_eq!(r, expected);
        assert!(r.starts_with("You are working on a SINGLE pull request in the repository at: /w.\n"));
    }
}
