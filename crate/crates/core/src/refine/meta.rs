//! Instruction text sent to the prompt-proposing model.

use crate::backends::ChatMessage;
use crate::semantic::DomainSpec;

/// An exemplar as shown to the proposer: the prompt and its objective (`None` when infeasible).
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub prompt: String,
    pub objective: Option<f64>,
}

/// Role description, numbered steps, the template prefix and the exemplar block.
pub fn render_meta_prompt(domain: &DomainSpec, exemplars: &[Exemplar]) -> Vec<ChatMessage> {
    let label = &domain.label;
    let prefix = domain.template_prefix();
    let role = format!(
        "You are an optimizer that writes text prompts for a text-to-3D generator. The goal is a \
         {label} design with low aerodynamic drag that still clearly looks like a {label} and \
         differs in shape from ordinary {label} designs. Every prompt you write is turned into a 3D \
         object and scored; lower scores are better."
    );
    let mut text = String::new();
    text.push_str("Step 1. Read the exemplars below. They are sorted from best to worst score.\n");
    text.push_str("Step 2. Work out which shape words lead to lower scores.\n");
    text.push_str("Step 3. Write one new prompt that should score lower than every exemplar.\n\n");
    text.push_str(&format!("The prompt must complete the template \"{prefix}\".\n"));
    text.push_str("The prompt must end with a full stop.\n");
    text.push_str("Reply with the prompt only.\n\n");
    if exemplars.is_empty() {
        text.push_str("Exemplars: none yet.\n");
    } else {
        text.push_str("Exemplars (prompt, score):\n");
        for (i, e) in exemplars.iter().enumerate() {
            let score = match e.objective {
                Some(v) => format!("{v:.4}"),
                None => "infeasible".into(),
            };
            text.push_str(&format!("{}. \"{}\" ({score})\n", i + 1, e.prompt.replace('\n', " ")));
        }
    }
    vec![ChatMessage { role: "system".into(), text: role }, ChatMessage::user(text)]
}

/// The fixed instruction used by the no-feedback baseline.
pub fn baseline_meta_prompt(domain: &DomainSpec) -> Vec<ChatMessage> {
    vec![ChatMessage::user(format!(
        "Create a prompt that starts with \"{}\" and ends with a full stop.",
        domain.template_prefix()
    ))]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_prompt_carries_template_and_exemplars() {
        let d = DomainSpec::default();
        let ex = vec![
            Exemplar { prompt: "A Car in the shape of a wedge.".into(), objective: Some(0.51234) },
            Exemplar { prompt: "A Car in the shape of a box.".into(), objective: None },
        ];
        let msgs = render_meta_prompt(&d, &ex);
        let all: String = msgs.iter().map(|m| m.text.clone()).collect();
        assert!(all.contains("A Car in the shape of\""));
        assert!(all.contains("1. \"A Car in the shape of a wedge.\" (0.5123)"));
        assert!(all.contains("2. \"A Car in the shape of a box.\" (infeasible)"));
        let empty: String = render_meta_prompt(&d, &[]).iter().map(|m| m.text.clone()).collect();
        assert!(empty.contains("A Car in the shape of") && empty.contains("Car"));
        let base = &baseline_meta_prompt(&d)[0].text;
        assert_eq!(base, "Create a prompt that starts with \"A Car in the shape of\" and ends with a full stop.");
    }
}
