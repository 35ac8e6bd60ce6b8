use serde::{Deserialize, Serialize};

use crate::semantic_spread::PermutedItem;

/// Label shown before every option when labels are hidden.
pub const HIDDEN_LABEL: &str = "\u{2013}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Letters,
    HiddenPlaceholder,
}

/// Question, one line per option in slot order, then the answer instruction.
pub fn render_prompt(item: &PermutedItem<'_>, mode: LabelMode) -> String {
    let mut out = String::new();
    out.push_str(item.item.question.trim());
    out.push_str("\n\n");
    for (slot, &idx) in item.order.iter().enumerate() {
        match mode {
            LabelMode::Letters => {
                out.push(char::from(b'A' + slot as u8));
                out.push_str(". ");
            }
            LabelMode::HiddenPlaceholder => {
                out.push_str(HIDDEN_LABEL);
                out.push(' ');
            }
        }
        out.push_str(&item.item.options[idx]);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(match mode {
        LabelMode::Letters => "Answer with exactly one option: reply with its letter or its full text.",
        LabelMode::HiddenPlaceholder => "Answer with exactly one option: reply with its full text only.",
    });
    out
}
