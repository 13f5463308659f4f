//! Cross-view fusion of the per-view selections into one annotation.
//!
//! Front and back carry identity: their texts are concatenated, boosted by
//! `w_fb`, and the first sentence becomes the annotation's head. The best
//! side/top/bottom selection supplies the supplementary detail.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Viewpoint;

pub const DEFAULT_FB_WEIGHT: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("selections lack a {0} view")]
    MissingFrontOrBack(Viewpoint),
    #[error("selections lack view(s): {0:?}")]
    MissingView(Vec<Viewpoint>),
    #[error("text is empty")]
    EmptyText,
    #[error("front/back weight must be finite and >= 1, got {0}")]
    InvalidWeight(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSelection {
    pub view: Viewpoint,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontBack {
    pub text: String,
    /// Priority clamped to `[0, 1]`.
    pub score: f64,
    /// `w_fb * mean(front, back)` before clamping.
    pub raw_priority: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalAnnotation {
    pub core_sentence: String,
    pub supplementary: String,
    pub full_text: String,
    pub score_fb: f64,
    pub fb_priority_raw: f64,
    pub other_view: Viewpoint,
    pub score_other: f64,
    pub score_global: f64,
    pub per_view: Vec<ViewSelection>,
}

fn find(selections: &[ViewSelection], view: Viewpoint) -> Option<&ViewSelection> {
    selections.iter().find(|s| s.view == view)
}

pub fn prioritize_front_back(selections: &[ViewSelection], w_fb: f64) -> Result<FrontBack, SynthesisError> {
    if !(w_fb.is_finite() && w_fb >= 1.0) {
        return Err(SynthesisError::InvalidWeight(w_fb));
    }
    let front = find(selections, Viewpoint::Front).ok_or(SynthesisError::MissingFrontOrBack(Viewpoint::Front))?;
    let back = find(selections, Viewpoint::Back).ok_or(SynthesisError::MissingFrontOrBack(Viewpoint::Back))?;
    let raw_priority = w_fb * (front.score + back.score) / 2.0;
    Ok(FrontBack {
        text: format!("{} {}", front.text.trim(), back.text.trim()).trim().to_string(),
        score: raw_priority.clamp(0.0, 1.0),
        raw_priority,
    })
}

/// First sentence of `text`. A sentence ends at `.`, `!` or `?` followed by
/// whitespace or end of text, unless the terminator follows a lone letter
/// (an initial such as `J.`).
pub fn extract_core_sentence(text: &str) -> Result<String, SynthesisError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(SynthesisError::EmptyText);
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(pos, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let at_boundary = chars.get(k + 1).is_none_or(|&(_, n)| n.is_whitespace());
        if !at_boundary {
            continue;
        }
        let initial = k >= 1
            && chars[k - 1].1.is_alphabetic()
            && (k == 1 || !chars[k - 2].1.is_alphanumeric());
        if c == '.' && initial {
            continue;
        }
        return Ok(text[..pos + c.len_utf8()].to_string());
    }
    Ok(text.to_string())
}

/// Best side/top/bottom selection: highest score, then longest text, then
/// canonical view order.
fn pick_other(selections: &[ViewSelection]) -> Option<&ViewSelection> {
    let mut best: Option<&ViewSelection> = None;
    for view in Viewpoint::SIDES {
        let Some(s) = find(selections, view) else { continue };
        best = match best {
            None => Some(s),
            Some(b) => {
                let len = |x: &ViewSelection| x.text.trim().chars().count();
                if s.score > b.score || (s.score == b.score && len(s) > len(b)) {
                    Some(s)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

pub fn assemble_global(selections: &[ViewSelection], w_fb: f64) -> Result<GlobalAnnotation, SynthesisError> {
    let missing: Vec<Viewpoint> = Viewpoint::ALL
        .into_iter()
        .filter(|v| find(selections, *v).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(SynthesisError::MissingView(missing));
    }
    let fb = prioritize_front_back(selections, w_fb)?;
    let core_sentence = extract_core_sentence(&fb.text)?;
    let other = pick_other(selections).expect("side views present");
    let supplementary = other.text.trim().to_string();
    let full_text = format!("{core_sentence} {supplementary}").trim().to_string();
    let mut per_view: Vec<ViewSelection> = selections.to_vec();
    per_view.sort_by_key(|s| s.view);
    Ok(GlobalAnnotation {
        score_global: (fb.score + other.score) / 2.0,
        core_sentence,
        supplementary,
        full_text,
        score_fb: fb.score,
        fb_priority_raw: fb.raw_priority,
        other_view: other.view,
        score_other: other.score,
        per_view,
    })
}
