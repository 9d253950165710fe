use std::fmt::Write;

use super::AttributionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Ansi,
    Html,
}

const LEVELS: u32 = 5;

/// Intensity level in `0..=LEVELS` of `score` relative to the largest
/// absolute score; zero means unstyled.
fn level(score: f64, max_abs: f64) -> u32 {
    if max_abs == 0.0 || score == 0.0 {
        return 0;
    }
    ((score.abs() / max_abs) * LEVELS as f64).ceil().clamp(1.0, LEVELS as f64) as u32
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders tokens with background shading: red for positive scores, blue for
/// negative ones, stronger for larger magnitudes.
pub fn render_attributions(record: &AttributionRecord, format: RenderFormat) -> String {
    let max_abs = record
        .token_scores
        .iter()
        .map(|t| t.score.abs())
        .fold(0.0, f64::max);
    let mut out = String::new();
    for (i, ts) in record.token_scores.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let lvl = level(ts.score, max_abs);
        match format {
            RenderFormat::Ansi if lvl == 0 => out.push_str(&ts.token),
            RenderFormat::Ansi => {
                // fade from white towards pure red/blue
                let fade = 255 - (lvl * 255 / LEVELS) as u8;
                let (r, g, b) = if ts.score > 0.0 { (255, fade, fade) } else { (fade, fade, 255) };
                let _ = write!(out, "\x1b[48;2;{r};{g};{b}m\x1b[30m{}\x1b[0m", ts.token);
            }
            RenderFormat::Html if lvl == 0 => out.push_str(&html_escape(&ts.token)),
            RenderFormat::Html => {
                let (class, rgb) = if ts.score > 0.0 { ("pos", "255,0,0") } else { ("neg", "0,0,255") };
                let alpha = lvl as f64 / LEVELS as f64;
                let _ = write!(
                    out,
                    "<span class=\"{class}-{lvl}\" style=\"background-color: rgba({rgb},{alpha:.2})\" title=\"{:.4}\">{}</span>",
                    ts.score,
                    html_escape(&ts.token)
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainer::TokenScore;

    fn record(scores: &[(&str, f64)]) -> AttributionRecord {
        AttributionRecord {
            document_id: "d".into(),
            target_class: "t".into(),
            token_scores: scores
                .iter()
                .enumerate()
                .map(|(i, (w, s))| TokenScore::from((i, w.to_string(), *s)))
                .collect(),
        }
    }

    #[test]
    fn zero_scores_are_plain() {
        let r = record(&[("a", 0.0), ("b", 0.0)]);
        assert_eq!(render_attributions(&r, RenderFormat::Ansi), "a b");
        assert_eq!(render_attributions(&r, RenderFormat::Html), "a b");
    }

    #[test]
    fn single_positive_token_gets_max_intensity() {
        let r = record(&[("i", 0.0), ("hate", 0.9)]);
        let html = render_attributions(&r, RenderFormat::Html);
        assert!(html.contains("class=\"pos-5\""));
        assert!(html.starts_with("i <span"));
        let ansi = render_attributions(&r, RenderFormat::Ansi);
        assert!(ansi.contains("\x1b[48;2;255;0;0m"));
    }

    #[test]
    fn mixed_signs_use_both_markers() {
        let r = record(&[("hate", 0.9), ("love", -0.3), ("x", 0.05)]);
        let html = render_attributions(&r, RenderFormat::Html);
        assert!(html.contains("pos-5"));
        assert!(html.contains("neg-2"));
        assert!(html.contains("pos-1"));
        assert_eq!(html, render_attributions(&r, RenderFormat::Html));
    }

    #[test]
    fn html_is_escaped() {
        let r = record(&[("<b>", 1.0)]);
        assert!(render_attributions(&r, RenderFormat::Html).contains("&lt;b&gt;"));
    }
}
