//! Markdown tables and an SVG bar chart for original-versus-contrast runs.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::eval::{ConsistencyReport, EvalReport, PromptMode};

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", 100.0 * v))
}

/// Accuracy (%) per responder and prompt configuration, with
/// `correct/answered` and any unanswered count.
pub fn accuracy_table(report: &EvalReport) -> String {
    let configs: Vec<(PromptMode, usize)> = report.configurations().into_iter().collect();
    let responders: BTreeSet<&str> = report.slices.iter().map(|s| s.responder.as_str()).collect();
    let mut out = format!("### Accuracy on `{}`\n\n| responder |", report.eval_set);
    for (mode, k) in &configs {
        let _ = write!(out, " {mode} {k}-shot |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(configs.len()));
    out.push('\n');
    for r in responders {
        let _ = write!(out, "| {r} |");
        for (mode, k) in &configs {
            let cell = report
                .slices
                .iter()
                .find(|s| s.responder == r && s.mode == *mode && s.k_shots == *k)
                .map(|s| {
                    let t = &s.overall;
                    let mut c = format!("{} ({}/{})", pct(t.accuracy), t.correct, t.answered());
                    if t.unanswered > 0 {
                        let _ = write!(c, ", {} unanswered", t.unanswered);
                    }
                    c
                })
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}

/// Tau by prompt mode (rows) and shot count (columns); published values in
/// brackets where they exist.
pub fn tau_matrix(report: &ConsistencyReport) -> String {
    let modes: BTreeSet<PromptMode> = report.groups.iter().map(|g| g.mode).collect();
    let shots: BTreeSet<usize> = report.groups.iter().map(|g| g.k_shots).collect();
    let mut out = String::from("### Kendall tau-b, original vs contrast\n\n| mode |");
    for k in &shots {
        let _ = write!(out, " {k}-shot |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(shots.len()));
    out.push('\n');
    for mode in modes {
        let _ = write!(out, "| {mode} |");
        for k in &shots {
            let cell = match report.group(mode, *k) {
                None => "-".to_string(),
                Some(g) => {
                    let mut c = match g.tau {
                        Some(t) => format!("{t:.3}"),
                        None => "undefined".to_string(),
                    };
                    if let Some(r) = g.reference_tau {
                        let _ = write!(c, " [published {r:.2}]");
                    }
                    c
                }
            };
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}

/// Rank changes per responder, flagged rows marked.
pub fn rank_delta_listing(report: &ConsistencyReport) -> String {
    let mut out = format!(
        "### Rank changes (flag when the rank worsens by more than {})\n",
        report.max_drop
    );
    for g in &report.groups {
        let _ = write!(
            out,
            "\n#### {} {}-shot\n\n| responder | original | rank | contrast | rank | drop | flag |\n|---|---:|---:|---:|---:|---:|---|\n",
            g.mode, g.k_shots
        );
        if let Some(note) = &g.tau_note {
            let _ = writeln!(out, "<!-- tau undefined: {note} -->");
        }
        let mut rows: Vec<_> = g.deltas.iter().collect();
        rows.sort_by(|a, b| a.original_rank.cmp(&b.original_rank).then(a.responder.cmp(&b.responder)));
        for d in rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {:+} | {} |",
                d.responder,
                pct(Some(d.original_accuracy)),
                d.original_rank,
                pct(Some(d.contrast_accuracy)),
                d.contrast_rank,
                d.drop,
                if d.flagged { "choices-only cheater?" } else { "" }
            );
        }
    }
    out
}

/// Full markdown report.
pub fn render_markdown(
    original: &EvalReport,
    contrast: &EvalReport,
    consistency: &ConsistencyReport,
) -> String {
    let mut out = String::from("# Original vs contrast set\n\n");
    out.push_str(&accuracy_table(original));
    out.push('\n');
    out.push_str(&accuracy_table(contrast));
    out.push('\n');
    out.push_str(&tau_matrix(consistency));
    out.push('\n');
    out.push_str(&rank_delta_listing(consistency));
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 50.0;

fn panel(
    svg: &mut String,
    x0: f64,
    title: &str,
    bars: &[(&str, f64)],
    chance: Option<f64>,
) {
    let y0 = 40.0;
    let _ = write!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        x0 + PANEL_W / 2.0,
        escape(title)
    );
    let _ = write!(
        svg,
        r##"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="#444"/>"##
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = y0 + PANEL_H * (1.0 - v);
        let _ = write!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="#444"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{:.0}</text>"##,
            x0 - 4.0,
            x0 - 6.0,
            y + 3.0,
            v * 100.0
        );
    }
    let slot = PANEL_W / bars.len().max(1) as f64;
    for (i, (name, acc)) in bars.iter().enumerate() {
        let h = PANEL_H * acc.clamp(0.0, 1.0);
        let x = x0 + slot * i as f64 + slot * 0.15;
        let _ = write!(
            svg,
            r##"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="#4878a8"><title>{}: {:.1}%</title></rect>"##,
            y0 + PANEL_H - h,
            slot * 0.7,
            escape(name),
            acc * 100.0
        );
        let lx = x + slot * 0.35;
        let ly = y0 + PANEL_H + 10.0;
        let _ = write!(
            svg,
            r#"<text x="{lx:.1}" y="{ly:.1}" font-size="10" text-anchor="end" transform="rotate(-40 {lx:.1} {ly:.1})">{}</text>"#,
            escape(name)
        );
    }
    if let Some(c) = chance {
        let y = y0 + PANEL_H * (1.0 - c);
        let _ = write!(
            svg,
            r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#b04040" stroke-dasharray="5,4"/>"##,
            x0 + PANEL_W
        );
    }
}

/// Side-by-side bars: original set on the left, contrast set on the right,
/// responders in the same order on both (by original accuracy). The dashed
/// line on the right marks the 50% a question-blind responder must get.
pub fn bar_chart_svg(
    original: &EvalReport,
    contrast: &EvalReport,
    mode: PromptMode,
    k_shots: usize,
) -> String {
    let a = original.accuracies(mode, k_shots);
    let b = contrast.accuracies(mode, k_shots);
    let mut names: Vec<&str> = a.keys().filter(|r| b.contains_key(*r)).map(|s| s.as_str()).collect();
    names.sort_by(|x, y| a[*y].total_cmp(&a[*x]).then(x.cmp(y)));
    let left: Vec<(&str, f64)> = names.iter().map(|n| (*n, a[*n])).collect();
    let right: Vec<(&str, f64)> = names.iter().map(|n| (*n, b[*n])).collect();

    let width = 2.0 * PANEL_W + 3.0 * MARGIN;
    let height = PANEL_H + 140.0;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif">"#
    );
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(
        &mut svg,
        MARGIN,
        &format!("{} ({mode}, {k_shots}-shot)", original.eval_set),
        &left,
        None,
    );
    panel(
        &mut svg,
        2.0 * MARGIN + PANEL_W,
        &format!("{} ({mode}, {k_shots}-shot)", contrast.eval_set),
        &right,
        Some(0.5),
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{rank_consistency_report, ConsistencyOptions, EvalOptions, EvalSlice, Tally};
    use std::collections::BTreeMap;

    fn report(name: &str, scores: &[(&str, usize)]) -> EvalReport {
        let mut r = EvalReport::new(name, "fp", &[]);
        for (resp, correct) in scores {
            r.push(EvalSlice {
                responder: resp.to_string(),
                mode: PromptMode::Full,
                k_shots: 5,
                prompt_seed: 0,
                options: EvalOptions::default(),
                exemplar_fingerprint: String::new(),
                overall: Tally {
                    total: 10,
                    correct: *correct,
                    incorrect: 10 - correct,
                    accuracy: Some(*correct as f64 / 10.0),
                    ..Tally::default()
                },
                per_source: BTreeMap::new(),
                items: Vec::new(),
            });
        }
        r
    }

    #[test]
    fn identical_reports_give_unit_tau_table() {
        let r = report("orig", &[("a<b", 9), ("c", 5)]);
        let c = rank_consistency_report(&r, &r, &ConsistencyOptions::default()).unwrap();
        let m = tau_matrix(&c);
        assert!(m.contains("| full | 1.000 [published 0.88] |"), "{m}");
        let md = render_markdown(&r, &r, &c);
        assert!(md.contains("| a<b | 90.0 (9/10) |"));
        assert!(md.contains("| +0 |"));
        let svg = bar_chart_svg(&r, &r, PromptMode::Full, 5);
        assert!(svg.starts_with("<svg") && svg.contains("a&lt;b"));
    }
}
