//! Tick-panel rendering of patrol traces. Panels are drawn straight from the
//! per-tick annotations a trace already carries; nothing about the episode is
//! recomputed here.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ep::{EpisodeTrace, Tick, UtilityTag};
use crate::patrol::{AlarmView, ModeView, PatrolAnnotation, PatrolObs};

pub type PatrolTrace = EpisodeTrace<PatrolAnnotation, PatrolObs>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderFormat {
    Ascii,
    Svg,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("window [{start}, {start}+{panels}) is outside the trace (0..{len})")]
    WindowOutOfRange { start: usize, panels: usize, len: usize },
    #[error("a window needs at least one panel")]
    EmptyWindow,
}

/// Total output width of one ASCII panel row, padding included.
pub const ASCII_COLUMNS: usize = 80;

fn mode_label(mode: &ModeView) -> String {
    match mode {
        ModeView::PatrolNav => "nav".to_string(),
        ModeView::Handling { phase, remaining, duration } => {
            format!("h{} {}/{}", phase + 1, remaining, duration)
        }
        ModeView::AlarmNav => "anav".to_string(),
        ModeView::Resolving { remaining, duration } => format!("res {}/{}", remaining, duration),
    }
}

fn alarm_label(alarm: &Option<AlarmView>) -> String {
    match alarm {
        Some(a) => a.deadline_remaining.to_string(),
        None => "--".to_string(),
    }
}

fn ascii_panel(ann: &PatrolAnnotation, tick: Tick) -> Vec<String> {
    let g = ann.grid_size as usize;
    let w = g.max(10);
    let border = format!("+{}+", "-".repeat(w));
    let mut lines = Vec::with_capacity(g + 6);
    lines.push(border.clone());
    lines.push(format!("|tick{:>width$}|", tick.0, width = w - 4));
    for y in 0..ann.grid_size {
        let mut row = String::with_capacity(w);
        for x in 0..ann.grid_size {
            let cell = if ann.status.pos == (x, y) {
                'A'
            } else if ann.status.alarm.map(|a| a.pos) == Some((x, y)) {
                '!'
            } else if ann.checkpoints.contains(&(x, y)) {
                '#'
            } else {
                '.'
            };
            row.push(cell);
        }
        lines.push(format!("|{row:<w$}|"));
    }
    lines.push(format!("|{:<w$}|", mode_label(&ann.status.mode)));
    lines.push(format!("|alarm{:>width$}|", alarm_label(&ann.status.alarm), width = w - 5));
    lines.push(border);
    lines
}

fn ascii_window(trace: &PatrolTrace, start: usize, panels: usize) -> String {
    let panel_lines: Vec<Vec<String>> = (start..start + panels)
        .map(|i| ascii_panel(&trace.ticks[i].annotation, trace.ticks[i].tick))
        .collect();
    let panel_width = panel_lines[0][0].len();
    let per_row = ((ASCII_COLUMNS + 1) / (panel_width + 1)).max(1);
    let mut out = String::new();
    for chunk in panel_lines.chunks(per_row) {
        let height = chunk[0].len();
        for line_ix in 0..height {
            let mut line = String::with_capacity(ASCII_COLUMNS);
            for (k, panel) in chunk.iter().enumerate() {
                if k > 0 {
                    line.push(' ');
                }
                line.push_str(&panel[line_ix]);
            }
            while line.len() < ASCII_COLUMNS {
                line.push(' ');
            }
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

fn mode_color(mode: &ModeView) -> &'static str {
    match mode {
        ModeView::PatrolNav => "#4a90d9",
        ModeView::Handling { .. } => "#47a025",
        ModeView::AlarmNav => "#e8a33d",
        ModeView::Resolving { .. } => "#d03a3a",
    }
}

const CELL: usize = 16;
const SVG_PAD: usize = 8;
const SVG_HEADER_H: usize = 18;
const SVG_FOOTER_H: usize = 34;

fn svg_panel(doc: &mut String, ann: &PatrolAnnotation, tick: Tick, x0: usize) {
    let g = ann.grid_size as usize;
    let grid_px = g * CELL;
    let top = SVG_PAD + SVG_HEADER_H;
    let _ = writeln!(
        doc,
        r#"<g transform="translate({x0},0)"><text x="{}" y="{}" font-family="monospace" font-size="12" text-anchor="middle">tick {}</text>"#,
        SVG_PAD + grid_px / 2,
        SVG_PAD + 12,
        tick.0
    );
    let _ = writeln!(
        doc,
        r##"<rect x="{SVG_PAD}" y="{top}" width="{grid_px}" height="{grid_px}" fill="#fbfbf8" stroke="#888"/>"##
    );
    for i in 1..g {
        let p = SVG_PAD + i * CELL;
        let _ = writeln!(
            doc,
            r##"<line x1="{p}" y1="{top}" x2="{p}" y2="{}" stroke="#ddd"/><line x1="{SVG_PAD}" y1="{}" x2="{}" y2="{}" stroke="#ddd"/>"##,
            top + grid_px,
            top + i * CELL,
            SVG_PAD + grid_px,
            top + i * CELL
        );
    }
    for &(cx, cy) in &ann.checkpoints {
        let _ = writeln!(
            doc,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#b9b9b0"/>"##,
            SVG_PAD + cx as usize * CELL + 3,
            top + cy as usize * CELL + 3,
            CELL - 6,
            CELL - 6
        );
    }
    if let Some(alarm) = &ann.status.alarm {
        let (ax, ay) = alarm.pos;
        let x = SVG_PAD + ax as usize * CELL + CELL / 2;
        let y = top + ay as usize * CELL;
        let _ = writeln!(
            doc,
            r##"<polygon points="{x},{} {},{} {},{}" fill="#d03a3a"/>"##,
            y + 3,
            x - 5,
            y + CELL - 3,
            x + 5,
            y + CELL - 3
        );
    }
    let (px, py) = ann.status.pos;
    let _ = writeln!(
        doc,
        r#"<circle cx="{}" cy="{}" r="{}" fill="{}"/>"#,
        SVG_PAD + px as usize * CELL + CELL / 2,
        top + py as usize * CELL + CELL / 2,
        CELL / 2 - 3,
        mode_color(&ann.status.mode)
    );
    let label_y = top + grid_px + 14;
    let _ = writeln!(
        doc,
        r#"<text x="{SVG_PAD}" y="{label_y}" font-family="monospace" font-size="11" fill="{}">{}</text>"#,
        mode_color(&ann.status.mode),
        mode_label(&ann.status.mode)
    );
    let _ = writeln!(
        doc,
        r#"<text x="{SVG_PAD}" y="{}" font-family="monospace" font-size="11">alarm {}</text>"#,
        label_y + 14,
        alarm_label(&ann.status.alarm)
    );
    let _ = writeln!(doc, "</g>");
}

fn svg_window(trace: &PatrolTrace, start: usize, panels: usize) -> String {
    let g = trace.ticks[start].annotation.grid_size as usize;
    let panel_w = g * CELL + 2 * SVG_PAD;
    let panel_h = SVG_PAD + SVG_HEADER_H + g * CELL + SVG_FOOTER_H;
    let mut doc = String::new();
    let _ = writeln!(
        doc,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{panel_h}" viewBox="0 0 {} {panel_h}">"#,
        panel_w * panels,
        panel_w * panels
    );
    for (k, i) in (start..start + panels).enumerate() {
        svg_panel(&mut doc, &trace.ticks[i].annotation, trace.ticks[i].tick, k * panel_w);
    }
    doc.push_str("</svg>\n");
    doc
}

/// Renders `n_panels` consecutive ticks starting at `start_tick`, one panel
/// per tick, drawn side by side. Output bytes are a pure function of the
/// trace window.
pub fn render_window(
    trace: &PatrolTrace,
    start_tick: usize,
    n_panels: usize,
    format: RenderFormat,
) -> Result<String, RenderError> {
    if n_panels == 0 {
        return Err(RenderError::EmptyWindow);
    }
    if start_tick + n_panels > trace.ticks.len() {
        return Err(RenderError::WindowOutOfRange {
            start: start_tick,
            panels: n_panels,
            len: trace.ticks.len(),
        });
    }
    Ok(match format {
        RenderFormat::Ascii => ascii_window(trace, start_tick, n_panels),
        RenderFormat::Svg => svg_window(trace, start_tick, n_panels),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindCriterion {
    /// First tick charged an interruption cost.
    FirstInterruption,
    /// First tick with an active alarm while a checkpoint phase is running.
    FirstAlarmDuringHandling,
}

/// Earliest tick of the trace matching the criterion.
pub fn find_first_event(trace: &PatrolTrace, criterion: FindCriterion) -> Option<Tick> {
    trace
        .ticks
        .iter()
        .find(|t| match criterion {
            FindCriterion::FirstInterruption => {
                t.utilities.iter().any(|u| u.tag == UtilityTag::InterruptCost)
            }
            FindCriterion::FirstAlarmDuringHandling => {
                t.annotation.status.alarm.is_some()
                    && matches!(t.annotation.status.mode, ModeView::Handling { .. })
            }
        })
        .map(|t| t.tick)
}
