//! Minimal SVG line charts for traces and envelopes.

use std::fmt::Write as _;

use crate::envelope::{build_envelope, refine_with_prior, ElementaryEnvelope, ElementaryFunction};
use crate::error::Result;
use crate::scenario::run::{PreparedScenario, Trace};

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, color: &str) -> Self {
        Self { label: label.into(), points, color: color.into(), dashed: false }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub width: f64,
    pub height: f64,
}

/// Round tick spacing giving roughly `target` intervals over `span`.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10()).ceil() as usize };
    format!("{v:.decimals$}")
}

impl Chart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            width: 900.0,
            height: 420.0,
        }
    }

    pub fn push(&mut self, s: Series) {
        self.series.push(s);
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        let pad = ((y1 - y0) * 0.05).max(1e-9 * (1.0 + y0.abs()));
        if y1 - y0 < 1e-12 {
            (x0, x1, y0 - 0.5, y1 + 0.5)
        } else {
            (x0, x1, y0 - pad, y1 + pad)
        }
    }

    pub fn render(&self) -> String {
        let (left, right, top, bottom) = (70.0, 190.0, 40.0, 50.0);
        let (w, h) = (self.width, self.height);
        let (pw, ph) = (w - left - right, h - top - bottom);
        let (x0, x1, y0, y1) = self.bounds();
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            left + pw / 2.0,
            escape(&self.title)
        );
        let xs = tick_step(x1 - x0, 8.0);
        let mut tx = (x0 / xs).ceil() * xs;
        while tx <= x1 + 1e-9 * xs {
            let px = sx(tx);
            let _ = writeln!(
                out,
                r##"<line x1="{px:.2}" y1="{top}" x2="{px:.2}" y2="{:.2}" stroke="#e5e5e5"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                top + ph,
                top + ph + 16.0,
                fmt_tick(tx, xs)
            );
            tx += xs;
        }
        let ys = tick_step(y1 - y0, 6.0);
        let mut ty = (y0 / ys).ceil() * ys;
        while ty <= y1 + 1e-9 * ys {
            let py = sy(ty);
            let _ = writeln!(
                out,
                r##"<line x1="{left}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e5e5e5"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                left + pw,
                left - 6.0,
                py + 4.0,
                fmt_tick(ty, ys)
            );
            ty += ys;
        }
        let _ = writeln!(out, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + pw / 2.0,
            h - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            top + ph / 2.0,
            top + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, s) in self.series.iter().enumerate() {
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.6"{dash} points="{}"/>"#,
                s.color,
                pts.join(" ")
            );
            let ly = top + 14.0 + 18.0 * k as f64;
            let lx = left + pw + 12.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
                lx + 24.0,
                s.color,
                lx + 30.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// State groups plotted together: ACC positions, velocities and
/// accelerations, or one chart per state otherwise.
fn state_groups(names: &[String]) -> Vec<(String, Vec<usize>)> {
    let acc = ["p_l", "v_l", "a_l", "p_e", "v_e", "a_e"];
    if names.iter().map(String::as_str).eq(acc) {
        vec![
            ("positions".into(), vec![0, 3]),
            ("velocities".into(), vec![1, 4]),
            ("accelerations".into(), vec![2, 5]),
        ]
    } else {
        names.iter().enumerate().map(|(i, n)| (format!("state_{n}"), vec![i])).collect()
    }
}

/// One SVG per figure: control interval, state groups, headway, alarms,
/// and the nonlinearity envelopes.
pub fn scenario_plots(prepared: &PreparedScenario, trace: &Trace) -> Vec<(String, String)> {
    let time = |t: usize| t as f64 * trace.t_s;
    let mut plots = Vec::new();
    let x_label = "time [s]";

    let mut control = Chart::new("Control input and NN output intervals", x_label, "u");
    for j in 0..trace.u.first().map_or(0, |u| u.len()) {
        control.push(Series::new(format!("u{j} applied"), (0..trace.horizon()).map(|t| (time(t), trace.u[t][j])).collect(), "black"));
        for (k, obs) in trace.observers.iter().enumerate() {
            let c = color(k);
            let m = obs.method.label().to_uppercase();
            let lo = obs.steps.iter().map(|s| (time(s.t), s.f_box.component(j).0)).collect();
            let hi = obs.steps.iter().map(|s| (time(s.t), s.f_box.component(j).1)).collect();
            control.push(Series::new(format!("{m} lower"), lo, c).dashed());
            control.push(Series::new(format!("{m} upper"), hi, c));
        }
    }
    plots.push(("control.svg".to_string(), control.render()));

    for (name, states) in state_groups(&trace.state_names) {
        let mut chart = Chart::new(format!("States and observer bounds: {name}"), x_label, name.clone());
        let mut k = 0;
        for &i in &states {
            let sname = &trace.state_names[i];
            chart.push(Series::new(sname.clone(), trace.x.iter().enumerate().map(|(t, x)| (time(t), x[i])).collect(), "black"));
            for obs in &trace.observers {
                let c = color(k);
                k += 1;
                let m = obs.method.label().to_uppercase();
                let lo = obs.steps.iter().map(|s| (time(s.t + 1), s.next_box.component(i).0));
                let hi = obs.steps.iter().map(|s| (time(s.t + 1), s.next_box.component(i).1));
                let first = obs.steps.first().map(|s| s.state_box.component(i));
                let lo = first.map(|f| (0.0, f.0)).into_iter().chain(lo).collect();
                let hi = first.map(|f| (0.0, f.1)).into_iter().chain(hi).collect();
                chart.push(Series::new(format!("{sname} {m} lower"), lo, c).dashed());
                chart.push(Series::new(format!("{sname} {m} upper"), hi, c));
            }
        }
        plots.push((format!("{name}.svg"), chart.render()));
    }

    if let Some(rule) = prepared.safety.headway {
        let mut chart = Chart::new("Headway and safe distance", x_label, "distance [m]");
        let c = &prepared.model.c;
        let h_true = trace.x.iter().enumerate().map(|(t, x)| (time(t), (c.row(rule.headway_output) * x)[0])).collect();
        chart.push(Series::new("h", h_true, "black"));
        for (k, obs) in trace.observers.iter().enumerate() {
            let m = obs.method.label().to_uppercase();
            let lo = obs.steps.iter().map(|s| (time(s.t + 1), s.predicted_output.component(rule.headway_output).0)).collect();
            let d = obs
                .steps
                .iter()
                .map(|s| (time(s.t + 1), rule.t_gap * s.next_box.component(rule.speed_state).1 + rule.d_still))
                .collect();
            chart.push(Series::new(format!("{m} predicted h lower"), lo, color(k)));
            chart.push(Series::new(format!("{m} d_safe (upper v)"), d, color(k)).dashed());
        }
        plots.push(("headway.svg".to_string(), chart.render()));
    }

    let mut flags = Chart::new("Fault alarms", x_label, "alarm (offset per series)");
    let mut row = 0.0;
    for (k, obs) in trace.observers.iter().enumerate() {
        let m = obs.method.label().to_uppercase();
        let act = obs.steps.iter().map(|s| (time(s.t), row + f64::from(u8::from(s.any_actuator_alarm())))).collect();
        flags.push(Series::new(format!("{m} actuator"), act, color(2 * k)));
        row += 1.5;
        let out = obs.steps.iter().map(|s| (time(s.t), row + f64::from(u8::from(s.any_output_alarm())))).collect();
        flags.push(Series::new(format!("{m} output"), out, color(2 * k + 1)));
        row += 1.5;
    }
    plots.push(("alarms.svg".to_string(), flags.render()));

    for (i, term) in prepared.terms.iter().enumerate() {
        let name = format!("envelope_{}.svg", trace.state_names.get(term.state_index).cloned().unwrap_or_else(|| i.to_string()));
        plots.push((name, envelope_chart(&format!("Envelope of g{i}"), &[("", &term.envelope)], 400).render()));
    }
    plots
}

/// Function plus upper and lower envelopes, sampled on `samples` points.
pub fn envelope_chart(title: &str, envelopes: &[(&str, &ElementaryEnvelope)], samples: usize) -> Chart {
    let mut chart = Chart::new(title, "χ", "value");
    let Some((_, first)) = envelopes.first() else { return chart };
    let (lo, hi) = first.domain;
    let grid: Vec<f64> = (0..=samples).map(|k| lo + (hi - lo) * k as f64 / samples as f64).collect();
    chart.push(Series::new(first.function.name.clone(), grid.iter().map(|&x| (x, first.eval(x))).collect(), "black"));
    for (k, (label, env)) in envelopes.iter().enumerate() {
        let c = color(k);
        let up = grid.iter().filter_map(|&x| env.upper(x).ok().map(|v| (x, v))).collect();
        let down = grid.iter().filter_map(|&x| env.lower(x).ok().map(|v| (x, v))).collect();
        let sep = if label.is_empty() { "" } else { " " };
        chart.push(Series::new(format!("upper{sep}{label}"), up, c));
        chart.push(Series::new(format!("lower{sep}{label}"), down, c).dashed());
    }
    chart
}

/// Envelopes of `f` for several partition sizes, with and without a floor
/// prior.
pub fn envelope_figure(f: &ElementaryFunction, domain: (f64, f64), hs: &[usize], floor: Option<f64>) -> Result<String> {
    let mut envs = Vec::new();
    for &h in hs {
        let env = build_envelope(f, domain, h)?;
        envs.push((format!("h={h}"), env.clone()));
        if floor.is_some() {
            envs.push((format!("h={h}, floor"), refine_with_prior(&env, floor, None)));
        }
    }
    let refs: Vec<(&str, &ElementaryEnvelope)> = envs.iter().map(|(l, e)| (l.as_str(), e)).collect();
    Ok(envelope_chart(&format!("Piecewise-linear envelopes of {}", f.name), &refs, 600).render())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_renders_valid_svg_skeleton() {
        let mut c = Chart::new("t", "x", "y");
        c.push(Series::new("a<b", vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)], "red"));
        let svg = c.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(tick_step(10.0, 5.0), 2.0);
        assert_eq!(tick_step(1.0, 8.0), 0.1);
        assert_eq!(tick_step(700.0, 6.0), 100.0);
    }

    #[test]
    fn envelope_figure_has_all_series() {
        let svg = envelope_figure(&ElementaryFunction::square(), (-2.0, 3.0), &[1, 2, 4], Some(0.0)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1 + 2 * 6);
    }
}
