use std::fmt;

use super::GopModel;

/// One broken invariant. `anchor` is `None` for model-wide problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub anchor: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.anchor {
            Some(i) => write!(f, "anchor {i}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, anchor: Option<usize>, field: &'static str, message: impl Into<String>) {
        self.violations.push(Violation {
            anchor,
            field,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

fn all_finite(values: &[f32]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Checks every model invariant and reports each violation with its anchor.
pub fn validate(model: &GopModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let cfg = &model.config;
    if let Err(e) = cfg.check() {
        report.push(None, "config", e.to_string());
        return report;
    }
    if model.anchors.len() != cfg.n_anchors {
        report.push(
            None,
            "anchors",
            format!("expected {} anchors, found {}", cfg.n_anchors, model.anchors.len()),
        );
    }
    if model.streams.len() != model.anchors.len() {
        report.push(
            None,
            "streams",
            format!("{} streams for {} anchors", model.streams.len(), model.anchors.len()),
        );
    }
    if let Err(e) = model.weights.check(cfg) {
        report.push(None, "weights", e.to_string());
    }

    for (i, a) in model.anchors.iter().enumerate() {
        let at = Some(i);
        if !all_finite(&a.position) {
            report.push(at, "x", "non-finite position");
        }
        if !all_finite(&a.attr_scale) || a.attr_scale.iter().any(|s| *s <= 0.0) {
            report.push(at, "S1", "scaling factor must be finite and positive");
        }
        if !all_finite(&a.offset_scale) {
            report.push(at, "S2", "non-finite offset scale");
        }
        if a.offsets.len() != cfg.gaussians_per_anchor {
            report.push(
                at,
                "offsets",
                format!("expected {} offsets, found {}", cfg.gaussians_per_anchor, a.offsets.len()),
            );
        }
        if a.offsets.iter().any(|o| !all_finite(o)) {
            report.push(at, "offsets", "non-finite offset");
        }
        for (field, m) in [("m_de", a.m_de), ("m_knn", a.m_knn), ("m_dy", a.m_dy)] {
            if !(0.0..=1.0).contains(&m) {
                report.push(at, field, format!("{m} outside [0, 1]"));
            }
        }
        if a.feature.len() != cfg.feature_channels {
            report.push(
                at,
                "f",
                format!("expected {} channels, found {}", cfg.feature_channels, a.feature.len()),
            );
        }
        if !all_finite(&a.feature) {
            report.push(at, "f", "non-finite feature value");
        }
        if model.quantized && a.feature.iter().any(|v| v.fract() != 0.0) {
            report.push(at, "f", "quantized model holds a non-integer feature");
        }
    }

    for (i, s) in model.streams.iter().enumerate() {
        let at = Some(i);
        if s.channels != cfg.stream_channels || s.values.len() != cfg.frames * cfg.stream_channels {
            report.push(
                at,
                "stream",
                format!(
                    "expected {}x{} values, found {} with {} channels",
                    cfg.frames,
                    cfg.stream_channels,
                    s.values.len(),
                    s.channels
                ),
            );
        }
        if !all_finite(&s.values) {
            report.push(at, "stream", "non-finite stream value");
        }
        if !s.present && !s.is_zero() {
            report.push(at, "stream", "pruned stream (present=false) holds nonzero values");
        }
        if model.quantized && s.values.iter().any(|v| v.fract() != 0.0) {
            report.push(at, "stream", "quantized model holds a non-integer stream value");
        }
        if let Some(a) = model.anchors.get(i) {
            if a.m_de == 0.0 && s.present {
                report.push(at, "stream", "m_de is zero but the stream is marked present");
            }
            if a.m_de > 0.0 && !s.present {
                report.push(at, "stream", "m_de is nonzero but the stream is marked pruned");
            }
        }
    }
    report
}
