//! Run configuration: strict JSON parsing, defaults and validation with
//! field-path diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{default_barrier_height, BarrierModel, ChannelGeometry};
use crate::grid::{Grid, PacketSpec};
use crate::observables::{ForceStencil, PotentialStencil};
use crate::propagator::{default_dt, AbsorbingLayer, StepperConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub packet: PacketConfig,
    pub geometry: GeometryConfig,
    pub model: ModelConfig,
    pub stepper: StepperSection,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 1200,
            ny: 400,
            dx: 0.25,
            dy: 0.25,
            x0: 0.0,
            y0: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacketConfig {
    pub xc: f64,
    pub yc: f64,
    pub sx: f64,
    pub sy: f64,
    pub k0: f64,
}

impl Default for PacketConfig {
    fn default() -> Self {
        Self {
            xc: 118.0,
            yc: 50.0,
            sx: 8.0,
            sy: 12.0,
            k0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub x_in: f64,
    pub ell: f64,
    pub a: f64,
    pub y_center: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            x_in: 150.0,
            ell: 50.0,
            a: 10.0,
            y_center: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    HardWall,
    FiniteStep,
    Smoothed,
}

/// Barrier model; `v0` defaults to 40 E of the packet and `w` to two grid
/// spacings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperSection {
    /// Defaults to `0.25 min(dx, dy)^2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Defaults to the time the packet needs to clear the interaction region.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    pub sample_stride: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<AbsorbingLayer>,
    pub force_stencil: ForceStencil,
    pub potential_stencil: PotentialStencil,
}

impl Default for StepperSection {
    fn default() -> Self {
        Self {
            dt: None,
            n_steps: None,
            sample_stride: 16,
            cap: None,
            force_stencil: ForceStencil::default(),
            potential_stencil: PotentialStencil::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Transit,
    Reflect,
    Sweep,
    ModelCompare,
    Oracle,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Transit => "transit",
            ExperimentKind::Reflect => "reflect",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::ModelCompare => "model-compare",
            ExperimentKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    /// Beam momenta of the energy sweep.
    pub p_list: Vec<f64>,
    /// Channel lengths of the length sweep.
    pub ell_list: Vec<f64>,
    /// Channel widths of the width sweep.
    pub a_list: Vec<f64>,
    /// Smoothed-barrier edge widths for the model comparison, in units of
    /// `max(dx, dy)`.
    pub edge_widths: Vec<f64>,
    /// Height multiplier for the impenetrable-limit check.
    pub v0_factor: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            p_list: vec![0.8, 1.0, 1.25, 1.5, 2.0],
            ell_list: vec![30.0, 40.0, 50.0, 60.0, 70.0],
            a_list: vec![8.0, 10.0, 12.5, 16.0],
            edge_widths: vec![2.0, 4.0],
            v0_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "chanphase-out".into(),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
        }
    }
}

/// Everything a single propagation needs, resolved from a [`RunConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub grid: Grid,
    pub packet: PacketSpec,
    pub geometry: ChannelGeometry,
    pub model: BarrierModel,
    pub stepper: StepperConfig,
    pub n_steps: Option<usize>,
    pub sample_stride: usize,
    pub force_stencil: ForceStencil,
    pub potential_stencil: PotentialStencil,
}

/// Parses and validates a JSON config.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            return Error::ConfigSyntax {
                line: inner.line(),
                column: inner.column(),
                message: strip_position(&inner.to_string()),
            };
        }
        let message = strip_position(&inner.to_string());
        let message = match unknown_field_hint(&message) {
            Some(hint) => format!("{message}; did you mean `{hint}`?"),
            None => message,
        };
        Error::config(path, message)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(k) => msg[..k].to_string(),
        None => msg.to_string(),
    }
}

/// Words people reach for instead of the short field names.
const ALIASES: &[(&str, &str)] = &[
    ("length", "ell"),
    ("len", "ell"),
    ("width", "a"),
    ("sigma_x", "sx"),
    ("sigma_y", "sy"),
    ("momentum", "k0"),
    ("p", "k0"),
    ("steps", "n_steps"),
    ("stride", "sample_stride"),
];

/// Best replacement for the key named in serde's "unknown field `x`,
/// expected one of `a`, `b`" message.
fn unknown_field_hint(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    let (unknown, tail) = rest.split_once('`')?;
    let expected: Vec<&str> = tail.split('`').skip(1).step_by(2).collect();
    if expected.is_empty() {
        return None;
    }
    let key = unknown.to_ascii_lowercase();
    let alias = ALIASES
        .iter()
        .filter(|(word, target)| expected.contains(target) && strsim::damerau_levenshtein(&key, word) <= 2)
        .min_by_key(|(word, _)| strsim::damerau_levenshtein(&key, word))
        .map(|(_, target)| target.to_string());
    alias.or_else(|| {
        expected
            .iter()
            .map(|e| (strsim::jaro_winkler(&key, e), *e))
            .filter(|(score, _)| *score > 0.7)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, e)| e.to_string())
    })
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive and finite, got {v}")))
    }
}

fn finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be finite, got {v}")))
    }
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::InvalidArgument(m) => Error::config(path, m),
        other => other,
    }
}

impl RunConfig {
    /// Checks every field, reporting the first violation with its path.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.nx < 8 {
            return Err(Error::config("grid.nx", format!("need at least 8 points, got {}", g.nx)));
        }
        if g.ny < 8 {
            return Err(Error::config("grid.ny", format!("need at least 8 points, got {}", g.ny)));
        }
        positive("grid.dx", g.dx)?;
        positive("grid.dy", g.dy)?;
        finite("grid.x0", g.x0)?;
        finite("grid.y0", g.y0)?;
        let grid = self.grid()?;

        let p = &self.packet;
        finite("packet.xc", p.xc)?;
        finite("packet.yc", p.yc)?;
        positive("packet.sx", p.sx)?;
        positive("packet.sy", p.sy)?;
        positive("packet.k0", p.k0)?;
        self.packet_spec().validate_on(&grid).map_err(at("packet"))?;

        let geo = &self.geometry;
        positive("geometry.ell", geo.ell)?;
        if !(geo.a >= 0.0 && geo.a.is_finite()) {
            return Err(Error::config("geometry.a", format!("must be non-negative, got {}", geo.a)));
        }
        finite("geometry.x_in", geo.x_in)?;
        finite("geometry.y_center", geo.y_center)?;
        self.channel().validate_on(&grid).map_err(at("geometry"))?;

        if let Some(v0) = self.model.v0 {
            positive("model.v0", v0)?;
        }
        if let Some(w) = self.model.w {
            positive("model.w", w)?;
        }
        self.barrier_model()?.validate_on(&grid).map_err(at("model"))?;

        let st = &self.stepper;
        if let Some(dt) = st.dt {
            positive("stepper.dt", dt)?;
        }
        if st.sample_stride == 0 {
            return Err(Error::config("stepper.sample_stride", "must be at least 1"));
        }
        if let Some(cap) = &st.cap {
            positive("stepper.cap.width", cap.width)?;
            positive("stepper.cap.strength", cap.strength)?;
        }

        let ex = &self.experiment;
        for (name, list) in [("p_list", &ex.p_list), ("ell_list", &ex.ell_list), ("a_list", &ex.a_list)] {
            for (k, &v) in list.iter().enumerate() {
                positive(&format!("experiment.{name}[{k}]"), v)?;
            }
        }
        for (k, &w) in ex.edge_widths.iter().enumerate() {
            if !(w >= 2.0 && w.is_finite()) {
                return Err(Error::config(
                    format!("experiment.edge_widths[{k}]"),
                    format!("edge width must be at least 2 grid spacings, got {w}"),
                ));
            }
        }
        positive("experiment.v0_factor", ex.v0_factor)?;
        if self.output.dir.is_empty() {
            return Err(Error::config("output.dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = &self.grid;
        Grid::new(g.nx, g.ny, g.dx, g.dy, g.x0, g.y0).map_err(at("grid"))
    }

    pub fn packet_spec(&self) -> PacketSpec {
        let p = &self.packet;
        PacketSpec {
            xc: p.xc,
            yc: p.yc,
            sigma_x: p.sx,
            sigma_y: p.sy,
            k0: p.k0,
        }
    }

    pub fn channel(&self) -> ChannelGeometry {
        let g = &self.geometry;
        ChannelGeometry {
            x_in: g.x_in,
            ell: g.ell,
            a: g.a,
            y_center: g.y_center,
        }
    }

    /// The barrier model with defaults resolved against the packet energy
    /// and the grid spacing.
    pub fn barrier_model(&self) -> Result<BarrierModel> {
        let energy = 0.5 * self.packet.k0 * self.packet.k0;
        let v0 = self.model.v0.unwrap_or_else(|| default_barrier_height(energy));
        let w = self.model.w.unwrap_or(2.0 * self.grid.dx.max(self.grid.dy));
        Ok(match self.model.kind {
            ModelKind::HardWall => {
                if self.model.v0.is_some() || self.model.w.is_some() {
                    return Err(Error::config("model", "hard-wall takes neither v0 nor w"));
                }
                BarrierModel::HardWall
            }
            ModelKind::FiniteStep => {
                if self.model.w.is_some() {
                    return Err(Error::config("model.w", "finite-step has no edge width"));
                }
                BarrierModel::FiniteStep { v0 }
            }
            ModelKind::Smoothed => BarrierModel::Smoothed { v0, w },
        })
    }

    pub fn stepper_config(&self) -> Result<StepperConfig> {
        let grid = self.grid()?;
        Ok(StepperConfig {
            dt: self.stepper.dt.unwrap_or_else(|| default_dt(&grid)),
            cap: self.stepper.cap,
        })
    }

    pub fn plan(&self) -> Result<RunPlan> {
        Ok(RunPlan {
            grid: self.grid()?,
            packet: self.packet_spec(),
            geometry: self.channel(),
            model: self.barrier_model()?,
            stepper: self.stepper_config()?,
            n_steps: self.stepper.n_steps,
            sample_stride: self.stepper.sample_stride,
            force_stencil: self.stepper.force_stencil,
            potential_stencil: self.stepper.potential_stencil,
        })
    }

    /// A copy with every defaulted physical quantity written out, as echoed
    /// into result files.
    pub fn resolved(&self, n_steps: usize) -> Result<RunConfig> {
        let mut out = self.clone();
        let st = self.stepper_config()?;
        out.stepper.dt = Some(st.dt);
        out.stepper.n_steps = Some(n_steps);
        match self.barrier_model()? {
            BarrierModel::HardWall => {}
            BarrierModel::FiniteStep { v0 } => out.model.v0 = Some(v0),
            BarrierModel::Smoothed { v0, w } => {
                out.model.v0 = Some(v0);
                out.model.w = Some(w);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.grid.dx, 0.25);
        assert_eq!(cfg.geometry.a, 10.0);
        assert_eq!(cfg.geometry.ell, 50.0);
        assert_eq!(cfg.packet.k0, 1.0);
        assert_eq!(cfg.packet.sx, 8.0);
        assert_eq!(cfg.packet.sy, 12.0);
        assert_eq!(cfg.barrier_model().unwrap(), BarrierModel::HardWall);
        assert_eq!(cfg.stepper_config().unwrap().dt, 0.015625);
        let partial = parse_config(r#"{"experiment": {"kind": "transit"}, "geometry": {"ell": 40}}"#).unwrap();
        assert_eq!(partial.geometry.ell, 40.0);
        assert_eq!(partial.geometry.a, 10.0);
    }

    #[test]
    fn negative_width_names_its_path() {
        let err = parse_config(r#"{"geometry": {"a": -1}}"#).unwrap_err();
        match err {
            Error::ConfigValidation { path, .. } => assert_eq!(path, "geometry.a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_gets_a_suggestion() {
        let err = parse_config(r#"{"geometry": {"lenght": 50}}"#).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("lenght") && text.contains("did you mean `ell`"), "{text}");
        assert!(matches!(err, Error::ConfigValidation { ref path, .. } if path.starts_with("geometry")));
        let err = parse_config(r#"{"grdi": {}}"#).unwrap_err().to_string();
        assert!(err.contains("did you mean `grid`"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("{\n  \"grid\": {\"nx\": 10,,}\n}").unwrap_err();
        match err {
            Error::ConfigSyntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_errors_name_the_field() {
        let err = parse_config(r#"{"grid": {"nx": "many"}}"#).unwrap_err();
        assert!(matches!(err, Error::ConfigValidation { ref path, .. } if path == "grid.nx"), "{err:?}");
    }

    #[test]
    fn model_defaults_follow_the_packet() {
        let cfg = parse_config(r#"{"model": {"kind": "smoothed"}}"#).unwrap();
        assert_eq!(cfg.barrier_model().unwrap(), BarrierModel::Smoothed { v0: 20.0, w: 0.5 });
        let err = parse_config(r#"{"model": {"kind": "smoothed", "w": 0.1}}"#).unwrap_err();
        assert!(matches!(err, Error::ConfigValidation { ref path, .. } if path == "model"));
        assert!(parse_config(r#"{"model": {"kind": "hard-wall", "v0": 3}}"#).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config(r#"{"model": {"kind": "finite-step"}, "stepper": {"sample_stride": 4}}"#).unwrap();
        let echo = cfg.resolved(1234).unwrap();
        let back = parse_config(&echo.to_json()).unwrap();
        assert_eq!(back, echo);
        assert_eq!(back.stepper.n_steps, Some(1234));
        assert_eq!(back.model.v0, Some(20.0));
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn packet_outside_the_box_is_rejected() {
        let err = parse_config(r#"{"packet": {"yc": 10}}"#).unwrap_err();
        assert!(matches!(err, Error::ConfigValidation { ref path, .. } if path == "packet"), "{err:?}");
    }
}
