//! Precomputed gait libraries of Bézier virtual constraints.
//!
//! Each entry describes one step with the left leg in stance (even parity) as
//! a set of Bézier curves over the time-based phase `τ ∈ [0, 1]`. The odd step
//! is produced by the per-channel mirror rules (sign flips and left/right
//! swaps). Libraries are stored as JSON:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "channels": [{"name": "com_x", "dim": 1, "mirror": {"sign": [1], "swap_with": null}}],
//!   "entries": [{"v_nominal": 0.0, "step_duration": 0.4, "curves": {"com_x": [[0.0], [0.0]]}}]
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bezier::BezierCurve;
use crate::error::{check_finite, Error, Result};
use crate::hlip::{HlipParams, HlipPlanner, HlipReferenceConfig};
use crate::reference::{output_dim, Channel, Parity, ReferenceFrame};

pub const LIBRARY_SCHEMA_VERSION: u32 = 1;
pub const RESET_MAP_SCHEMA_VERSION: u32 = 1;

/// Left/right mirror rule for one channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MirrorRule {
    pub sign: Vec<i32>,
    pub swap_with: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror: Option<MirrorRule>,
}

impl ChannelSpec {
    pub fn new(name: impl Into<String>, dim: usize, sign: Vec<i32>, swap_with: Option<&str>) -> Self {
        Self {
            name: name.into(),
            dim,
            mirror: Some(MirrorRule {
                sign,
                swap_with: swap_with.map(str::to_owned),
            }),
        }
    }

    pub fn channel(&self) -> Channel {
        Channel::new(self.name.clone(), self.dim)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    schema_version: u32,
    channels: Vec<ChannelSpec>,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    v_nominal: f64,
    step_duration: f64,
    curves: BTreeMap<String, Vec<Vec<f64>>>,
}

/// Resolved mirror rule: source channel index and componentwise sign.
#[derive(Debug, Clone)]
struct ResolvedMirror {
    source: usize,
    sign: Vec<f64>,
}

#[derive(Debug)]
struct Schema {
    specs: Vec<ChannelSpec>,
    mirror: Option<Vec<ResolvedMirror>>,
}

impl Schema {
    fn new(specs: Vec<ChannelSpec>) -> Result<Self> {
        for (i, c) in specs.iter().enumerate() {
            if c.dim == 0 {
                return Err(Error::Library(format!("channel '{}' has dimension 0", c.name)));
            }
            if specs[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Library(format!("duplicate channel name '{}'", c.name)));
            }
        }
        let mut resolved = Vec::with_capacity(specs.len());
        for c in &specs {
            let Some(rule) = &c.mirror else {
                resolved.clear();
                break;
            };
            if rule.sign.len() != c.dim || rule.sign.iter().any(|s| s.abs() != 1) {
                return Err(Error::Library(format!(
                    "channel '{}': mirror sign must hold {} entries of ±1",
                    c.name, c.dim
                )));
            }
            let source = match &rule.swap_with {
                None => specs.iter().position(|o| o.name == c.name).unwrap(),
                Some(other) => {
                    let j = specs.iter().position(|o| &o.name == other).ok_or_else(|| {
                        Error::Library(format!("channel '{}' swaps with unknown '{other}'", c.name))
                    })?;
                    let partner = &specs[j];
                    let back = partner.mirror.as_ref().and_then(|m| m.swap_with.as_deref());
                    if other == &c.name
                        || back != Some(c.name.as_str())
                        || partner.dim != c.dim
                        || partner.mirror.as_ref().map(|m| &m.sign) != Some(&rule.sign)
                    {
                        return Err(Error::Library(format!(
                            "channels '{}' and '{other}' must swap with each other and share dimension and sign",
                            c.name
                        )));
                    }
                    j
                }
            };
            resolved.push(ResolvedMirror {
                source,
                sign: rule.sign.iter().map(|&s| s as f64).collect(),
            });
        }
        let mirror = (resolved.len() == specs.len()).then_some(resolved);
        Ok(Self { specs, mirror })
    }

    fn mirror(&self) -> Result<&[ResolvedMirror]> {
        match &self.mirror {
            Some(m) => Ok(m),
            None => {
                let missing = self.specs.iter().find(|c| c.mirror.is_none()).unwrap();
                Err(Error::MissingMirror(missing.name.clone()))
            }
        }
    }

    fn channels(&self) -> Vec<Channel> {
        self.specs.iter().map(ChannelSpec::channel).collect()
    }
}

/// One step of a periodic gait.
#[derive(Debug, Clone)]
pub struct GaitEntry {
    v_nominal: f64,
    step_duration: f64,
    schema: Arc<Schema>,
    curves: Vec<BezierCurve>,
}

impl PartialEq for GaitEntry {
    fn eq(&self, other: &Self) -> bool {
        self.v_nominal == other.v_nominal
            && self.step_duration == other.step_duration
            && self.schema.specs == other.schema.specs
            && self.curves == other.curves
    }
}

impl GaitEntry {
    fn build(
        v_nominal: f64,
        step_duration: f64,
        schema: Arc<Schema>,
        curves: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        check_finite("entry velocity", &[v_nominal])?;
        if !(step_duration > 0.0 && step_duration.is_finite()) {
            return Err(Error::validation("step_duration", "must be positive and finite"));
        }
        if curves.len() != schema.specs.len() {
            return Err(Error::Dimension {
                what: "entry curves",
                expected: schema.specs.len(),
                got: curves.len(),
            });
        }
        let curves = curves
            .into_iter()
            .zip(&schema.specs)
            .map(|(pts, spec)| {
                let c = BezierCurve::new(pts, step_duration)
                    .map_err(|e| Error::Library(format!("channel '{}': {e}", spec.name)))?;
                if c.dim() != spec.dim {
                    return Err(Error::Library(format!(
                        "channel '{}' has dimension {}, curve has {}",
                        spec.name,
                        spec.dim,
                        c.dim()
                    )));
                }
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            v_nominal,
            step_duration,
            schema,
            curves,
        })
    }

    pub fn v_nominal(&self) -> f64 {
        self.v_nominal
    }

    pub fn step_duration(&self) -> f64 {
        self.step_duration
    }

    pub fn specs(&self) -> &[ChannelSpec] {
        &self.schema.specs
    }

    pub fn channels(&self) -> Vec<Channel> {
        self.schema.channels()
    }

    pub fn curves(&self) -> &[BezierCurve] {
        &self.curves
    }

    pub fn curve(&self, name: &str) -> Option<&BezierCurve> {
        let i = self.schema.specs.iter().position(|c| c.name == name)?;
        Some(&self.curves[i])
    }

    pub fn curve_mut(&mut self, name: &str) -> Option<&mut BezierCurve> {
        let i = self.schema.specs.iter().position(|c| c.name == name)?;
        Some(&mut self.curves[i])
    }

    pub fn output_dim(&self) -> usize {
        output_dim(&self.channels())
    }

    /// The same step with the opposite stance leg.
    pub fn remap_symmetric(&self) -> Result<GaitEntry> {
        let mirror = self.schema.mirror()?;
        let curves = mirror
            .iter()
            .map(|m| self.curves[m.source].scaled(&m.sign))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            curves,
            ..self.clone()
        })
    }

    /// Stacked outputs at phase `tau`, optionally through the mirror rules.
    fn outputs_at(&self, tau: f64, mirrored: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.output_dim();
        let (mut y, mut ydot) = (Vec::with_capacity(n), Vec::with_capacity(n));
        if mirrored {
            for m in self.schema.mirror()? {
                let c = &self.curves[m.source];
                y.extend(c.eval(tau)?.iter().zip(&m.sign).map(|(a, s)| a * s));
                ydot.extend(c.eval_rate(tau)?.iter().zip(&m.sign).map(|(a, s)| a * s));
            }
        } else {
            for c in &self.curves {
                y.extend(c.eval(tau)?);
                ydot.extend(c.eval_rate(tau)?);
            }
        }
        Ok((y, ydot))
    }

    /// Reference at absolute time `t` for a gait whose step 0 has `parity`.
    /// Every completed step flips the parity.
    pub fn reference_at(&self, t: f64, parity: Parity) -> Result<ReferenceFrame> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Range {
                what: "reference time",
                value: t,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let k = (t / self.step_duration).floor();
        let tau = ((t - k * self.step_duration) / self.step_duration).clamp(0.0, 1.0);
        let parity = if (k as u64) % 2 == 1 { parity.flipped() } else { parity };
        let (y, ydot) = self.outputs_at(tau, parity.is_odd())?;
        Ok(ReferenceFrame { y, ydot, parity })
    }

    /// `‖R·[y(1); ẏ(1)] + offset − [y_mirror(0); ẏ_mirror(0)]‖∞`
    pub fn impact_invariance_residual(&self, reset: &ResetMap) -> Result<f64> {
        let n = 2 * self.output_dim();
        reset.check_dim(n)?;
        let (y1, yd1) = self.outputs_at(1.0, false)?;
        let (y0, yd0) = self.outputs_at(0.0, true)?;
        let end: Vec<f64> = y1.into_iter().chain(yd1).collect();
        let start: Vec<f64> = y0.into_iter().chain(yd0).collect();
        let mapped = reset.apply(&end);
        Ok(mapped
            .iter()
            .zip(&start)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone)]
pub struct GaitLibrary {
    schema: Arc<Schema>,
    entries: Vec<GaitEntry>,
}

impl GaitLibrary {
    /// Builds a library from channel specs and `(v_nominal, step_duration,
    /// curves-in-channel-order)` triples.
    pub fn new(
        channels: Vec<ChannelSpec>,
        entries: Vec<(f64, f64, Vec<Vec<Vec<f64>>>)>,
    ) -> Result<Self> {
        let schema = Arc::new(Schema::new(channels)?);
        let entries = entries
            .into_iter()
            .enumerate()
            .map(|(i, (v, d, curves))| {
                GaitEntry::build(v, d, schema.clone(), curves).map_err(|e| Error::LibraryEntry {
                    entry: i,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, w) in entries.windows(2).enumerate() {
            if !(w[1].v_nominal > w[0].v_nominal) {
                return Err(Error::LibraryEntry {
                    entry: i + 1,
                    reason: format!(
                        "v_nominal {} does not exceed previous {}",
                        w[1].v_nominal, w[0].v_nominal
                    ),
                });
            }
        }
        Ok(Self { schema, entries })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: LibraryFile = serde_json::from_str(text)?;
        if file.schema_version != LIBRARY_SCHEMA_VERSION {
            return Err(Error::Library(format!(
                "unsupported schema_version {} (expected {LIBRARY_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let names: Vec<String> = file.channels.iter().map(|c| c.name.clone()).collect();
        let mut entries = Vec::with_capacity(file.entries.len());
        for (i, mut e) in file.entries.into_iter().enumerate() {
            let mut curves = Vec::with_capacity(names.len());
            for name in &names {
                let pts = e.curves.remove(name).ok_or_else(|| Error::LibraryEntry {
                    entry: i,
                    reason: format!("missing curve for channel '{name}'"),
                })?;
                curves.push(pts);
            }
            if let Some(extra) = e.curves.keys().next() {
                return Err(Error::LibraryEntry {
                    entry: i,
                    reason: format!("curve '{extra}' names no channel"),
                });
            }
            entries.push((e.v_nominal, e.step_duration, curves));
        }
        Self::new(file.channels, entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Canonical JSON (pretty-printed, curves keyed alphabetically, trailing newline).
    pub fn to_json_string(&self) -> Result<String> {
        let file = LibraryFile {
            schema_version: LIBRARY_SCHEMA_VERSION,
            channels: self.schema.specs.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryFile {
                    v_nominal: e.v_nominal,
                    step_duration: e.step_duration,
                    curves: self
                        .schema
                        .specs
                        .iter()
                        .zip(&e.curves)
                        .map(|(s, c)| (s.name.clone(), c.control_points().to_vec()))
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn specs(&self) -> &[ChannelSpec] {
        &self.schema.specs
    }

    pub fn channels(&self) -> Vec<Channel> {
        self.schema.channels()
    }

    pub fn entries(&self) -> &[GaitEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [GaitEntry] {
        &mut self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry with the nearest nominal velocity; ties go to the slower entry.
    pub fn select(&self, v_desired: f64) -> Result<&GaitEntry> {
        let mut best: Option<&GaitEntry> = None;
        for e in &self.entries {
            let d = (e.v_nominal - v_desired).abs();
            // Entries are sorted, so strict improvement keeps the lower one on ties.
            if best.is_none_or(|b| d < (b.v_nominal - v_desired).abs()) {
                best = Some(e);
            }
        }
        best.ok_or_else(|| Error::Library("library has no entries".into()))
    }
}

/// Affine output reset `[y; ẏ]⁺ = R·[y; ẏ]⁻ + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetMap {
    pub schema_version: u32,
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl ResetMap {
    pub fn identity(n: usize) -> Self {
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            schema_version: RESET_MAP_SCHEMA_VERSION,
            matrix,
            offset: vec![0.0; n],
        }
    }

    /// Identity plus the left/right channel permutation from the mirror rules
    /// (channels without a swap partner map to themselves).
    pub fn from_channel_swaps(specs: &[ChannelSpec]) -> Self {
        let mut starts = Vec::with_capacity(specs.len());
        let mut acc = 0;
        for s in specs {
            starts.push(acc);
            acc += s.dim;
        }
        let n = acc;
        let mut map = Self::identity(2 * n);
        for row in map.matrix.iter_mut() {
            row.iter_mut().for_each(|x| *x = 0.0);
        }
        for (i, s) in specs.iter().enumerate() {
            let j = s
                .mirror
                .as_ref()
                .and_then(|m| m.swap_with.as_ref())
                .and_then(|name| specs.iter().position(|o| &o.name == name))
                .unwrap_or(i);
            for k in 0..s.dim {
                for half in [0, n] {
                    map.matrix[half + starts[i] + k][half + starts[j] + k] = 1.0;
                }
            }
        }
        map
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if self.offset.len() != n {
            return Err(Error::Dimension {
                what: "reset map offset",
                expected: n,
                got: self.offset.len(),
            });
        }
        if self.matrix.len() != n {
            return Err(Error::Dimension {
                what: "reset map rows",
                expected: n,
                got: self.matrix.len(),
            });
        }
        if let Some(r) = self.matrix.iter().find(|r| r.len() != n) {
            return Err(Error::Dimension {
                what: "reset map columns",
                expected: n,
                got: r.len(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, o)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + o)
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: ResetMap = serde_json::from_str(&text)?;
        if map.schema_version != RESET_MAP_SCHEMA_VERSION {
            return Err(Error::Library(format!(
                "unsupported reset map schema_version {}",
                map.schema_version
            )));
        }
        map.check_dim(map.offset.len())?;
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Default Bézier degree for curves sampled from the H-LIP planner.
pub const HLIP_FIT_DEGREE: usize = 12;

/// Converts H-LIP references into a gait library by exact Bézier
/// interpolation of one left-stance step per velocity, together with the
/// output reset map that makes the result impact invariant.
///
/// The planner's swing curve is already a Bézier curve and is copied
/// verbatim; the CoM and auxiliary channels are interpolated with
/// `degree`-th order curves.
pub fn convert_hlip(
    velocities: &[f64],
    params: &HlipParams,
    cfg: &HlipReferenceConfig,
    degree: usize,
) -> Result<(GaitLibrary, ResetMap)> {
    params.validate()?;
    if params.t_dsp != 0.0 {
        return Err(Error::validation(
            "hlip conversion",
            "double support makes the CoM reference piecewise; only t_dsp = 0 converts exactly",
        ));
    }
    let step = params.step_period();
    if (cfg.t_period - 2.0 * step).abs() > 1e-12 {
        return Err(Error::validation(
            "hlip conversion",
            format!("t_period {} must span two steps ({})", cfg.t_period, 2.0 * step),
        ));
    }
    let mut specs = vec![
        ChannelSpec::new("com_x", 1, vec![1], None),
        ChannelSpec::new("swing_foot", 3, vec![1, -1, 1], None),
    ];
    specs.extend(cfg.aux.iter().map(|a| ChannelSpec::new(a.name.clone(), 1, vec![-1], None)));

    let mut sorted = velocities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let omega = 2.0 * std::f64::consts::PI / cfg.t_period;
    let mut entries = Vec::with_capacity(sorted.len());
    for &v in &sorted {
        let planner = HlipPlanner::new(v, *params, cfg.clone())?;
        let com = BezierCurve::interpolate(degree, step, |s| Ok(vec![planner.com_at(s * step)?.p]))?;
        let mut curves = vec![
            com.into_control_points(),
            planner.swing_curve(Parity::Even).control_points().to_vec(),
        ];
        for a in &cfg.aux {
            let c = BezierCurve::interpolate(degree, step, |s| {
                Ok(vec![a.amplitude * (omega * s * step + a.phase).sin()])
            })?;
            curves.push(c.into_control_points());
        }
        entries.push((v, step, curves));
    }
    let library = GaitLibrary::new(specs, entries)?;

    // Stack: [com, sw_x, sw_y, sw_z, aux...] for positions, then velocities.
    let n = 4 + cfg.aux.len();
    let mut reset = ResetMap::identity(2 * n);
    // New CoM relative to the new stance foot: p⁺ = p⁻ − (swing x at touchdown).
    reset.matrix[0][1] = -1.0;
    // The old stance foot, seen from the new one, is the negated touchdown offset.
    for half in [0, n] {
        reset.matrix[half + 1][half + 1] = -1.0;
        reset.matrix[half + 2][half + 2] = -1.0;
    }
    Ok((library, reset))
}
