//! Scenario presets, the versioned run configuration, and the
//! check → tune → solve → audit pipeline used by the `pevo` binary.

use crate::coefficients::{check_conditions, CoefficientSet, DecayReport, Gamma, Principal, Profile, SampleSpec, Term};
use crate::error::{PevoError, Result};
use crate::grid::{Field, Grid, C64};
use crate::lambda::{build_pack, BoundaryTaper, CutoffPair, PackSummary, TransformPack, TuneReport, TuneSettings};
use crate::linear::{
    energy_audit, solve_linear, solve_transformed, AbsorbingLayer, EnergyAudit, FrozenState, LinearProblem, Trajectory,
};
use crate::semilinear::{newton_solve, NewtonReport, Seed, SemilinearProblem, TargetKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Version of the run-configuration schema understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// Exit code: configuration error.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code: decay-condition check failed.
pub const EXIT_CONDITION: i32 = 3;
/// Exit code: constant tuning failed.
pub const EXIT_TUNING: i32 = 4;
/// Exit code: solver instability.
pub const EXIT_INSTABILITY: i32 = 5;
/// Exit code: energy-audit gate failed.
pub const EXIT_AUDIT: i32 = 6;
/// Exit code: Newton nonconvergence.
pub const EXIT_NEWTON: i32 = 7;

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Parameters of the KdV preset `∂_t u = c₀ ∂_x(½u² + ⅔αu + ⅓σ∂_x²u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct KdvParams {
    /// Gravity `g`.
    pub g: f64,
    /// Reference depth `h₀`.
    pub depth: f64,
    /// Coefficient `α` of the linear transport term.
    pub alpha: f64,
    /// Surface tension `T`.
    pub tension: f64,
    /// Density `ρ`.
    pub rho: f64,
    /// Relative seabed bump: `h(x) = h₀(1 + bump·sech(x/width))` (0: flat).
    pub bump: f64,
    /// Bump width.
    pub bump_width: f64,
}

impl Default for KdvParams {
    fn default() -> Self {
        KdvParams { g: 1.0, depth: 1.0, alpha: 1.0, tension: 0.0, rho: 1.0, bump: 0.0, bump_width: 10.0 }
    }
}

/// KdV preset (`p = 3`).
///
/// Mapping: `c₀(x) = (3/2)√(g/h(x))`, `σ(x) = h³/3 − T h/(ρ g)`,
/// `a₃ = c₀σ/3`, `a₂ = 0`, `a₁(x,w) = −c₀(x)(w + 2α/3)`, `a₀ = 0`. For a
/// variable seabed the coefficients are those of the flat-bottom equation
/// with the local depth (the `∂_x` falls on the nonlinearity only).
/// `C_p` is the minimum of `a₃` over the grid.
pub fn preset_kdv(params: &KdvParams, grid: &Grid) -> Result<CoefficientSet> {
    let KdvParams { g, depth, alpha, tension, rho, bump, bump_width } = *params;
    if !(g > 0.0 && depth > 0.0 && rho > 0.0 && bump_width > 0.0) || tension < 0.0 || bump <= -1.0 {
        return Err(PevoError::Config(
            "KdV parameters g, depth, ρ, bump width must be positive, T ≥ 0, bump > −1".into(),
        ));
    }
    let principal = Principal {
        scale: 1.0,
        profile: if bump == 0.0 {
            Profile::Constant
        } else {
            Profile::KdvDispersion { g, depth, amplitude: bump, width: bump_width, tension, rho }
        },
    };
    let speed = if bump == 0.0 {
        Profile::Constant
    } else {
        Profile::KdvSpeed { g, depth, amplitude: bump, width: bump_width }
    };
    let c0_flat = 1.5 * (g / depth).sqrt();
    let sigma_flat = depth.powi(3) / 3.0 - tension * depth / (rho * g);
    let (principal, speed_scale) = if bump == 0.0 {
        (Principal { scale: c0_flat * sigma_flat / 3.0, profile: Profile::Constant }, c0_flat)
    } else {
        (principal, 1.0)
    };
    let a3_min = grid.x().iter().map(|&x| principal.eval(0.0, x)).fold(f64::INFINITY, f64::min);
    if !(a3_min > 0.0) {
        return Err(PevoError::Config(format!(
            "KdV dispersion a₃ = c₀σ/3 must be positive on the grid (min {a3_min:.4e}); surface tension too large"
        )));
    }
    let c_max = grid.x().iter().map(|&x| speed_scale * crate::jet::Smooth::eval(&speed, x)).fold(0.0, f64::max);
    let coeffs = CoefficientSet::new(3, principal, Gamma::one_plus_abs_squared(), a3_min, c_max.max(1e-12))?
        .with_term(1, Term { scale: C64::new(-speed_scale, 0.0), profile: speed.clone(), w_power: 1 })?;
    if alpha != 0.0 {
        coeffs.with_term(1, Term { scale: C64::new(-speed_scale * 2.0 * alpha / 3.0, 0.0), profile: speed, w_power: 0 })
    } else {
        Ok(coeffs)
    }
}

/// Parameters of the Schrödinger-type preset (`p = 2`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SchrodingerParams {
    /// `a₂ > 0` (constant).
    pub a2: f64,
    /// Real part of `a₁` (times `⟨x⟩^{-a1_decay}`).
    pub re_a1: f64,
    /// Imaginary part of `a₁` (times `⟨x⟩^{-a1_decay}`).
    pub im_a1: f64,
    /// Decay exponent of `a₁`.
    pub a1_decay: f64,
    /// Real part of `a₀`.
    pub re_a0: f64,
    /// Imaginary part of `a₀`.
    pub im_a0: f64,
    /// Decay exponent of `a₀`.
    pub a0_decay: f64,
}

impl Default for SchrodingerParams {
    fn default() -> Self {
        SchrodingerParams { a2: 1.0, re_a1: 0.0, im_a1: 0.5, a1_decay: 1.0, re_a0: 0.0, im_a0: 0.0, a0_decay: 1.0 }
    }
}

/// Schrödinger-type preset with `γ(w) = 1 + |w|²`.
pub fn preset_schrodinger(params: &SchrodingerParams) -> Result<CoefficientSet> {
    if !(params.a2 > 0.0) {
        return Err(PevoError::Config("Schrödinger preset needs a₂ > 0".into()));
    }
    let c = params.re_a1.hypot(params.im_a1).max(params.re_a0.hypot(params.im_a0)).max(1.0);
    let mut set = CoefficientSet::new(
        2,
        Principal { scale: params.a2, profile: Profile::Constant },
        Gamma::one_plus_abs_squared(),
        params.a2,
        c,
    )?;
    let a1 = C64::new(params.re_a1, params.im_a1);
    if a1 != C64::new(0.0, 0.0) {
        set = set.with_term(
            1,
            Term { scale: a1, profile: Profile::InverseBracket { exponent: params.a1_decay }, w_power: 0 },
        )?;
    }
    let a0 = C64::new(params.re_a0, params.im_a0);
    if a0 != C64::new(0.0, 0.0) {
        set = set.with_term(
            0,
            Term { scale: a0, profile: Profile::InverseBracket { exponent: params.a0_decay }, w_power: 0 },
        )?;
    }
    Ok(set)
}

/// Parameters of the decaying-imaginary-part preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ImParams {
    /// Order `p`.
    pub p: u32,
    /// `a_p` (constant).
    pub a_p: f64,
    /// Strength `c` of `Im a_{p-1}`.
    pub c: f64,
    /// Decay exponent (`1` for the decaying preset).
    pub decay: f64,
}

impl Default for ImParams {
    fn default() -> Self {
        ImParams { p: 3, a_p: 1.0, c: 1.0, decay: 1.0 }
    }
}

/// `a_{p-1} = i c ⟨x⟩^{-decay}`, all other lower coefficients zero,
/// `γ ≡ 1`, `C = c`.
pub fn preset_decaying_im(params: &ImParams) -> Result<CoefficientSet> {
    if params.p < 2 || !(params.a_p > 0.0) || !(params.c > 0.0) {
        return Err(PevoError::Config("needs p ≥ 2, a_p > 0, c > 0".into()));
    }
    let profile =
        if params.decay == 0.0 { Profile::Constant } else { Profile::InverseBracket { exponent: params.decay } };
    CoefficientSet::new(
        params.p,
        Principal { scale: params.a_p, profile: Profile::Constant },
        Gamma::constant(1.0),
        params.a_p,
        params.c,
    )?
    .with_term(params.p as usize - 1, Term { scale: C64::new(0.0, params.c), profile, w_power: 0 })
}

/// Non-decaying variant `a_{p-1} = i c` (fails the decay conditions).
pub fn preset_constant_im(params: &ImParams) -> Result<CoefficientSet> {
    preset_decaying_im(&ImParams { decay: 0.0, ..params.clone() })
}

/// Parameters of the real constant-coefficient preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantParams {
    /// Order `p`.
    pub p: u32,
    /// `a_p`.
    pub a_p: f64,
    /// Real constants `a_0, …, a_{p-1}` (missing entries are zero).
    pub lower: Vec<f64>,
}

impl Default for ConstantParams {
    fn default() -> Self {
        ConstantParams { p: 2, a_p: 1.0, lower: vec![] }
    }
}

/// Real constant coefficients (skew-adjoint generator).
pub fn preset_constant(params: &ConstantParams) -> Result<CoefficientSet> {
    if params.lower.len() > params.p as usize {
        return Err(PevoError::Config("too many lower-order constants".into()));
    }
    if !(params.a_p > 0.0) {
        return Err(PevoError::Config("needs a_p > 0".into()));
    }
    let c = params.lower.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut set = CoefficientSet::new(
        params.p,
        Principal { scale: params.a_p, profile: Profile::Constant },
        Gamma::constant(1.0),
        params.a_p,
        c,
    )?;
    for (j, &v) in params.lower.iter().enumerate() {
        if v != 0.0 {
            set = set.with_term(j, Term { scale: C64::new(v, 0.0), profile: Profile::Constant, w_power: 0 })?;
        }
    }
    Ok(set)
}

/// A named preset with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "preset", content = "params", rename_all = "snake_case")]
pub enum Scenario {
    /// KdV (flat or variable seabed).
    Kdv(KdvParams),
    /// Schrödinger type, `p = 2`.
    Schrodinger(SchrodingerParams),
    /// `Im a_{p-1} = c⟨x⟩^{-1}`.
    DecayingIm(ImParams),
    /// `Im a_{p-1} = c` (non-decaying).
    ConstantIm(ImParams),
    /// Real constant coefficients.
    Constant(ConstantParams),
}

impl Scenario {
    /// Coefficient set of the preset on `grid`.
    pub fn coefficients(&self, grid: &Grid) -> Result<CoefficientSet> {
        match self {
            Scenario::Kdv(p) => preset_kdv(p, grid),
            Scenario::Schrodinger(p) => preset_schrodinger(p),
            Scenario::DecayingIm(p) => preset_decaying_im(p),
            Scenario::ConstantIm(p) => preset_constant_im(p),
            Scenario::Constant(p) => preset_constant(p),
        }
    }

    /// Name used in configs.
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Kdv(_) => "kdv",
            Scenario::Schrodinger(_) => "schrodinger",
            Scenario::DecayingIm(_) => "decaying_im",
            Scenario::ConstantIm(_) => "constant_im",
            Scenario::Constant(_) => "constant",
        }
    }

    /// True when some coefficient depends on the state (Newton needed).
    pub fn is_semilinear(&self) -> bool {
        matches!(self, Scenario::Kdv(_))
    }
}

/// Catalogue entry for `--list-presets`.
#[derive(Clone, Debug, Serialize)]
pub struct PresetInfo {
    /// Config name.
    pub name: &'static str,
    /// One-line description.
    pub description: &'static str,
    /// Default configuration of the scenario block.
    pub default: Scenario,
}

/// All presets with their default parameters.
pub fn list_presets() -> Vec<PresetInfo> {
    vec![
        PresetInfo {
            name: "kdv",
            description: "KdV, p=3: a3 = c0*sigma/3, a2 = 0, a1 = -c0(w + 2alpha/3); optional sech seabed bump",
            default: Scenario::Kdv(KdvParams::default()),
        },
        PresetInfo {
            name: "schrodinger",
            description: "Schroedinger type, p=2: a1, a0 complex with <x>-decay, gamma(w) = 1+|w|^2",
            default: Scenario::Schrodinger(SchrodingerParams::default()),
        },
        PresetInfo {
            name: "decaying_im",
            description: "a_{p-1} = i c <x>^{-1}: decaying imaginary part (Gaarding-stabilized by the transform)",
            default: Scenario::DecayingIm(ImParams::default()),
        },
        PresetInfo {
            name: "constant_im",
            description: "a_{p-1} = i c: non-decaying imaginary part (fails the decay conditions)",
            default: Scenario::ConstantIm(ImParams { decay: 0.0, ..ImParams::default() }),
        },
        PresetInfo {
            name: "constant",
            description: "real constant coefficients (skew-adjoint generator, exact multiplier solution)",
            default: Scenario::Constant(ConstantParams::default()),
        },
    ]
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Initial datum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `u₀ = 0`.
    Zero,
    /// `A e^{−((x−c)/w)²}`.
    Gaussian {
        /// Amplitude.
        amplitude: f64,
        /// Centre.
        center: f64,
        /// Width.
        width: f64,
    },
    /// `A e^{−((x−c)/w)²} e^{iκx}`.
    WavePacket {
        /// Amplitude.
        amplitude: f64,
        /// Centre.
        center: f64,
        /// Width.
        width: f64,
        /// Carrier frequency `κ`.
        carrier: f64,
    },
    /// Gaussian rescaled to `‖u₀‖_s = norm` (bracket `⟨ξ⟩_1`).
    Normalized {
        /// Target norm.
        norm: f64,
        /// Sobolev index.
        s: f64,
        /// Centre.
        center: f64,
        /// Width.
        width: f64,
    },
    /// Random smooth field (seeded), rescaled to `‖u₀‖₀ = norm`.
    RandomSmooth {
        /// Target `L²` norm.
        norm: f64,
        /// Spectral width.
        width: f64,
    },
}

/// Grid block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Number of nodes (even).
    #[schemars(range(min = 4), extend("multipleOf" = 2))]
    pub n: usize,
    /// Half-length `L`.
    #[schemars(extend("exclusiveMinimum" = 0))]
    pub l: f64,
}

/// Solve mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Linear solve with coefficients frozen at `u₀`.
    Linear,
    /// Newton solve of the semilinear problem.
    Newton,
}

/// Seed name for the Newton loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    /// Taylor seed.
    Taylor,
    /// Zero.
    Zero,
    /// `u₀` frozen in time.
    Initial,
}

/// Solver block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Linear or Newton.
    pub mode: SolveMode,
    /// Horizon (`T` or `T*`).
    pub horizon: f64,
    /// Step (`None`: default `0.5/(max|a_p| ξ_max^p)`; required for Newton).
    pub dt: Option<f64>,
    /// Frame cadence of linear solves.
    pub save_every: usize,
    /// Solve the Λ-transformed system (linear mode).
    pub transformed: bool,
    /// Sobolev index `s`.
    pub s: u32,
    /// Newton tolerance.
    pub tol: f64,
    /// Newton iteration cap.
    pub max_iter: usize,
    /// Mollifier `ε` (`None`: `T*/8`).
    pub epsilon: Option<f64>,
    /// Newton target.
    pub target: TargetKind,
    /// Newton seed.
    pub seed: SeedKind,
    /// Frequency-cutoff smoothing of Newton updates.
    pub smoothing: bool,
    /// Absorbing layer (linear mode).
    pub layer: Option<AbsorbingLayer>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: SolveMode::Linear,
            horizon: 0.1,
            dt: None,
            save_every: 1,
            transformed: true,
            s: 0,
            tol: 1e-6,
            max_iter: 10,
            epsilon: None,
            target: TargetKind::Mollified,
            seed: SeedKind::Taylor,
            smoothing: false,
            layer: None,
        }
    }
}

/// Transform-pack block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct PackConfig {
    /// Skip tuning and use `m`, `h` as given (`M = 0` when `m` is absent).
    pub skip_tune: bool,
    /// Explicit `(M_{p-1}, …, M_1)` for `skip_tune`.
    pub m: Option<Vec<f64>>,
    /// Tuning settings (also supplies `h` for `skip_tune`).
    pub tune: TuneSettings,
    /// Boundary taper of Λ (`None`: untapered).
    pub taper: Option<BoundaryTaper>,
}

impl Default for PackConfig {
    fn default() -> Self {
        PackConfig { skip_tune: false, m: None, tune: TuneSettings::default(), taper: Some(BoundaryTaper::default()) }
    }
}

/// Decay-check block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Run the gate.
    pub enabled: bool,
    /// Lattice extent (`None`: the grid half-length).
    pub extent: Option<f64>,
    /// Number of x samples.
    pub nx: usize,
    /// Restrict the `w`-lattice to real values (real-valued models such as KdV).
    pub real_w: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { enabled: true, extent: None, nx: 201, real_w: false }
    }
}

/// Audit block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Run the gate.
    pub enabled: bool,
    /// Sobolev index of the energy bound.
    pub s: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { enabled: true, s: 0.0 }
    }
}

/// Output block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct OutputConfig {
    /// Write `frames.bin`.
    pub frames: bool,
}

/// Complete, versioned run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must equal [`SCHEMA_VERSION`].
    #[schemars(extend("const" = SCHEMA_VERSION))]
    pub schema_version: u32,
    /// Scenario and its parameters.
    pub scenario: Scenario,
    /// Grid.
    pub grid: GridConfig,
    /// Initial datum.
    #[serde(default = "default_initial")]
    pub initial: InitialData,
    /// Solver settings.
    #[serde(default)]
    pub solver: SolverConfig,
    /// Pack settings.
    #[serde(default)]
    pub pack: PackConfig,
    /// Decay-check settings.
    #[serde(default)]
    pub checks: CheckConfig,
    /// Audit settings.
    #[serde(default)]
    pub audit: AuditConfig,
    /// Output settings.
    #[serde(default)]
    pub output: OutputConfig,
    /// RNG seed for randomized data.
    #[serde(default)]
    pub seed: u64,
}

fn default_initial() -> InitialData {
    InitialData::Gaussian { amplitude: 0.1, center: 0.0, width: 1.0 }
}

impl RunConfig {
    /// Parses and validates a JSON configuration.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| PevoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The golden known-good configuration: decaying `Im a₂` (p = 3) with the
    /// tuned transform, a right-moving wave packet and an absorbing layer.
    pub fn golden() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            scenario: Scenario::DecayingIm(ImParams::default()),
            grid: GridConfig { n: 128, l: 10.0 },
            initial: InitialData::WavePacket { amplitude: 1.0, center: -4.0, width: 0.5f64.sqrt(), carrier: 10.0 },
            solver: SolverConfig {
                horizon: 0.1,
                dt: Some(2e-5),
                save_every: 10,
                layer: Some(AbsorbingLayer { strength: 5.0, start: 0.6, end: 0.75 }),
                ..SolverConfig::default()
            },
            pack: PackConfig::default(),
            checks: CheckConfig::default(),
            audit: AuditConfig::default(),
            output: OutputConfig::default(),
            seed: 0,
        }
    }

    /// Structural and range validation (mirrors the published schema).
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PevoError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} unsupported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.grid.n < 4 || !self.grid.n.is_multiple_of(2) {
            return bad(format!("grid.n must be even and ≥ 4, got {}", self.grid.n));
        }
        if !(self.grid.l > 0.0) || !self.grid.l.is_finite() {
            return bad("grid.l must be positive".into());
        }
        let s = &self.solver;
        if !(s.horizon > 0.0) {
            return bad("solver.horizon must be positive".into());
        }
        if let Some(dt) = s.dt {
            if !(dt > 0.0) {
                return bad("solver.dt must be positive".into());
            }
            let k = (s.horizon / dt).round();
            if k < 1.0 || (k * dt - s.horizon).abs() > 1e-9 * s.horizon {
                return bad("solver.horizon / solver.dt must be integral".into());
            }
        }
        if s.mode == SolveMode::Newton && s.dt.is_none() {
            return bad("solver.dt is required in newton mode".into());
        }
        if s.save_every == 0 {
            return bad("solver.save_every must be ≥ 1".into());
        }
        if !(s.tol > 0.0) {
            return bad("solver.tol must be positive".into());
        }
        if let Some(eps) = s.epsilon {
            if !(eps > 0.0 && eps < s.horizon / 2.0) {
                return bad("solver.epsilon must lie in (0, horizon/2)".into());
            }
        }
        if let Some(l) = &s.layer {
            if !(l.strength >= 0.0 && 0.0 < l.start && l.start < l.end && l.end <= 1.0) {
                return bad("solver.layer needs strength ≥ 0 and 0 < start < end ≤ 1".into());
            }
        }
        let t = &self.pack.tune;
        if !(t.m_initial > 0.0 && t.h_initial >= 1.0 && t.neumann_target > 0.0 && t.neumann_target < 1.0) {
            return bad("pack.tune needs m_initial > 0, h_initial ≥ 1, 0 < neumann_target < 1".into());
        }
        if !(t.h_growth > 1.0 && t.m_cap > 0.0 && t.h_cap >= t.h_initial) {
            return bad("pack.tune needs h_growth > 1, m_cap > 0, h_cap ≥ h_initial".into());
        }
        if let Some(tp) = &self.pack.taper {
            if !(0.0 < tp.start && tp.start < tp.end && tp.end <= 1.0) {
                return bad("pack.taper needs 0 < start < end ≤ 1".into());
            }
        }
        if self.checks.nx < 2 {
            return bad("checks.nx must be ≥ 2".into());
        }
        match &self.initial {
            InitialData::Gaussian { width, .. }
            | InitialData::WavePacket { width, .. }
            | InitialData::Normalized { width, .. }
            | InitialData::RandomSmooth { width, .. }
                if !(*width > 0.0) =>
            {
                return bad("initial.width must be positive".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// Grid.
    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n, self.grid.l).map_err(|e| PevoError::Config(e.to_string()))
    }

    /// Initial datum on `grid`.
    pub fn build_initial(&self, grid: &Grid) -> Result<Field> {
        Ok(match &self.initial {
            InitialData::Zero => Field::zeros(grid),
            InitialData::Gaussian { amplitude, center, width } => {
                Field::from_fn(grid, |x| C64::new(amplitude * (-((x - center) / width).powi(2)).exp(), 0.0))
            }
            InitialData::WavePacket { amplitude, center, width, carrier } => Field::from_fn(grid, |x| {
                C64::new(0.0, carrier * x).exp() * (amplitude * (-((x - center) / width).powi(2)).exp())
            }),
            InitialData::Normalized { norm, s, center, width } => {
                let f = Field::from_fn(grid, |x| C64::new((-((x - center) / width).powi(2)).exp(), 0.0));
                let cur = grid.sobolev_norm_of(f.values(), *s, 1.0);
                f.scale(C64::new(norm / cur, 0.0))
            }
            InitialData::RandomSmooth { norm, width } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let f = Field::random_smooth(grid, &mut rng, *width);
                let cur = f.l2_norm();
                f.scale(C64::new(norm / cur, 0.0))
            }
        })
    }

    /// Cutoffs with the configured taper.
    pub fn cutoffs(&self, p: u32) -> CutoffPair {
        CutoffPair { p, taper: self.pack.taper }
    }

    /// Decay-check lattice.
    pub fn sample_spec(&self, p: u32) -> SampleSpec {
        let extent = self.checks.extent.unwrap_or(self.grid.l);
        let spec = SampleSpec::standard(extent, self.checks.nx, p);
        if self.checks.real_w {
            spec.real_w()
        } else {
            spec
        }
    }

    /// Linear problem with coefficients frozen at `u₀`.
    pub fn linear_problem(&self, coeffs: &CoefficientSet, u0: &Field) -> LinearProblem {
        let mut lp = LinearProblem::new(coeffs.clone(), u0.clone(), self.solver.horizon);
        lp.frozen = if coeffs.is_w_independent() { FrozenState::Zero } else { FrozenState::Static(u0.clone()) };
        lp.dt = self.solver.dt;
        lp.save_every = self.solver.save_every;
        lp.s = self.audit.s;
        lp.layer = self.solver.layer;
        lp
    }

    /// Semilinear problem.
    pub fn semilinear_problem(&self, coeffs: &CoefficientSet, u0: &Field) -> Result<SemilinearProblem> {
        let dt = self.solver.dt.ok_or_else(|| PevoError::Config("solver.dt is required in newton mode".into()))?;
        let mut sp = SemilinearProblem::new(coeffs.clone(), u0.clone(), self.solver.horizon, dt);
        sp.s = self.solver.s;
        sp.tol = self.solver.tol;
        sp.max_iter = self.solver.max_iter;
        sp.epsilon = self.solver.epsilon;
        sp.target = self.solver.target;
        sp.smoothing = self.solver.smoothing;
        sp.seed = match self.solver.seed {
            SeedKind::Taylor => Seed::Taylor,
            SeedKind::Zero => Seed::Zero,
            SeedKind::Initial => Seed::Initial,
        };
        Ok(sp)
    }
}

/// JSON Schema of [`RunConfig`] (published as `configs/run-config.schema.json`).
///
/// Structural rules (field names, types, enumerations, required blocks) are
/// exactly those of the parser; cross-field rules such as `T*/Δt ∈ ℕ` are
/// enforced by [`RunConfig::validate`].
pub fn config_schema() -> serde_json::Value {
    let mut schema = serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schema serializes");
    schema["$id"] = format!("https://pevo.invalid/run-config/v{SCHEMA_VERSION}.schema.json").into();
    schema["title"] = "pevo run configuration".into();
    schema
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Pipeline stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Decay-condition check.
    Check,
    /// Constant tuning (or the fixed pack of `skip_tune`).
    Tune,
    /// Linear solve.
    SolveLinear,
    /// Newton solve.
    Newton,
    /// Energy audit.
    Audit,
}

/// Stages of each CLI subcommand.
pub fn stages_for(command: &str, config: &RunConfig) -> Result<Vec<Stage>> {
    Ok(match command {
        "check" => vec![Stage::Check],
        "tune" => vec![Stage::Tune],
        "solve-linear" => vec![Stage::Tune, Stage::SolveLinear],
        "solve" => vec![Stage::Newton],
        "audit" => match config.solver.mode {
            SolveMode::Linear => vec![Stage::Tune, Stage::SolveLinear, Stage::Audit],
            SolveMode::Newton => vec![Stage::Newton, Stage::Audit],
        },
        "pipeline" => match config.solver.mode {
            SolveMode::Linear => vec![Stage::Check, Stage::Tune, Stage::SolveLinear, Stage::Audit],
            SolveMode::Newton => vec![Stage::Check, Stage::Tune, Stage::Newton, Stage::Audit],
        },
        other => return Err(PevoError::Config(format!("unknown command {other}"))),
    })
}

/// Machine-readable failure record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FailureRecord {
    /// Failing stage.
    pub stage: Stage,
    /// Exit code.
    pub exit_code: i32,
    /// Message.
    pub message: String,
}

/// Pack report written to `pack-report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct PackReport {
    /// Whether tuning ran.
    pub tuned: bool,
    /// Pack summary.
    pub pack: PackSummary,
    /// Tuning report (when tuned).
    pub tuning: Option<TuneReport>,
}

/// Result of [`run_pipeline`].
#[derive(Debug)]
pub struct RunOutcome {
    /// Process exit code (0 iff every enabled gate passed).
    pub exit_code: i32,
    /// Failure record, if any.
    pub failure: Option<FailureRecord>,
    /// Decay report.
    pub decay: Option<DecayReport>,
    /// Pack report.
    pub pack: Option<PackReport>,
    /// Newton report.
    pub newton: Option<NewtonReport>,
    /// Energy audit.
    pub audit: Option<EnergyAudit>,
    /// Final trajectory (v in linear mode, u in Newton mode).
    pub trajectory: Option<Trajectory>,
    /// Files written.
    pub artifacts: Vec<PathBuf>,
}

/// Exit code of an error.
pub fn exit_code_for(err: &PevoError, stage: Stage) -> i32 {
    match err {
        PevoError::Config(_) => EXIT_CONFIG,
        PevoError::Instability { .. } => EXIT_INSTABILITY,
        PevoError::Nonconvergence(_) => EXIT_NEWTON,
        PevoError::Tuning(_) | PevoError::Certification { .. } => EXIT_TUNING,
        _ => match stage {
            Stage::Check => EXIT_CONDITION,
            Stage::Tune => EXIT_TUNING,
            Stage::SolveLinear => EXIT_INSTABILITY,
            Stage::Newton => EXIT_NEWTON,
            Stage::Audit => EXIT_AUDIT,
        },
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    artifacts.push(path);
    Ok(())
}

struct Ctx {
    grid: Grid,
    coeffs: CoefficientSet,
    u0: Field,
    pack: Option<TransformPack>,
    /// `‖f_Λ‖₀`-free audit needs the frozen state of the solve.
    frozen: FrozenState,
    sigma: f64,
}

/// Runs the given stages for one configuration, writing artifacts to `out`
/// (when given). Never panics on bad input: every failure becomes an exit
/// code and a failure record.
pub fn run_pipeline(config: &RunConfig, stages: &[Stage], out: Option<&Path>) -> RunOutcome {
    let mut outcome = RunOutcome {
        exit_code: 0,
        failure: None,
        decay: None,
        pack: None,
        newton: None,
        audit: None,
        trajectory: None,
        artifacts: vec![],
    };
    if let Err(e) = run_inner(config, stages, out, &mut outcome) {
        let (stage, err) = e;
        let code = exit_code_for(&err, stage);
        outcome.exit_code = code;
        outcome.failure = Some(FailureRecord { stage, exit_code: code, message: err.to_string() });
    }
    if let (Some(dir), Some(f)) = (out, &outcome.failure) {
        let mut arts = vec![];
        if write_json(dir, "failure.json", f, &mut arts).is_ok() {
            outcome.artifacts.extend(arts);
        }
    }
    outcome
}

type StageResult<T> = std::result::Result<T, (Stage, PevoError)>;

fn run_inner(config: &RunConfig, stages: &[Stage], out: Option<&Path>, outcome: &mut RunOutcome) -> StageResult<()> {
    let cfg_err = |e: PevoError| (Stage::Check, PevoError::Config(e.to_string()));
    config.validate().map_err(|e| (Stage::Check, e))?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| (Stage::Check, PevoError::Config(format!("cannot create {}: {e}", dir.display()))))?;
        write_json(dir, "resolved-config.json", config, &mut outcome.artifacts).map_err(|e| (Stage::Check, e))?;
    }
    let grid = config.build_grid().map_err(cfg_err)?;
    let coeffs = config.scenario.coefficients(&grid).map_err(cfg_err)?;
    let u0 = config.build_initial(&grid).map_err(cfg_err)?;
    let mut ctx = Ctx { grid, coeffs, u0, pack: None, frozen: FrozenState::Zero, sigma: 0.0 };
    let p = ctx.coeffs.p;
    for &stage in stages {
        match stage {
            Stage::Check => {
                let report = check_conditions(&ctx.coeffs, &config.sample_spec(p)).map_err(|e| (stage, e))?;
                if let Some(dir) = out {
                    write_json(dir, "decay-report.json", &report, &mut outcome.artifacts).map_err(|e| (stage, e))?;
                }
                let pass = report.all_pass();
                let failures = report.failures();
                outcome.decay = Some(report);
                if config.checks.enabled && !pass {
                    return Err((stage, PevoError::Input(format!("decay conditions failed: {}", failures.join(", ")))));
                }
            }
            Stage::Tune => {
                let cut = config.cutoffs(p);
                let frozen_u = if ctx.coeffs.is_w_independent() { Field::zeros(&ctx.grid) } else { ctx.u0.clone() };
                let layer = config.solver.layer.map(|l| l.samples(&ctx.grid));
                let (pack, report) = if config.pack.skip_tune {
                    let m = config.pack.m.clone().unwrap_or_else(|| vec![0.0; (p - 1) as usize]);
                    let pack =
                        build_pack(p, &m, config.pack.tune.h_initial, &ctx.grid, &cut, config.pack.tune.neumann_order)
                            .map_err(|e| (stage, e))?;
                    let summary = pack.summary();
                    (pack, PackReport { tuned: false, pack: summary, tuning: None })
                } else {
                    let (pack, rep) = crate::lambda::tune_constants(
                        &ctx.coeffs,
                        &frozen_u,
                        &ctx.grid,
                        &cut,
                        &config.pack.tune,
                        layer.as_deref(),
                    )
                    .map_err(|e| (stage, e))?;
                    (pack, PackReport { tuned: true, pack: rep.pack.clone(), tuning: Some(rep) })
                };
                if let Some(dir) = out {
                    write_json(dir, "pack-report.json", &report, &mut outcome.artifacts).map_err(|e| (stage, e))?;
                }
                ctx.sigma = pack.sigma();
                ctx.pack = Some(pack);
                outcome.pack = Some(report);
            }
            Stage::SolveLinear => {
                let lp = config.linear_problem(&ctx.coeffs, &ctx.u0);
                ctx.frozen = lp.frozen.clone();
                let traj = match (&ctx.pack, config.solver.transformed) {
                    (Some(pack), true) if !pack.is_trivial() => {
                        let sol = solve_transformed(&lp, pack).map_err(|e| (stage, e))?;
                        sol.w
                    }
                    _ => solve_linear(&lp).map_err(|e| (stage, e))?,
                };
                outcome.trajectory = Some(traj);
            }
            Stage::Newton => {
                let sp = config.semilinear_problem(&ctx.coeffs, &ctx.u0).map_err(|e| (stage, e))?;
                let res = newton_solve(&sp).map_err(|e| (stage, e))?;
                if let Some(dir) = out {
                    write_json(dir, "newton-report.json", &res.report, &mut outcome.artifacts)
                        .map_err(|e| (stage, e))?;
                }
                ctx.frozen = FrozenState::Trajectory(res.solution.clone());
                let converged = res.report.converged;
                let msg = res.report.failure.clone();
                outcome.newton = Some(res.report);
                outcome.trajectory = Some(res.solution);
                if !converged {
                    return Err((stage, PevoError::Nonconvergence(msg.unwrap_or_default())));
                }
            }
            Stage::Audit => {
                let traj = outcome
                    .trajectory
                    .as_ref()
                    .ok_or_else(|| (stage, PevoError::Config("audit requires a solve stage".into())))?;
                let audit = energy_audit(traj, config.audit.s, ctx.sigma, &ctx.frozen, &ctx.coeffs, None, None);
                if let Some(dir) = out {
                    let path = dir.join("norms.csv");
                    let file = std::fs::File::create(&path).map_err(|e| (stage, e.into()))?;
                    audit.write_csv(std::io::BufWriter::new(file)).map_err(|e| (stage, e))?;
                    outcome.artifacts.push(path);
                }
                let pass = audit.pass();
                let margin = audit.margin;
                let gm = audit.gronwall_margin;
                outcome.audit = Some(audit);
                if config.audit.enabled && !pass {
                    return Err((
                        stage,
                        PevoError::Input(format!("energy audit failed (margin {margin:.4}, Gronwall margin {gm:.4})")),
                    ));
                }
            }
        }
    }
    if let (Some(dir), Some(traj)) = (out, &outcome.trajectory) {
        if config.output.frames {
            let path = dir.join("frames.bin");
            let file = std::fs::File::create(&path).map_err(|e| (Stage::Audit, e.into()))?;
            traj.write_frames(std::io::BufWriter::new(file)).map_err(|e| (Stage::Audit, e))?;
            outcome.artifacts.push(path);
        }
    }
    Ok(())
}
