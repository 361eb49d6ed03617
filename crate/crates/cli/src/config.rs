//! Experiment configuration: JSON parsing, duplicate-key detection, and
//! exhaustive validation. Validation collects every violation it can find
//! instead of stopping at the first.

use mcflab_core::flow::{CutoffWindow, FlowConfig, Scheme};
use mcflab_core::graphgeom::GraphPatch;
use mcflab_core::patches;
use serde_json::{Map, Value};
use std::collections::HashSet;
use std::fmt;

pub const SCHEMA_VERSION: u64 = 1;
pub const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug)]
pub enum ConfigError {
    /// Malformed JSON, with the parser's position information.
    Parse(String),
    /// Semantic violations; always the complete list.
    Validation(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse(msg) => write!(f, "config parse error: {msg}"),
            ConfigError::Validation(errs) => {
                writeln!(f, "config validation failed ({} violation(s)):", errs.len())?;
                for e in errs {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
        }
    }
}

/// Recipe for one of the canonical graph patches.
#[derive(Debug, Clone)]
pub enum PatchRecipe {
    Sine {
        n: usize,
        m: usize,
        grid: usize,
        amps: Vec<f64>,
        freqs: Vec<f64>,
        phases: Vec<f64>,
    },
    Affine {
        n: usize,
        m: usize,
        lo: f64,
        hi: f64,
        grid: usize,
        offsets: Vec<f64>,
        slopes: Vec<Vec<f64>>,
    },
    GrimReaper {
        n: usize,
        m: usize,
        half_width: f64,
        grid: usize,
    },
    SphereCap {
        n: usize,
        radius: f64,
        extent: f64,
        grid: usize,
    },
}

impl PatchRecipe {
    pub fn build(&self) -> mcflab_core::Result<GraphPatch> {
        match self {
            PatchRecipe::Sine {
                n,
                m,
                grid,
                amps,
                freqs,
                phases,
            } => patches::sine_patch(*n, *m, *grid, amps, freqs, phases),
            PatchRecipe::Affine {
                n,
                m,
                lo,
                hi,
                grid,
                offsets,
                slopes,
            } => patches::affine_patch(*n, *m, *lo, *hi, *grid, offsets, slopes),
            PatchRecipe::GrimReaper {
                n,
                m,
                half_width,
                grid,
            } => patches::grim_reaper_patch(*n, *m, *half_width, *grid),
            PatchRecipe::SphereCap {
                n,
                radius,
                extent,
                grid,
            } => patches::sphere_cap_patch(*n, *radius, *extent, *grid),
        }
    }
}

/// Flow parameters before they are tied to a concrete patch; `dt = None`
/// means "derive from the CFL number and the grid spacing".
#[derive(Debug, Clone)]
pub struct FlowParams {
    pub dt: Option<f64>,
    pub scheme: Scheme,
    pub steps: usize,
    pub monitor_every: usize,
    pub k: f64,
    pub v0: f64,
    pub lambda0: f64,
    pub cutoff_r: f64,
    pub cutoff_t: Option<f64>,
    pub radii: Vec<f64>,
    pub cfl: f64,
}

impl FlowParams {
    /// Concrete flow configuration for the given patch.
    pub fn to_flow_config(&self, patch: &GraphPatch, seed: u64) -> FlowConfig {
        let h = patch.min_spacing();
        let dt = self.dt.unwrap_or(self.cfl * h * h);
        let cutoff_t = self.cutoff_t.unwrap_or(self.steps as f64 * dt);
        FlowConfig {
            dt,
            scheme: self.scheme,
            steps: self.steps,
            monitor_every: self.monitor_every,
            k: self.k,
            v0: self.v0,
            lambda0: self.lambda0,
            cutoff: CutoffWindow {
                r: self.cutoff_r,
                t: cutoff_t,
            },
            radii: self.radii.clone(),
            cfl: self.cfl,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolitonKindCfg {
    Shrinker,
    Translator,
}

/// Fully validated command payloads.
#[derive(Debug, Clone)]
pub enum CommandConfig {
    GrassmannCheck {
        n: usize,
        m: usize,
        trials: usize,
        max_angle: f64,
    },
    BoundScan {
        lambda0: f64,
        trials: usize,
        dims: Vec<(usize, usize)>,
        v0_list: Vec<f64>,
        big_lambda_list: Vec<f64>,
    },
    FlowRun {
        patch: PatchRecipe,
        flow: FlowParams,
    },
    EstimateSweep {
        patch: PatchRecipe,
        flow: FlowParams,
        r_list: Vec<f64>,
        t_list: Vec<f64>,
        variation_limit: f64,
    },
    SolitonCheck {
        kind: SolitonKindCfg,
        patch: PatchRecipe,
        v0: Option<Vec<f64>>,
        k2: f64,
        residual_threshold: f64,
        eps_hat: f64,
        slack_coefficient: f64,
        big_lambda: Option<f64>,
        r_list: Vec<f64>,
    },
}

/// A parsed and validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command_name: String,
    pub seed: u64,
    pub command: CommandConfig,
    /// Verbatim echo of the input for the run report.
    pub echo: Value,
}

/// Parse and validate. `expected_command` is the subcommand the binary was
/// invoked with; the config's own `command` field must agree.
pub fn validate_config(text: &str, expected_command: &str) -> Result<ExperimentConfig, ConfigError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;

    let mut errs = duplicate_keys(text);

    let map = match root.as_object() {
        Some(m) => m,
        None => {
            errs.push("top level must be a JSON object".into());
            return Err(ConfigError::Validation(errs));
        }
    };

    let mut v = Validator { errs };
    let common_keys = ["schema", "command", "seed"];
    let command = v.req_str(map, "command", "");

    match v.req_u64(map, "schema", "") {
        Some(s) if s != SCHEMA_VERSION => v
            .errs
            .push(format!("schema: unsupported version {s}, expected {SCHEMA_VERSION}")),
        _ => {}
    }
    let seed = v.opt_u64(map, "seed", "", 0);

    let cmd = match command.as_deref() {
        Some(c) if c == expected_command => Some(c.to_string()),
        Some(c) => {
            v.errs.push(format!(
                "command: config says \"{c}\" but the binary was invoked as \"{expected_command}\""
            ));
            None
        }
        None => None,
    };

    let parsed = match cmd.as_deref() {
        Some("grassmann-check") => v.grassmann_check(map, &common_keys),
        Some("bound-scan") => v.bound_scan(map, &common_keys),
        Some("flow-run") => v.flow_run(map, &common_keys),
        Some("estimate-sweep") => v.estimate_sweep(map, &common_keys),
        Some("soliton-check") => v.soliton_check(map, &common_keys),
        Some(other) => {
            v.errs.push(format!(
                "command: unknown command \"{other}\" (expected one of grassmann-check, \
                 bound-scan, flow-run, estimate-sweep, soliton-check)"
            ));
            None
        }
        None => None,
    };

    match (parsed, v.errs.is_empty()) {
        (Some(command), true) => Ok(ExperimentConfig {
            command_name: expected_command.to_string(),
            seed,
            command,
            echo: root,
        }),
        _ => Err(ConfigError::Validation(v.errs)),
    }
}

/// Report duplicate keys anywhere in the document. `serde_json` silently
/// keeps the last occurrence, so this walks the raw text. Assumes the text
/// already parsed as valid JSON.
fn duplicate_keys(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut errs = Vec::new();
    let mut pos = 0usize;
    skip_ws(bytes, &mut pos);
    scan_value(bytes, &mut pos, &mut errs);
    errs
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && matches!(bytes[*pos], b' ' | b'\t' | b'\n' | b'\r') {
        *pos += 1;
    }
}

fn scan_string(bytes: &[u8], pos: &mut usize) -> String {
    // bytes[*pos] == b'"'
    let start = *pos + 1;
    *pos += 1;
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'\\' => *pos += 2,
            b'"' => {
                let raw = String::from_utf8_lossy(&bytes[start..*pos]).into_owned();
                *pos += 1;
                return raw;
            }
            _ => *pos += 1,
        }
    }
    String::new()
}

fn scan_value(bytes: &[u8], pos: &mut usize, errs: &mut Vec<String>) {
    skip_ws(bytes, pos);
    if *pos >= bytes.len() {
        return;
    }
    match bytes[*pos] {
        b'{' => {
            *pos += 1;
            let mut seen: HashSet<String> = HashSet::new();
            loop {
                skip_ws(bytes, pos);
                if *pos >= bytes.len() {
                    return;
                }
                if bytes[*pos] == b'}' {
                    *pos += 1;
                    return;
                }
                if bytes[*pos] == b',' {
                    *pos += 1;
                    continue;
                }
                // a key
                let key = scan_string(bytes, pos);
                if !seen.insert(key.clone()) {
                    errs.push(format!("duplicate key \"{key}\""));
                }
                skip_ws(bytes, pos);
                if *pos < bytes.len() && bytes[*pos] == b':' {
                    *pos += 1;
                }
                scan_value(bytes, pos, errs);
            }
        }
        b'[' => {
            *pos += 1;
            loop {
                skip_ws(bytes, pos);
                if *pos >= bytes.len() {
                    return;
                }
                if bytes[*pos] == b']' {
                    *pos += 1;
                    return;
                }
                if bytes[*pos] == b',' {
                    *pos += 1;
                    continue;
                }
                scan_value(bytes, pos, errs);
            }
        }
        b'"' => {
            scan_string(bytes, pos);
        }
        _ => {
            // scalar: consume until a structural delimiter
            while *pos < bytes.len()
                && !matches!(bytes[*pos], b',' | b'}' | b']' | b' ' | b'\t' | b'\n' | b'\r')
            {
                *pos += 1;
            }
        }
    }
}

/// Violation collector with typed field accessors. Accessors push an error
/// and return `None`/a default instead of aborting, so one pass reports
/// everything.
struct Validator {
    errs: Vec<String>,
}

impl Validator {
    fn path(ctx: &str, key: &str) -> String {
        if ctx.is_empty() {
            key.to_string()
        } else {
            format!("{ctx}.{key}")
        }
    }

    fn reject_unknown(&mut self, map: &Map<String, Value>, allowed: &[&str], ctx: &str) {
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                self.errs.push(format!(
                    "{}: unknown key (allowed: {})",
                    Self::path(ctx, key),
                    allowed.join(", ")
                ));
            }
        }
    }

    fn req_obj<'v>(
        &mut self,
        map: &'v Map<String, Value>,
        key: &str,
        ctx: &str,
    ) -> Option<&'v Map<String, Value>> {
        match map.get(key) {
            Some(Value::Object(o)) => Some(o),
            Some(_) => {
                self.errs
                    .push(format!("{}: must be an object", Self::path(ctx, key)));
                None
            }
            None => {
                self.errs
                    .push(format!("{}: missing required key", Self::path(ctx, key)));
                None
            }
        }
    }

    fn req_str(&mut self, map: &Map<String, Value>, key: &str, ctx: &str) -> Option<String> {
        match map.get(key) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.errs
                    .push(format!("{}: must be a string", Self::path(ctx, key)));
                None
            }
            None => {
                self.errs
                    .push(format!("{}: missing required key", Self::path(ctx, key)));
                None
            }
        }
    }

    fn req_u64(&mut self, map: &Map<String, Value>, key: &str, ctx: &str) -> Option<u64> {
        match map.get(key) {
            Some(v) => match v.as_u64() {
                Some(x) => Some(x),
                None => {
                    self.errs.push(format!(
                        "{}: must be a non-negative integer",
                        Self::path(ctx, key)
                    ));
                    None
                }
            },
            None => {
                self.errs
                    .push(format!("{}: missing required key", Self::path(ctx, key)));
                None
            }
        }
    }

    fn opt_u64(&mut self, map: &Map<String, Value>, key: &str, ctx: &str, default: u64) -> u64 {
        match map.get(key) {
            Some(v) => match v.as_u64() {
                Some(x) => x,
                None => {
                    self.errs.push(format!(
                        "{}: must be a non-negative integer",
                        Self::path(ctx, key)
                    ));
                    default
                }
            },
            None => default,
        }
    }

    fn opt_usize(&mut self, map: &Map<String, Value>, key: &str, ctx: &str, default: usize) -> usize {
        self.opt_u64(map, key, ctx, default as u64) as usize
    }

    fn req_f64(&mut self, map: &Map<String, Value>, key: &str, ctx: &str) -> Option<f64> {
        match map.get(key) {
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => Some(x),
                _ => {
                    self.errs
                        .push(format!("{}: must be a finite number", Self::path(ctx, key)));
                    None
                }
            },
            None => {
                self.errs
                    .push(format!("{}: missing required key", Self::path(ctx, key)));
                None
            }
        }
    }

    fn opt_f64(&mut self, map: &Map<String, Value>, key: &str, ctx: &str, default: f64) -> f64 {
        match map.get(key) {
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => x,
                _ => {
                    self.errs
                        .push(format!("{}: must be a finite number", Self::path(ctx, key)));
                    default
                }
            },
            None => default,
        }
    }

    fn f64_list(
        &mut self,
        map: &Map<String, Value>,
        key: &str,
        ctx: &str,
        default: Option<Vec<f64>>,
    ) -> Vec<f64> {
        match map.get(key) {
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    match item.as_f64() {
                        Some(x) if x.is_finite() => out.push(x),
                        _ => self.errs.push(format!(
                            "{}[{i}]: must be a finite number",
                            Self::path(ctx, key)
                        )),
                    }
                }
                out
            }
            Some(_) => {
                self.errs
                    .push(format!("{}: must be an array of numbers", Self::path(ctx, key)));
                default.unwrap_or_default()
            }
            None => match default {
                Some(d) => d,
                None => {
                    self.errs
                        .push(format!("{}: missing required key", Self::path(ctx, key)));
                    Vec::new()
                }
            },
        }
    }

    fn check_positive(&mut self, value: f64, what: &str) {
        if value <= 0.0 {
            self.errs.push(format!("{what}: must be positive, got {value}"));
        }
    }

    // ---- command payloads ----

    fn grassmann_check(
        &mut self,
        map: &Map<String, Value>,
        common: &[&str],
    ) -> Option<CommandConfig> {
        let mut allowed = common.to_vec();
        allowed.extend(["dims", "trials", "max_angle"]);
        self.reject_unknown(map, &allowed, "");
        let (n, m) = self.dims_pair(map)?;
        let trials = self.opt_usize(map, "trials", "", 1000);
        if trials == 0 {
            self.errs.push("trials: must be at least 1".into());
        }
        let max_angle = self.opt_f64(map, "max_angle", "", 1.4);
        if !(0.0 < max_angle && max_angle < std::f64::consts::FRAC_PI_2) {
            self.errs
                .push(format!("max_angle: must be in (0, pi/2), got {max_angle}"));
        }
        Some(CommandConfig::GrassmannCheck {
            n,
            m,
            trials,
            max_angle,
        })
    }

    fn dims_pair(&mut self, map: &Map<String, Value>) -> Option<(usize, usize)> {
        let dims = self.req_obj(map, "dims", "")?;
        self.reject_unknown(dims, &["n", "m"], "dims");
        let n = self.req_u64(dims, "n", "dims")? as usize;
        let m = self.req_u64(dims, "m", "dims")? as usize;
        if n == 0 || m == 0 {
            self.errs.push("dims: n and m must be at least 1".into());
            return None;
        }
        Some((n, m))
    }

    fn bound_scan(&mut self, map: &Map<String, Value>, common: &[&str]) -> Option<CommandConfig> {
        let mut allowed = common.to_vec();
        allowed.extend(["lambda0", "trials", "dims_list", "v0_list", "big_lambda_list"]);
        self.reject_unknown(map, &allowed, "");

        let lambda0 = self.req_f64(map, "lambda0", "");
        if let Some(l0) = lambda0 {
            if l0 >= 1.0 {
                self.errs.push("lambda0 must be < 1".into());
            }
            if l0 <= 0.0 {
                self.errs.push(format!("lambda0: must be positive, got {l0}"));
            }
        }
        let trials = self.opt_usize(map, "trials", "", 1000);
        if trials == 0 {
            self.errs.push("trials: must be at least 1".into());
        }

        let mut dims = Vec::new();
        match map.get("dims_list") {
            Some(Value::Array(items)) => {
                for (i, item) in items.iter().enumerate() {
                    let pair = item.as_array().and_then(|a| {
                        if a.len() == 2 {
                            Some((a[0].as_u64()?, a[1].as_u64()?))
                        } else {
                            None
                        }
                    });
                    match pair {
                        Some((n, m)) if n >= 1 && m >= 1 => {
                            if n > 6 || m > 6 {
                                self.errs.push(format!(
                                    "dims_list[{i}]: the eigen-oracle supports n, m <= 6, got ({n}, {m})"
                                ));
                            } else {
                                dims.push((n as usize, m as usize));
                            }
                        }
                        _ => self.errs.push(format!(
                            "dims_list[{i}]: must be a pair of positive integers [n, m]"
                        )),
                    }
                }
            }
            Some(_) => self
                .errs
                .push("dims_list: must be an array of [n, m] pairs".into()),
            None => dims = vec![(2, 2), (2, 3), (3, 3)],
        }

        let v0_list = self.f64_list(map, "v0_list", "", Some(Vec::new()));
        for v0 in &v0_list {
            if *v0 < 1.0 {
                self.errs
                    .push(format!("v0_list: slope bounds must be >= 1, got {v0}"));
            }
        }
        let big_lambda_list = self.f64_list(map, "big_lambda_list", "", Some(Vec::new()));
        for bl in &big_lambda_list {
            if !(0.0 < *bl && *bl < SQRT2) {
                self.errs
                    .push(format!("big_lambda_list: must lie in (0, sqrt(2)), got {bl}"));
            }
        }

        Some(CommandConfig::BoundScan {
            lambda0: lambda0?,
            trials,
            dims,
            v0_list,
            big_lambda_list,
        })
    }

    fn patch_recipe(&mut self, map: &Map<String, Value>) -> Option<PatchRecipe> {
        let patch = self.req_obj(map, "patch", "")?;
        let kind = self.req_str(patch, "kind", "patch")?;
        match kind.as_str() {
            "sine" => {
                self.reject_unknown(
                    patch,
                    &["kind", "n", "m", "grid", "amps", "freqs", "phases"],
                    "patch",
                );
                let n = self.req_u64(patch, "n", "patch")? as usize;
                let m = self.req_u64(patch, "m", "patch")? as usize;
                let grid = self.req_u64(patch, "grid", "patch")? as usize;
                let amps = self.f64_list(patch, "amps", "patch", None);
                let freqs = self.f64_list(patch, "freqs", "patch", None);
                let phases =
                    self.f64_list(patch, "phases", "patch", Some(vec![0.0; m]));
                if amps.len() != m {
                    self.errs
                        .push(format!("patch.amps: expected {m} entries, got {}", amps.len()));
                }
                if freqs.len() != n {
                    self.errs.push(format!(
                        "patch.freqs: expected {n} entries, got {}",
                        freqs.len()
                    ));
                }
                if phases.len() != m {
                    self.errs.push(format!(
                        "patch.phases: expected {m} entries, got {}",
                        phases.len()
                    ));
                }
                self.check_grid(grid);
                if amps.len() != m || freqs.len() != n || phases.len() != m || grid < 5 {
                    return None;
                }
                Some(PatchRecipe::Sine {
                    n,
                    m,
                    grid,
                    amps,
                    freqs,
                    phases,
                })
            }
            "affine" => {
                self.reject_unknown(
                    patch,
                    &["kind", "n", "m", "lo", "hi", "grid", "offsets", "slopes"],
                    "patch",
                );
                let n = self.req_u64(patch, "n", "patch")? as usize;
                let m = self.req_u64(patch, "m", "patch")? as usize;
                let lo = self.opt_f64(patch, "lo", "patch", -1.0);
                let hi = self.opt_f64(patch, "hi", "patch", 1.0);
                if lo >= hi {
                    self.errs
                        .push(format!("patch: lo must be below hi, got [{lo}, {hi}]"));
                }
                let grid = self.req_u64(patch, "grid", "patch")? as usize;
                self.check_grid(grid);
                let offsets = self.f64_list(patch, "offsets", "patch", Some(vec![0.0; m]));
                if offsets.len() != m {
                    self.errs.push(format!(
                        "patch.offsets: expected {m} entries, got {}",
                        offsets.len()
                    ));
                }
                let mut slopes = Vec::new();
                match patch.get("slopes") {
                    Some(Value::Array(rows)) if rows.len() == m => {
                        for (a, row) in rows.iter().enumerate() {
                            let parsed: Option<Vec<f64>> = row
                                .as_array()
                                .filter(|r| r.len() == n)
                                .map(|r| r.iter().filter_map(|x| x.as_f64()).collect());
                            match parsed {
                                Some(r) if r.len() == n => slopes.push(r),
                                _ => self.errs.push(format!(
                                    "patch.slopes[{a}]: must be an array of {n} numbers"
                                )),
                            }
                        }
                    }
                    Some(_) => self
                        .errs
                        .push(format!("patch.slopes: must be an {m} x {n} array")),
                    None => slopes = vec![vec![0.0; n]; m],
                }
                if slopes.len() != m || offsets.len() != m || lo >= hi || grid < 5 {
                    return None;
                }
                Some(PatchRecipe::Affine {
                    n,
                    m,
                    lo,
                    hi,
                    grid,
                    offsets,
                    slopes,
                })
            }
            "grim-reaper" => {
                self.reject_unknown(patch, &["kind", "n", "m", "half_width", "grid"], "patch");
                let n = self.req_u64(patch, "n", "patch")? as usize;
                let m = self.req_u64(patch, "m", "patch")? as usize;
                let half_width = self.req_f64(patch, "half_width", "patch")?;
                if !(0.0 < half_width && half_width < std::f64::consts::FRAC_PI_2) {
                    self.errs.push(format!(
                        "patch.half_width: must lie in (0, pi/2), got {half_width}"
                    ));
                    return None;
                }
                let grid = self.req_u64(patch, "grid", "patch")? as usize;
                self.check_grid(grid);
                if grid < 5 {
                    return None;
                }
                Some(PatchRecipe::GrimReaper {
                    n,
                    m,
                    half_width,
                    grid,
                })
            }
            "sphere-cap" => {
                self.reject_unknown(patch, &["kind", "n", "radius", "extent", "grid"], "patch");
                let n = self.req_u64(patch, "n", "patch")? as usize;
                let radius = self.req_f64(patch, "radius", "patch")?;
                let extent = self.req_f64(patch, "extent", "patch")?;
                self.check_positive(radius, "patch.radius");
                self.check_positive(extent, "patch.extent");
                if extent * (n as f64).sqrt() >= radius {
                    self.errs.push(format!(
                        "patch: extent * sqrt(n) = {} must stay below radius = {radius}",
                        extent * (n as f64).sqrt()
                    ));
                    return None;
                }
                let grid = self.req_u64(patch, "grid", "patch")? as usize;
                self.check_grid(grid);
                if grid < 5 || radius <= 0.0 || extent <= 0.0 {
                    return None;
                }
                Some(PatchRecipe::SphereCap {
                    n,
                    radius,
                    extent,
                    grid,
                })
            }
            other => {
                self.errs.push(format!(
                    "patch.kind: unknown kind \"{other}\" (expected sine, affine, grim-reaper, \
                     or sphere-cap)"
                ));
                None
            }
        }
    }

    fn check_grid(&mut self, grid: usize) {
        if grid < 5 {
            self.errs
                .push(format!("patch.grid: must be at least 5, got {grid}"));
        }
    }

    fn flow_params(&mut self, map: &Map<String, Value>) -> Option<FlowParams> {
        let flow = match map.get("flow") {
            Some(Value::Object(o)) => o,
            Some(_) => {
                self.errs.push("flow: must be an object".into());
                return None;
            }
            None => &Map::new(), // all defaults
        };
        self.reject_unknown(
            flow,
            &[
                "dt",
                "scheme",
                "steps",
                "monitor_every",
                "k",
                "v0",
                "lambda0",
                "cutoff_r",
                "cutoff_t",
                "radii",
                "cfl",
            ],
            "flow",
        );
        let dt = match flow.get("dt") {
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() && x > 0.0 => Some(x),
                _ => {
                    self.errs.push("flow.dt: must be a positive number".into());
                    None
                }
            },
            None => None, // derived from cfl later
        };
        let scheme = match flow.get("scheme") {
            None => Scheme::Euler,
            Some(Value::String(s)) if s == "euler" => Scheme::Euler,
            Some(Value::String(s)) if s == "rk2" => Scheme::Rk2,
            Some(_) => {
                self.errs
                    .push("flow.scheme: must be \"euler\" or \"rk2\"".into());
                Scheme::Euler
            }
        };
        let steps = self.opt_usize(flow, "steps", "flow", 100);
        if steps == 0 {
            self.errs.push("flow.steps: must be at least 1".into());
        }
        let monitor_every = self.opt_usize(flow, "monitor_every", "flow", 1);
        if monitor_every == 0 {
            self.errs.push("flow.monitor_every: must be at least 1".into());
        }
        let k = self.opt_f64(flow, "k", "flow", 0.0);
        if k < 0.0 {
            self.errs.push(format!("flow.k: must be non-negative, got {k}"));
        }
        let v0 = self.opt_f64(flow, "v0", "flow", 2.9);
        if !(1.0 < v0 && v0 < 3.0) {
            self.errs.push(format!(
                "flow.v0: the slope bound must lie in (1, 3), got {v0}"
            ));
        }
        let lambda0 = self.opt_f64(flow, "lambda0", "flow", 0.9);
        if lambda0 >= 1.0 {
            self.errs.push("lambda0 must be < 1".into());
        } else if lambda0 <= 0.0 {
            self.errs
                .push(format!("flow.lambda0: must be positive, got {lambda0}"));
        }
        let cutoff_r = self.opt_f64(flow, "cutoff_r", "flow", 4.0);
        self.check_positive(cutoff_r, "flow.cutoff_r");
        let cutoff_t = match flow.get("cutoff_t") {
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() && x > 0.0 => Some(x),
                _ => {
                    self.errs
                        .push("flow.cutoff_t: must be a positive number".into());
                    None
                }
            },
            None => None,
        };
        let radii = self.f64_list(flow, "radii", "flow", Some(vec![1.0, 2.0, 4.0]));
        for r in &radii {
            if *r <= 0.0 {
                self.errs
                    .push(format!("flow.radii: radii must be positive, got {r}"));
            }
        }
        let cfl = self.opt_f64(flow, "cfl", "flow", 0.2);
        if !(0.0 < cfl && cfl <= 0.5) {
            self.errs
                .push(format!("flow.cfl: must lie in (0, 0.5], got {cfl}"));
        }
        Some(FlowParams {
            dt,
            scheme,
            steps,
            monitor_every,
            k,
            v0,
            lambda0,
            cutoff_r,
            cutoff_t,
            radii,
            cfl,
        })
    }

    fn flow_run(&mut self, map: &Map<String, Value>, common: &[&str]) -> Option<CommandConfig> {
        let mut allowed = common.to_vec();
        allowed.extend(["patch", "flow"]);
        self.reject_unknown(map, &allowed, "");
        let patch = self.patch_recipe(map);
        let flow = self.flow_params(map);
        Some(CommandConfig::FlowRun {
            patch: patch?,
            flow: flow?,
        })
    }

    fn estimate_sweep(
        &mut self,
        map: &Map<String, Value>,
        common: &[&str],
    ) -> Option<CommandConfig> {
        let mut allowed = common.to_vec();
        allowed.extend(["patch", "flow", "r_list", "t_list", "variation_limit"]);
        self.reject_unknown(map, &allowed, "");
        let patch = self.patch_recipe(map);
        let flow = self.flow_params(map);
        let r_list = self.f64_list(map, "r_list", "", None);
        let t_list = self.f64_list(map, "t_list", "", None);
        if r_list.is_empty() {
            self.errs.push("r_list: must not be empty".into());
        }
        if t_list.is_empty() {
            self.errs.push("t_list: must not be empty".into());
        }
        for x in r_list.iter().chain(&t_list) {
            if *x <= 0.0 {
                self.errs
                    .push(format!("r_list/t_list: entries must be positive, got {x}"));
            }
        }
        let variation_limit = self.opt_f64(map, "variation_limit", "", 2.0);
        if variation_limit <= 1.0 {
            self.errs.push(format!(
                "variation_limit: must exceed 1, got {variation_limit}"
            ));
        }
        // each R/2 must be monitored, i.e. listed among the flow radii
        if let Some(flow_ref) = &flow {
            for r in &r_list {
                let half = r / 2.0;
                if !flow_ref
                    .radii
                    .iter()
                    .any(|&m| (m - half).abs() <= 1e-9 * half.max(1.0))
                {
                    self.errs.push(format!(
                        "r_list: R = {r} needs R/2 = {half} among flow.radii so that \
                         sup |B| over the half ball is monitored"
                    ));
                }
            }
        }
        Some(CommandConfig::EstimateSweep {
            patch: patch?,
            flow: flow?,
            r_list,
            t_list,
            variation_limit,
        })
    }

    fn soliton_check(
        &mut self,
        map: &Map<String, Value>,
        common: &[&str],
    ) -> Option<CommandConfig> {
        let mut allowed = common.to_vec();
        allowed.extend([
            "kind",
            "patch",
            "v0",
            "k2",
            "residual_threshold",
            "eps_hat",
            "slack_coefficient",
            "big_lambda",
            "r_list",
        ]);
        self.reject_unknown(map, &allowed, "");
        let kind = match self.req_str(map, "kind", "").as_deref() {
            Some("shrinker") => Some(SolitonKindCfg::Shrinker),
            Some("translator") => Some(SolitonKindCfg::Translator),
            Some(other) => {
                self.errs.push(format!(
                    "kind: must be \"shrinker\" or \"translator\", got \"{other}\""
                ));
                None
            }
            None => None,
        };
        let patch = self.patch_recipe(map);
        let v0 = match map.get("v0") {
            Some(_) => {
                let list = self.f64_list(map, "v0", "", None);
                let norm = list.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm <= 0.0 {
                    self.errs.push("v0: must be a nonzero vector".into());
                }
                Some(list)
            }
            None => None,
        };
        if kind == Some(SolitonKindCfg::Translator) && v0.is_none() {
            self.errs
                .push("v0: required for a translator (the translation direction)".into());
        }
        let k2 = self.opt_f64(map, "k2", "", 0.1);
        if k2 < 0.0 {
            self.errs.push(format!("k2: must be non-negative, got {k2}"));
        }
        let residual_threshold = self.opt_f64(map, "residual_threshold", "", 1e-3);
        self.check_positive(residual_threshold, "residual_threshold");
        let eps_hat = self.opt_f64(map, "eps_hat", "", 0.0);
        if eps_hat < 0.0 {
            self.errs
                .push(format!("eps_hat: must be non-negative, got {eps_hat}"));
        }
        let slack_coefficient = self.opt_f64(map, "slack_coefficient", "", 50.0);
        self.check_positive(slack_coefficient, "slack_coefficient");
        let big_lambda = match map.get("big_lambda") {
            Some(v) => match v.as_f64() {
                Some(x) if 0.0 < x && x < SQRT2 => Some(x),
                _ => {
                    self.errs
                        .push("big_lambda: must lie in (0, sqrt(2))".into());
                    None
                }
            },
            None => None,
        };
        let r_list = self.f64_list(map, "r_list", "", Some(Vec::new()));
        for r in &r_list {
            if *r <= 0.0 {
                self.errs
                    .push(format!("r_list: entries must be positive, got {r}"));
            }
        }
        if big_lambda.is_some() && r_list.is_empty() {
            self.errs
                .push("r_list: required when big_lambda requests the localized bound".into());
        }
        Some(CommandConfig::SolitonCheck {
            kind: kind?,
            patch: patch?,
            v0,
            k2,
            residual_threshold,
            eps_hat,
            slack_coefficient,
            big_lambda,
            r_list,
        })
    }
}
