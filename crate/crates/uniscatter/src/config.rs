//! Run configuration: JSON in, validated [`RunConfig`] out.
//!
//! Parsing walks the JSON tree by hand so that every violation is reported,
//! each under its dotted path (`model.coin_right.a`), instead of stopping at
//! the first one.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde_json::{Map, Value};
use uniscatter_core::free::Side;
use uniscatter_core::resolvent::EpsSchedule;
use uniscatter_core::scattering::PacketSchedule;
use uniscatter_core::walk::{build_coin_matrix, CoinField, CoinParams, Decay, Deviation, Mat2};
use uniscatter_core::{LatticeWindow, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

/// Every violation found in one config file.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", e.path, e.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ConfigErrors {
    pub fn mentions(&self, path: &str) -> bool {
        self.0.iter().any(|e| e.path == path)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub half_width: usize,
    pub field: CoinField,
    pub s: f64,
}

impl ModelConfig {
    pub fn window(&self) -> LatticeWindow {
        LatticeWindow::new(self.half_width).expect("half_width validated at parse time")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Numerics {
    pub eps: Vec<f64>,
    pub eps_order: usize,
    /// Time horizon paired with the smallest ε.
    pub horizon: usize,
    pub n_theta: usize,
    pub n_k: usize,
    pub sigmas: Vec<f64>,
    pub sigma_order: usize,
    pub exclusion_radius: f64,
    pub identity_tol: f64,
    pub cauchy_tol: f64,
}

impl Numerics {
    pub fn eps_schedule(&self) -> EpsSchedule {
        EpsSchedule::new(self.eps.clone(), self.eps_order).expect("schedule validated at parse time")
    }

    pub fn packet_schedule(&self) -> PacketSchedule {
        PacketSchedule { sigmas: self.sigmas.clone(), order: self.sigma_order, steps: self.horizon }
    }

    /// Time horizon matched to each ε so that `N ε` stays fixed.
    pub fn paired_steps(&self) -> Vec<usize> {
        let last = *self.eps.last().expect("non-empty schedule");
        self.eps.iter().map(|e| ((self.horizon as f64) * last / e).round().max(1.0) as usize).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StateSpec {
    /// Channel packet at `theta` on `side`, moving right or left.
    Packet { side: Side, right_moving: bool, theta: f64, sigma: f64, center: i64 },
    /// Random unit state on `|x| ≤ radius`.
    Local { radius: i64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunBlock {
    pub thetas: Vec<f64>,
    pub states: Vec<StateSpec>,
    pub out: String,
    pub threads: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub numerics: Numerics,
    pub run: RunBlock,
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigErrors> {
    let text = std::fs::read(path).map_err(|e| single(&path.display().to_string(), format!("cannot read: {e}")))?;
    let text = String::from_utf8(text).map_err(|_| single(&path.display().to_string(), "not valid UTF-8".into()))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigErrors> {
    let root: Value = serde_json::from_str(text).map_err(|e| single("$", format!("invalid JSON: {e}")))?;
    let ctx = Ctx::default();
    let cfg = read_root(&ctx, &root);
    let errors = ctx.errors.into_inner();
    match cfg {
        Some(cfg) if errors.is_empty() => Ok(cfg),
        _ if errors.is_empty() => Err(single("$", "invalid configuration".into())),
        _ => Err(ConfigErrors(errors)),
    }
}

fn single(path: &str, message: String) -> ConfigErrors {
    ConfigErrors(vec![ConfigError { path: path.into(), message }])
}

#[derive(Default)]
struct Ctx {
    errors: RefCell<Vec<ConfigError>>,
}

impl Ctx {
    fn push(&self, path: &str, message: impl Into<String>) {
        self.errors.borrow_mut().push(ConfigError { path: path.into(), message: message.into() });
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

struct Obj<'a> {
    ctx: &'a Ctx,
    path: String,
    map: &'a Map<String, Value>,
    known: RefCell<Vec<&'static str>>,
}

impl<'a> Obj<'a> {
    fn open(ctx: &'a Ctx, path: String, v: &'a Value) -> Option<Self> {
        match v.as_object() {
            Some(map) => Some(Self { ctx, path, map, known: RefCell::new(Vec::new()) }),
            None => {
                ctx.push(&path, "expected an object");
                None
            }
        }
    }

    fn at(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn get(&self, key: &'static str, required: bool) -> Option<&'a Value> {
        self.known.borrow_mut().push(key);
        let v = self.map.get(key);
        if v.is_none() && required {
            self.ctx.push(&self.at(key), "missing field");
        }
        v
    }

    fn f64_in(&self, key: &'static str, default: Option<f64>, check: impl Fn(f64) -> Option<String>) -> f64 {
        match self.get(key, default.is_none()) {
            None => default.unwrap_or(f64::NAN),
            Some(v) => match v.as_f64() {
                None => {
                    self.ctx.push(&self.at(key), "expected a number");
                    f64::NAN
                }
                Some(x) => {
                    if let Some(msg) = check(x) {
                        self.ctx.push(&self.at(key), msg);
                    }
                    x
                }
            },
        }
    }

    fn int_in(&self, key: &'static str, default: Option<i64>, lo: i64, hi: i64) -> i64 {
        match self.get(key, default.is_none()) {
            None => default.unwrap_or(lo),
            Some(v) => match v.as_i64() {
                None => {
                    self.ctx.push(&self.at(key), "expected an integer");
                    lo
                }
                Some(x) => {
                    if x < lo || x > hi {
                        self.ctx.push(&self.at(key), format!("{x} outside [{lo}, {hi}]"));
                    }
                    x.clamp(lo, hi)
                }
            },
        }
    }

    fn string(&self, key: &'static str, default: Option<&str>) -> String {
        match self.get(key, default.is_none()) {
            None => default.unwrap_or("").to_string(),
            Some(v) => match v.as_str() {
                Some(s) => s.to_string(),
                None => {
                    self.ctx.push(&self.at(key), "expected a string");
                    String::new()
                }
            },
        }
    }

    fn object(&self, key: &'static str, required: bool) -> Option<Obj<'a>> {
        self.get(key, required).and_then(|v| Obj::open(self.ctx, self.at(key), v))
    }

    fn array(&self, key: &'static str, required: bool) -> Option<(String, &'a Vec<Value>)> {
        let v = self.get(key, required)?;
        match v.as_array() {
            Some(a) => Some((self.at(key), a)),
            None => {
                self.ctx.push(&self.at(key), "expected an array");
                None
            }
        }
    }

    fn f64_list(&self, key: &'static str, default: &[f64], check: impl Fn(f64) -> Option<String>) -> Vec<f64> {
        let Some((path, items)) = self.array(key, false) else {
            return default.to_vec();
        };
        let mut out = Vec::with_capacity(items.len());
        for (i, v) in items.iter().enumerate() {
            let p = format!("{path}[{i}]");
            match v.as_f64() {
                Some(x) => {
                    if let Some(msg) = check(x) {
                        self.ctx.push(&p, msg);
                    }
                    out.push(x);
                }
                None => self.ctx.push(&p, "expected a number"),
            }
        }
        out
    }

    /// Rejects keys that were never asked for.
    fn finish(self) {
        let known = self.known.borrow();
        for key in self.map.keys() {
            if !known.contains(&key.as_str()) {
                self.ctx.push(&join(&self.path, key), "unknown key");
            }
        }
    }
}

fn range_msg(x: f64, ok: bool, range: &str) -> Option<String> {
    if ok {
        None
    } else {
        Some(format!("{x} outside {range}"))
    }
}

fn angle(x: f64) -> Option<String> {
    range_msg(x, x > -PI && x <= PI, "(-π, π]")
}

/// Coin parameters; `asymptote` demands `a > 0`, needed for purely absolutely continuous bands.
fn read_coin(o: &Obj, asymptote: bool) -> CoinParams {
    let a = if asymptote {
        o.f64_in("a", None, |a| range_msg(a, a > 0.0 && a <= 1.0, "(0, 1]"))
    } else {
        o.f64_in("a", None, |a| range_msg(a, (0.0..=1.0).contains(&a), "[0, 1]"))
    };
    let b_default = (1.0 - a * a).max(0.0).sqrt();
    let b = o.f64_in("b", Some(b_default), |b| range_msg(b, (0.0..=1.0).contains(&b), "[0, 1]"));
    let p = CoinParams {
        a,
        b,
        alpha: o.f64_in("alpha", Some(0.0), angle),
        beta: o.f64_in("beta", Some(0.0), angle),
        delta: o.f64_in("delta", Some(0.0), angle),
    };
    if a.is_finite() && b.is_finite() && (a * a + b * b - 1.0).abs() > 1e-12 {
        o.ctx.push(&o.path, format!("a² + b² = {} must equal 1", a * a + b * b));
    }
    p
}

fn coin_at(parent: &Obj, key: &'static str, asymptote: bool) -> CoinParams {
    match parent.object(key, true) {
        Some(o) => {
            let p = read_coin(&o, asymptote);
            o.finish();
            p
        }
        None => CoinParams::identity(),
    }
}

fn read_seed(ctx: &Ctx, path: &str, v: &Value) -> Mat2 {
    let zero = C64::new(0.0, 0.0);
    let mut m = [[zero; 2]; 2];
    let rows = v.as_array().filter(|r| r.len() == 2);
    let Some(rows) = rows else {
        ctx.push(path, "expected a 2×2 matrix of [re, im] pairs");
        return m;
    };
    for (i, row) in rows.iter().enumerate() {
        let Some(cols) = row.as_array().filter(|c| c.len() == 2) else {
            ctx.push(&format!("{path}[{i}]"), "expected two [re, im] pairs");
            continue;
        };
        for (j, entry) in cols.iter().enumerate() {
            let pair = entry.as_array().filter(|p| p.len() == 2).and_then(|p| Some(C64::new(p[0].as_f64()?, p[1].as_f64()?)));
            match pair {
                Some(z) => m[i][j] = z,
                None => ctx.push(&format!("{path}[{i}][{j}]"), "expected [re, im]"),
            }
        }
    }
    let herm = (0..2).all(|i| (0..2).all(|j| (m[i][j] - m[j][i].conj()).norm() < 1e-12));
    if !herm {
        ctx.push(path, "seed must be Hermitian");
    }
    let fro = m.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if fro > 1.0 + 1e-12 {
        ctx.push(path, format!("seed norm {fro} exceeds 1"));
    }
    m
}

fn read_deviation(model: &Obj, half_width: usize) -> Deviation {
    let Some(o) = model.object("deviation", false) else {
        return Deviation::None;
    };
    let kind = o.string("kind", None);
    let dev = match kind.as_str() {
        "none" => Deviation::None,
        "table" => {
            let mut table = Vec::new();
            if let Some((path, sites)) = o.array("sites", true) {
                for (i, site) in sites.iter().enumerate() {
                    let Some(s) = Obj::open(o.ctx, format!("{path}[{i}]"), site) else { continue };
                    let l = half_width as i64;
                    let x = s.int_in("x", None, -l, l);
                    let coin = coin_at(&s, "coin", false);
                    s.finish();
                    if let Ok(m) = build_coin_matrix(&coin) {
                        table.push((x, m));
                    }
                }
            }
            Deviation::Table(table)
        }
        "generator" => {
            let mut seeds = [[[C64::new(0.0, 0.0); 2]; 2]; 2];
            for (k, key) in ["seed_left", "seed_right"].into_iter().enumerate() {
                if let Some(v) = o.get(key, true) {
                    seeds[k] = read_seed(o.ctx, &o.at(key), v);
                }
            }
            Deviation::Generator { seed_left: seeds[0], seed_right: seeds[1] }
        }
        "" => Deviation::None,
        other => {
            o.ctx.push(&o.at("kind"), format!("unknown deviation kind {other:?}; expected none, table or generator"));
            Deviation::None
        }
    };
    o.finish();
    dev
}

fn read_decay(model: &Obj) -> Decay {
    let d = Decay::default();
    let Some(o) = model.object("decay", false) else {
        return d;
    };
    let kappa = |x: f64| range_msg(x, x >= 0.0 && x.is_finite(), "[0, ∞)");
    let eps = |x: f64| range_msg(x, x > 0.0 && x.is_finite(), "(0, ∞)");
    let out = Decay {
        kappa_left: o.f64_in("kappa_left", Some(d.kappa_left), kappa),
        eps_left: o.f64_in("eps_left", Some(d.eps_left), eps),
        kappa_right: o.f64_in("kappa_right", Some(d.kappa_right), kappa),
        eps_right: o.f64_in("eps_right", Some(d.eps_right), eps),
    };
    o.finish();
    out
}

fn read_model(root: &Obj) -> Option<ModelConfig> {
    let o = root.object("model", true)?;
    let half_width = o.int_in("half_width", None, 4, 1 << 20) as usize;
    let left = coin_at(&o, "coin_left", true);
    let right = coin_at(&o, "coin_right", true);
    let deviation = read_deviation(&o, half_width);
    let decay = read_decay(&o);
    let s = o.f64_in("s", Some(1.0), |s| range_msg(s, s > 0.5 && s.is_finite(), "(1/2, ∞)"));
    o.finish();
    Some(ModelConfig { half_width, field: CoinField { left, right, deviation, decay }, s })
}

fn decreasing(ctx: &Ctx, path: &str, v: &[f64]) {
    if v.is_empty() {
        ctx.push(path, "must not be empty");
    }
    if v.windows(2).any(|p| p[1] >= p[0]) {
        ctx.push(path, "must be strictly decreasing");
    }
}

fn read_numerics(root: &Obj) -> Numerics {
    let defaults = Numerics {
        eps: vec![0.04, 0.02, 0.01],
        eps_order: 2,
        horizon: 150,
        n_theta: 2048,
        n_k: 512,
        sigmas: vec![0.08, 0.06, 0.04],
        sigma_order: 1,
        exclusion_radius: 0.1,
        identity_tol: 1e-8,
        cauchy_tol: 1e-3,
    };
    let Some(o) = root.object("numerics", false) else {
        return defaults;
    };
    let eps = o.f64_list("eps_schedule", &defaults.eps, |e| range_msg(e, e > 1e-5 && e < 0.5, "(1e-5, 0.5)"));
    decreasing(o.ctx, &o.at("eps_schedule"), &eps);
    let eps_order = o.int_in("eps_order", Some(2), 0, 8) as usize;
    if eps_order >= eps.len().max(1) {
        o.ctx.push(&o.at("eps_order"), format!("order {eps_order} needs at least {} schedule entries", eps_order + 1));
    }
    let sigmas = o.f64_list("sigma_schedule", &defaults.sigmas, |s| range_msg(s, s > 0.0 && s < 0.5, "(0, 0.5)"));
    decreasing(o.ctx, &o.at("sigma_schedule"), &sigmas);
    let sigma_order = o.int_in("sigma_order", Some(1), 0, 8) as usize;
    if sigma_order >= sigmas.len().max(1) {
        o.ctx.push(&o.at("sigma_order"), format!("order {sigma_order} needs at least {} widths", sigma_order + 1));
    }
    let out = Numerics {
        eps,
        eps_order,
        horizon: o.int_in("horizon", Some(150), 1, 1 << 24) as usize,
        n_theta: o.int_in("n_theta", Some(2048), 512, 1 << 20) as usize,
        n_k: o.int_in("n_k", Some(512), 256, 1 << 20) as usize,
        sigmas,
        sigma_order,
        exclusion_radius: o.f64_in("exclusion_radius", Some(0.1), |r| range_msg(r, r > 0.0 && r < PI / 2.0, "(0, π/2)")),
        identity_tol: o.f64_in("identity_tol", Some(1e-8), |t| range_msg(t, t > 0.0 && t < 1.0, "(0, 1)")),
        cauchy_tol: o.f64_in("cauchy_tol", Some(1e-3), |t| range_msg(t, t > 0.0 && t < 1.0, "(0, 1)")),
    };
    for (key, n) in [("n_theta", out.n_theta), ("n_k", out.n_k)] {
        if !n.is_power_of_two() {
            o.ctx.push(&o.at(key), format!("{n} is not a power of two"));
        }
    }
    o.finish();
    out
}

fn read_state(ctx: &Ctx, path: String, v: &Value) -> Option<StateSpec> {
    let o = Obj::open(ctx, path, v)?;
    let kind = o.string("kind", None);
    let spec = match kind.as_str() {
        "packet" => {
            let side = match o.string("side", None).as_str() {
                "left" => Side::Left,
                "right" => Side::Right,
                other => {
                    ctx.push(&o.at("side"), format!("{other:?} is not left or right"));
                    Side::Left
                }
            };
            let right_moving = match o.string("moving", None).as_str() {
                "right" => true,
                "left" => false,
                other => {
                    ctx.push(&o.at("moving"), format!("{other:?} is not left or right"));
                    true
                }
            };
            Some(StateSpec::Packet {
                side,
                right_moving,
                theta: o.f64_in("theta", None, |t| range_msg(t, t.is_finite(), "finite values")),
                sigma: o.f64_in("sigma", Some(0.1), |s| range_msg(s, s > 0.0 && s < 0.5, "(0, 0.5)")),
                center: o.int_in("center", Some(0), -(1 << 20), 1 << 20),
            })
        }
        "local" => Some(StateSpec::Local {
            radius: o.int_in("radius", Some(4), 0, 1 << 20),
            seed: o.int_in("seed", Some(0), 0, i64::MAX) as u64,
        }),
        "" => None,
        other => {
            ctx.push(&o.at("kind"), format!("unknown state kind {other:?}; expected packet or local"));
            None
        }
    };
    o.finish();
    spec
}

fn read_run(root: &Obj) -> RunBlock {
    let mut run = RunBlock {
        thetas: Vec::new(),
        states: vec![StateSpec::Local { radius: 4, seed: 1 }, StateSpec::Local { radius: 4, seed: 2 }],
        out: "out".into(),
        threads: 1,
        seed: 0,
    };
    let Some(o) = root.object("run", false) else {
        return run;
    };
    run.thetas = o.f64_list("theta", &[], |t| range_msg(t, t.is_finite(), "finite values"));
    if let Some(g) = o.object("theta_grid", false) {
        if !run.thetas.is_empty() {
            o.ctx.push(&o.at("theta_grid"), "give either theta or theta_grid, not both");
        }
        let start = g.f64_in("start", None, |t| range_msg(t, t.is_finite(), "finite values"));
        let end = g.f64_in("end", None, |t| range_msg(t, t.is_finite(), "finite values"));
        let count = g.int_in("count", None, 1, 1 << 16) as usize;
        g.finish();
        run.thetas = grid(start, end, count);
    }
    if let Some((path, items)) = o.array("states", false) {
        run.states = items.iter().enumerate().filter_map(|(i, v)| read_state(o.ctx, format!("{path}[{i}]"), v)).collect();
    }
    run.out = o.string("out", Some("out"));
    run.threads = o.int_in("threads", Some(1), 1, 1024) as usize;
    run.seed = o.int_in("seed", Some(0), 0, i64::MAX) as u64;
    o.finish();
    run
}

/// `count` evenly spaced angles from `start` to `end` inclusive.
pub fn grid(start: f64, end: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![start];
    }
    (0..count).map(|i| start + (end - start) * i as f64 / (count - 1) as f64).collect()
}

fn read_root(ctx: &Ctx, root: &Value) -> Option<RunConfig> {
    let o = Obj::open(ctx, String::new(), root)?;
    let model = read_model(&o);
    let numerics = read_numerics(&o);
    let run = read_run(&o);
    o.finish();
    Some(RunConfig { model: model?, numerics, run })
}

/// Parses a comma-separated angle list such as `1.0,1.5708,2.0`.
pub fn parse_theta_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad angle {t:?}: {e}")).and_then(|x| if x.is_finite() { Ok(x) } else { Err(format!("bad angle {t:?}")) }))
        .collect()
}
