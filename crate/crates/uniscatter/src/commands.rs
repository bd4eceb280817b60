//! Subcommand bodies. Each returns a one-paragraph summary for stdout and
//! writes its tables under the output directory.

use std::fmt::Write as _;
use std::path::PathBuf;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use uniscatter_core::free::{band_functions, Fiber, FreeSpectrum, Side};
use uniscatter_core::math::TAU;
use uniscatter_core::resolvent::{delta_norm, delta_norm_bound, poisson_mass, RadialPoint, Resolvent, Sign};
use uniscatter_core::scattering::{
    ballistic_u, coefficients, fiber_vector, formula_parts, pm_bis_check, smatrix_formula, smatrix_packet, u_fiber,
    CoefficientKind, SMatrixSample,
};
use uniscatter_core::walk::{build_walk_with_weight, weight_sum, WalkModel};
use uniscatter_core::wave::{check_no_wrap, stationary_wave_apply, strong_wave_apply};
use uniscatter_core::{Error, Space, State, C64};

use crate::config::{parse_config, parse_theta_list, RunConfig, StateSpec};
use crate::output::{num, write_csv, write_json, Table};
use crate::{CliError, Command};

/// Loaded config with the assembled model.
pub struct Session {
    pub cfg: RunConfig,
    pub model: WalkModel,
    pub fs: FreeSpectrum,
    pub out: PathBuf,
    pub config_sha256: String,
}

impl Session {
    pub fn open(command: &Command) -> Result<Self, CliError> {
        let flags = command.flags();
        let mut cfg = parse_config(&flags.config)?;
        let bytes = std::fs::read(&flags.config).map_err(|source| CliError::Io { path: flags.config.clone(), source })?;
        let config_sha256 = format!("{:x}", Sha256::digest(&bytes));
        if let Some(list) = &flags.theta {
            cfg.run.thetas = parse_theta_list(list).map_err(|m| {
                CliError::Config(crate::ConfigErrors(vec![crate::config::ConfigError { path: "--theta".into(), message: m }]))
            })?;
        }
        if let Some(out) = &flags.out {
            cfg.run.out = out.display().to_string();
        }
        if let Some(t) = flags.threads {
            cfg.run.threads = t.max(1);
        }
        if let Some(s) = flags.seed {
            cfg.run.seed = s;
        }
        let model = build_walk_with_weight(&cfg.model.field, cfg.model.window(), cfg.model.s)?;
        let fs = FreeSpectrum::new(&model)?.with_exclusion(cfg.numerics.exclusion_radius);
        let out = PathBuf::from(&cfg.run.out);
        info!("model built: L = {}, threads = {}", cfg.model.half_width, cfg.run.threads);
        Ok(Self { cfg, model, fs, out, config_sha256 })
    }

    /// Test states from the run block, each with a printable label.
    pub fn states(&self) -> Result<Vec<(String, State)>, CliError> {
        self.cfg.run.states.iter().map(|spec| Ok((label(spec), self.build_state(spec, self.model.free_space())?))).collect()
    }

    fn build_state(&self, spec: &StateSpec, space: Space) -> Result<State, CliError> {
        match *spec {
            StateSpec::Local { radius, seed } => Ok(local_state(space, radius, mix_seed(seed, self.cfg.run.seed))),
            StateSpec::Packet { side, right_moving, theta, sigma, center } => {
                let fiber = self.fs.fiber_at(theta)?;
                let ch = fiber.channels.iter().find(|c| c.side == side && (c.drift() > 0.0) == right_moving).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "no {}-moving channel on the {} side at θ = {theta}",
                        if right_moving { "right" } else { "left" },
                        side_name(side)
                    ))
                })?;
                let psi = self.fs.wave_packet(ch, theta, sigma, center)?;
                if space == psi.space() {
                    Ok(psi)
                } else {
                    Err(CliError::Internal("packets live in the free space only".into()))
                }
            }
        }
    }
}

fn mix_seed(seed: u64, run_seed: u64) -> u64 {
    seed ^ run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn label(spec: &StateSpec) -> String {
    match *spec {
        StateSpec::Local { radius, seed } => format!("local(r={radius};seed={seed})"),
        StateSpec::Packet { side, right_moving, theta, sigma, center } => format!(
            "packet({};{};θ={};σ={};x={center})",
            side_name(side),
            if right_moving { "right" } else { "left" },
            num(theta),
            num(sigma)
        ),
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Left => "left",
        Side::Right => "right",
    }
}

fn sign_name(sign: Sign) -> &'static str {
    match sign {
        Sign::Plus => "plus",
        Sign::Minus => "minus",
    }
}

/// Unit vector with uniform random entries on `|x| ≤ radius`.
pub fn local_state(space: Space, radius: i64, seed: u64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = State::zeros(space);
    let copies = if matches!(space, Space::H0(_)) { 2 } else { 1 };
    let l = space.window().map_or(0, |w| w.half_width() as i64);
    let radius = radius.min(l);
    for copy in 0..copies {
        for x in -radius..=radius {
            for comp in 0..2 {
                s.set(copy, x, comp, C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            }
        }
    }
    let n = s.norm();
    s.scaled(C64::new(1.0 / n, 0.0))
}

pub fn execute(command: Command) -> Result<String, CliError> {
    let session = Session::open(&command)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(session.cfg.run.threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| match command {
        Command::Spectrum(_) => spectrum(&session).map(|s| s.summary),
        Command::Verify(_) => verify(&session).and_then(finish_verify),
        Command::Waveops(_) => waveops(&session).map(|s| s.summary),
        Command::Smatrix(_) => smatrix(&session).map(|s| s.summary),
        Command::Report(_) => report(&session),
    })
}

pub struct Outcome {
    pub summary: String,
    pub json: Value,
}

pub fn spectrum(s: &Session) -> Result<Outcome, CliError> {
    let n_k = s.cfg.numerics.n_k;
    let mut bands = Table::new(&["side", "branch", "k", "lambda", "velocity"]);
    let mut relation: f64 = 0.0;
    for (side, params) in [(Side::Left, &s.cfg.model.field.left), (Side::Right, &s.cfg.model.field.right)] {
        for b in band_functions(params, n_k)? {
            relation = relation.max(b.relation_residual);
            for i in 0..b.k.len() {
                bands.push(vec![
                    side_name(side).into(),
                    b.branch.to_string(),
                    num(b.k[i]),
                    num(b.lambda[i]),
                    num(b.velocity[i]),
                ]);
            }
        }
    }
    let thresholds = s.fs.thresholds();
    let mut th = Table::new(&["index", "theta"]);
    for (i, t) in thresholds.iter().enumerate() {
        th.push(vec![i.to_string(), num(*t)]);
    }
    let core = s.fs.core_spectrum();
    let mut arcs = Table::new(&["start", "end", "multiplicity"]);
    for &(a, b, m) in &core.pieces {
        arcs.push(vec![num(a), num(b), m.to_string()]);
    }
    write_csv(&s.out, "bands.csv", &bands)?;
    write_csv(&s.out, "thresholds.csv", &th)?;
    write_csv(&s.out, "arcs.csv", &arcs)?;
    let mut summary = String::from("thresholds:");
    for t in &thresholds {
        write!(summary, " {}", num(*t)).ok();
    }
    write!(summary, "\narcs: {}; band relation residual {}", core.pieces.len(), num(relation)).ok();
    let json = json!({
        "thresholds": thresholds,
        "arcs": core.pieces.iter().map(|&(a, b, m)| json!({"start": a, "end": b, "multiplicity": m})).collect::<Vec<_>>(),
        "band_relation_residual": relation,
    });
    Ok(Outcome { summary, json })
}

/// One named check with its residual against its tolerance.
#[derive(Clone, Debug)]
pub struct CheckRow {
    pub name: &'static str,
    pub op: &'static str,
    pub residual: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn pass(&self) -> bool {
        self.residual <= self.tolerance
    }
}

/// Radii on both sides of the circle, kept clear of `|z| = 1`.
fn sample_radius(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.5) {
        rng.gen_range(0.1..0.7)
    } else {
        rng.gen_range(1.5..3.0)
    }
}

pub fn verify(s: &Session) -> Result<(Vec<CheckRow>, Outcome), CliError> {
    let tol = s.cfg.numerics.identity_tol;
    let model = &s.model;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(0x5eed, s.cfg.run.seed));
    let (mut first, mut io, mut second, mut delta): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let radius = 6.min(model.window.half_width() as i64 / 2);
    for k in 0..8u64 {
        let v = local_state(model.hilbert(), radius, rng.gen());
        let z1 = C64::from_polar(sample_radius(&mut rng), rng.gen_range(0.0..TAU));
        let z2 = C64::from_polar(sample_radius(&mut rng), rng.gen_range(0.0..TAU));
        // R(z₁) - R(z₂) = (z₁ - z₂) R(z₁) U* R(z₂)
        let r1 = Resolvent::new(&model.u, z1)?;
        let (a, _) = r1.apply(&v, false)?;
        let (b, _) = Resolvent::new(&model.u, z2)?.apply(&v, false)?;
        let (rb, _) = r1.apply(&model.u.apply(&b, true)?, false)?;
        first = first.max(a.sub(&b).sub(&rb.scaled(z1 - z2)).norm());
        // R(1/z̄)* = -z U* R(z)
        let (outer, _) = Resolvent::new(&model.u, z1.conj().inv())?.apply(&v, true)?;
        io = io.max(outer.sub(&model.u.apply(&a, true)?.scaled(-z1)).norm());
        let psi0 = local_state(model.free_space(), radius, rng.gen());
        second = second.max(model.second_resolvent_residual(z1, &psi0)?);
        if k < 2 {
            let pt = RadialPoint::from_radius(sample_radius(&mut rng), rng.gen_range(0.0..TAU))?;
            // power iteration approaches the norm from below, so a loose stop keeps the bound check sound
            let n = delta_norm(&model.u, &pt, 1e-8)?;
            delta = delta.max(n / delta_norm_bound(pt.radius()) - 1.0);
        }
    }
    let v = local_state(model.hilbert(), radius, mix_seed(7, s.cfg.run.seed));
    let mass = poisson_mass(&model.u, 0.5, &v, s.cfg.numerics.n_theta)?;
    let f = &model.factorization;
    let hs = f.g0.hs_norm().powi(2);
    let hs_expected = 2.0 * weight_sum(model.window.half_width(), f.s);
    let psi0 = local_state(model.free_space(), radius, mix_seed(11, s.cfg.run.seed));
    let parseval = (s.fs.f0_norm_integral(&psi0, s.cfg.numerics.n_theta) - psi0.norm_sqr()).abs();
    let u0psi = model.u0.apply(&psi0, false)?;
    let mut diag: f64 = 0.0;
    for k in 0..32 {
        let t = TAU * (k as f64 + 0.5) / 32.0;
        let (Ok(a), Ok(b)) = (s.fs.f0_apply(&u0psi, t), s.fs.f0_apply(&psi0, t)) else { continue };
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            diag = diag.max((x - C64::from_polar(1.0, t) * y).norm());
        }
    }
    let rows = vec![
        CheckRow { name: "first_resolvent", op: "resolvent_apply", residual: first, tolerance: tol },
        CheckRow { name: "inside_outside", op: "resolvent_apply", residual: io, tolerance: tol },
        CheckRow { name: "second_resolvent", op: "second_resolvent_residual", residual: second, tolerance: tol },
        CheckRow { name: "poisson_mass", op: "poisson_mass", residual: (mass - v.norm_sqr()).abs(), tolerance: tol },
        CheckRow { name: "delta_norm_bound", op: "delta_norm", residual: delta.max(0.0), tolerance: 1e-10 },
        CheckRow { name: "factorization", op: "factorize_perturbation", residual: f.residual, tolerance: 1e-12 },
        CheckRow { name: "hilbert_schmidt_weight", op: "factorize_perturbation", residual: (hs - hs_expected).abs() / hs_expected, tolerance: 1e-12 },
        CheckRow { name: "parseval", op: "f0_norm_integral", residual: parseval, tolerance: 1e-6 },
        CheckRow { name: "diagonalization", op: "f0_apply", residual: diag, tolerance: tol },
    ];
    let mut table = Table::new(&["check", "op", "residual", "tolerance", "pass"]);
    for r in &rows {
        table.push(vec![r.name.into(), r.op.into(), num(r.residual), num(r.tolerance), r.pass().to_string()]);
    }
    write_csv(&s.out, "verify.csv", &table)?;
    let json = json!({
        "checks": rows.iter().map(|r| json!({
            "check": r.name, "op": r.op, "residual": r.residual, "tolerance": r.tolerance, "pass": r.pass()
        })).collect::<Vec<_>>(),
        "all_pass": rows.iter().all(CheckRow::pass),
    });
    write_json(&s.out, "verify.json", &json)?;
    let mut summary = String::new();
    for r in &rows {
        writeln!(summary, "{:<24} {} residual {} (tol {})", r.name, if r.pass() { "PASS" } else { "FAIL" }, num(r.residual), num(r.tolerance)).ok();
    }
    Ok((rows, Outcome { summary: summary.trim_end().into(), json }))
}

fn finish_verify((rows, out): (Vec<CheckRow>, Outcome)) -> Result<String, CliError> {
    let failed: Vec<String> = rows.iter().filter(|r| !r.pass()).map(|r| r.name.to_string()).collect();
    println!("{}", out.summary);
    if failed.is_empty() {
        Ok(format!("all {} checks pass", rows.len()))
    } else {
        Err(CliError::Failed(failed))
    }
}

pub fn waveops(s: &Session) -> Result<Outcome, CliError> {
    let nm = &s.cfg.numerics;
    let steps = nm.paired_steps();
    let states = s.states()?;
    let longest = steps.iter().copied().max().unwrap_or(0);
    for (_, psi) in &states {
        check_no_wrap(&s.model, psi, longest)?;
    }
    let mut cmp = Table::new(&[
        "state", "sign", "eps", "steps", "n_theta", "strong_norm", "stationary_norm", "difference", "strong_converged", "leakage",
    ]);
    let mut trace = Table::new(&["state", "sign", "steps", "n", "cauchy_step"]);
    let mut records = Vec::new();
    for (name, psi) in &states {
        for sign in [Sign::Plus, Sign::Minus] {
            let mut diffs = Vec::new();
            for (&eps, &n) in nm.eps.iter().zip(&steps) {
                let strong = strong_wave_apply(&s.model, sign, psi, n, nm.cauchy_tol)?;
                let st = stationary_wave_apply(&s.model, sign, psi, eps, nm.n_theta)?;
                let d = st.state.sub(&strong.state).norm();
                diffs.push(d);
                cmp.push(vec![
                    name.clone(),
                    sign_name(sign).into(),
                    num(eps),
                    n.to_string(),
                    nm.n_theta.to_string(),
                    num(strong.state.norm()),
                    num(st.state.norm()),
                    num(d),
                    strong.converged.to_string(),
                    num(strong.leakage),
                ]);
                for &(m, c) in &strong.trace {
                    trace.push(vec![name.clone(), sign_name(sign).into(), n.to_string(), m.to_string(), num(c)]);
                }
            }
            let decreasing = diffs.windows(2).all(|p| p[1] < p[0]);
            if !decreasing {
                warn!("{name} {}: strong/stationary gap not decreasing: {diffs:?}", sign_name(sign));
            }
            records.push(json!({"state": name, "sign": sign_name(sign), "differences": diffs, "decreasing": decreasing}));
        }
    }
    write_csv(&s.out, "waveops.csv", &cmp)?;
    write_csv(&s.out, "trace.csv", &trace)?;
    let mut summary = String::new();
    for r in &records {
        let last = r["differences"].as_array().and_then(|d| d.last()).and_then(Value::as_f64).unwrap_or(f64::NAN);
        writeln!(summary, "{} {}: last gap {} decreasing {}", r["state"].as_str().unwrap_or(""), r["sign"].as_str().unwrap_or(""), num(last), r["decreasing"]).ok();
    }
    Ok(Outcome { summary: summary.trim_end().into(), json: json!({ "comparisons": records, "steps": steps }) })
}

/// Everything computed at one angle.
pub struct ThetaResult {
    pub theta: f64,
    pub fiber: Fiber,
    pub samples: Vec<SMatrixSample>,
    pub ballistic_gap: f64,
    pub plus_minus: f64,
    pub formula_packet: f64,
    pub pm_bis: [f64; 2],
}

fn at_theta(s: &Session, theta: f64, psi: &State, phi: &State) -> Result<ThetaResult, CliError> {
    let nm = &s.cfg.numerics;
    let (model, fs) = (&s.model, &s.fs);
    let fiber = fs.fiber_at(theta)?;
    if fiber.dim() == 0 {
        return Ok(ThetaResult { theta, fiber, samples: Vec::new(), ballistic_gap: 0.0, plus_minus: 0.0, formula_packet: 0.0, pm_bis: [0.0; 2] });
    }
    let eps = nm.eps_schedule();
    let packets = nm.packet_schedule();
    let parts = formula_parts(model, fs, theta)?;
    let mut samples = Vec::new();
    let mut pm_bis = [0.0; 2];
    let mut ballistic_gap: f64 = 0.0;
    let f_psi = fiber_vector(fs, &parts.fiber, psi)?;
    let f_phi = fiber_vector(fs, &parts.fiber, phi)?;
    for (i, sign) in [Sign::Plus, Sign::Minus].into_iter().enumerate() {
        let u = u_fiber(model, fs, &parts.fiber, sign, &packets)?;
        ballistic_gap = ballistic_gap.max((&u.value - ballistic_u(&parts.fiber, sign)).norm());
        let sample = smatrix_formula(model, &parts, sign, &u.value, &eps)?;
        pm_bis[i] = pm_bis_check(model, &sample, &u.value, sign, &f_psi, &f_phi, psi, phi, &eps)?.residual;
        samples.push(sample);
    }
    samples.push(smatrix_packet(model, fs, &parts.fiber, &packets)?);
    let plus_minus = samples[0].modulus_distance(&samples[1]);
    let formula_packet = samples[0].modulus_distance(&samples[2]);
    Ok(ThetaResult { theta, fiber, samples, ballistic_gap, plus_minus, formula_packet, pm_bis })
}

fn schedule_label(s: &Session, sample: &SMatrixSample) -> String {
    let nm = &s.cfg.numerics;
    let join = |v: &[f64]| v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";");
    match sample.source {
        uniscatter_core::scattering::Source::PacketOracle => {
            format!("sigma={}/order={}/steps={}", join(&nm.sigmas), nm.sigma_order, nm.horizon)
        }
        _ => format!("eps={}/order={}", join(&nm.eps), nm.eps_order),
    }
}

pub fn smatrix(s: &Session) -> Result<Outcome, CliError> {
    let thetas = &s.cfg.run.thetas;
    if thetas.is_empty() {
        return Err(CliError::Core(Error::InvalidParameter("no angles given (run.theta, run.theta_grid or --theta)".into())));
    }
    let mut states = s.states()?;
    for seed in [101, 102] {
        if states.len() < 2 {
            let spec = StateSpec::Local { radius: 4, seed };
            states.push((label(&spec), s.build_state(&spec, s.model.free_space())?));
        }
    }
    let (psi, phi) = (&states[0].1, &states[1].1);
    // results come back in θ order whatever the completion order
    let results: Vec<ThetaResult> =
        thetas.par_iter().map(|&t| at_theta(s, t, psi, phi)).collect::<Result<Vec<_>, CliError>>()?;

    let mut sm = Table::new(&[
        "theta", "d_theta_sq", "source", "schedule", "row", "col", "re", "im", "modulus", "last_step", "correction",
        "plus_minus_distance", "formula_packet_distance", "u_ballistic_gap", "pm_bis_plus", "pm_bis_minus",
    ]);
    let mut co = Table::new(&["theta", "source", "from", "to", "from_side", "to_side", "kind", "value", "row_sum"]);
    let mut per_theta = Vec::new();
    for r in &results {
        let d = r.fiber.dim();
        if d == 0 {
            info!("θ = {} lies in a spectral gap; nothing to scatter", r.theta);
        }
        for sample in &r.samples {
            let sched = schedule_label(s, sample);
            let last = sample.steps.last().copied().unwrap_or(0.0);
            for row in 0..d {
                for col in 0..d {
                    let z = sample.matrix[(row, col)];
                    sm.push(vec![
                        num(r.theta),
                        (d * d).to_string(),
                        sample.source.label().into(),
                        sched.clone(),
                        row.to_string(),
                        col.to_string(),
                        num(z.re),
                        num(z.im),
                        num(z.norm()),
                        num(last),
                        num(sample.correction),
                        num(r.plus_minus),
                        num(r.formula_packet),
                        num(r.ballistic_gap),
                        num(r.pm_bis[0]),
                        num(r.pm_bis[1]),
                    ]);
                }
            }
            let c = coefficients(sample);
            for e in &c.entries {
                co.push(vec![
                    num(r.theta),
                    sample.source.label().into(),
                    e.from.to_string(),
                    e.to.to_string(),
                    side_name(r.fiber.channels[e.from].side).into(),
                    side_name(r.fiber.channels[e.to].side).into(),
                    match e.kind {
                        CoefficientKind::Transmission => "transmission",
                        CoefficientKind::Reflection => "reflection",
                    }
                    .into(),
                    num(e.value),
                    num(c.row_sums[e.to]),
                ]);
            }
        }
        per_theta.push(json!({
            "theta": r.theta,
            "d_theta": d,
            "plus_minus_distance": r.plus_minus,
            "formula_packet_distance": r.formula_packet,
            "u_ballistic_gap": r.ballistic_gap,
            "pm_bis_plus": r.pm_bis[0],
            "pm_bis_minus": r.pm_bis[1],
        }));
    }
    write_csv(&s.out, "smatrix.csv", &sm)?;
    write_csv(&s.out, "coefficients.csv", &co)?;
    let mut summary = String::new();
    for r in &results {
        writeln!(
            summary,
            "θ = {}: d = {}, |S₊|-|S₋| {}, formula vs packet {}, pm_bis {} / {}",
            num(r.theta),
            r.fiber.dim(),
            num(r.plus_minus),
            num(r.formula_packet),
            num(r.pm_bis[0]),
            num(r.pm_bis[1])
        )
        .ok();
    }
    Ok(Outcome { summary: summary.trim_end().into(), json: json!({ "states": [states[0].0, states[1].0], "angles": per_theta }) })
}

pub fn report(s: &Session) -> Result<String, CliError> {
    let spec = spectrum(s)?;
    let (rows, ver) = verify(s)?;
    let mut bundle = json!({
        "provenance": {
            "config_sha256": s.config_sha256,
            "command": "report",
            "uniscatter_version": env!("CARGO_PKG_VERSION"),
            "core_version": uniscatter_core::VERSION,
            "threads": s.cfg.run.threads,
            "seed": s.cfg.run.seed,
            "half_width": s.cfg.model.half_width,
        },
        "spectrum": spec.json,
        "verify": ver.json,
    });
    let mut summary = format!("{}\n{}", spec.summary, ver.summary);
    if !s.cfg.run.thetas.is_empty() {
        let sm = smatrix(s)?;
        summary = format!("{summary}\n{}", sm.summary);
        bundle["smatrix"] = sm.json;
    }
    if s.cfg.run.states.iter().any(|st| matches!(st, StateSpec::Packet { .. })) {
        let wo = waveops(s)?;
        summary = format!("{summary}\n{}", wo.summary);
        bundle["waveops"] = wo.json;
    }
    write_json(&s.out, "report.json", &bundle)?;
    println!("{summary}");
    let failed: Vec<String> = rows.iter().filter(|r| !r.pass()).map(|r| r.name.to_string()).collect();
    if failed.is_empty() {
        Ok(format!("report written to {}", s.out.join("report.json").display()))
    } else {
        Err(CliError::Failed(failed))
    }
}
