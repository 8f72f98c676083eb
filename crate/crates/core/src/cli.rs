//! Command-line driver: config loading, the `sparsify` and `verify` commands
//! and their CSV/JSON artifacts. Exit codes: 0 success, 1 a hard invariant
//! failed, 2 invalid config or input, 3 sparsifier abort after all retries.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::{RunConfig, PRESETS, TRIAL_STREAM};
use crate::error::Error;
use crate::grid::GridFunction;
use crate::inputs::{random_pair, spike};
use crate::kernels::KernelFamily;
use crate::localnorms::{cz_decompose, StoppedFunction};
use crate::sparsifier::{sparsify, verify_sparsity};
use crate::verify::{
    adjoint_remainder_check, decay_diagnostics, domination_report, fitted_slope, lemma_checks,
    random_stopping_collection, weak11_diagnostic, DecayMode, DominationOptions, DEFAULT_P_SWEEP,
};
use crate::weights::power_weight_sweep;

#[derive(Debug, Parser)]
#[command(
    name = "sparsedom",
    version,
    about = "Sparse domination experiments on dyadic grids"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the sparse collection for the configured inputs.
    Sparsify {
        #[command(flatten)]
        run: RunArgs,
        /// Also write every exceptional set as a PBM bitmap.
        #[arg(long)]
        trace: bool,
    },
    /// Run verification suites and write their reports.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Print a preset as TOML, or list the presets.
    Config {
        #[arg(long)]
        preset: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration by name.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sparsifier threshold.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Domination,
    Lemmas,
    Weights,
    Weak11,
    Decay,
    All,
}

/// A command failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Invariant(Vec<String>),
    Invalid(String),
    Aborted(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invariant(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::Aborted(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Aborted(m) => Failure::Aborted(m),
            e => Failure::Invalid(e.to_string()),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invariant(v) => write!(f, "hard invariant failed:\n  {}", v.join("\n  ")),
            Failure::Invalid(m) => write!(f, "invalid: {m}"),
            Failure::Aborted(m) => write!(f, "sparsifier aborted: {m}"),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

pub fn main_with(cli: Cli) -> ExitCode {
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("sparsedom: {f}");
            ExitCode::from(f.code())
        }
    }
}

pub fn run(cli: Cli) -> Outcome<()> {
    match cli.command {
        Command::Sparsify { run, trace } => cmd_sparsify(&load(&run)?, trace),
        Command::Verify { run, suite } => cmd_verify(&load(&run)?, suite),
        Command::Config { preset: Some(name) } => {
            print!("{}", RunConfig::preset(&name)?.to_toml());
            Ok(())
        }
        Command::Config { preset: None } => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(())
        }
    }
}

/// Resolves the config from the arguments and validates it.
pub fn load(args: &RunArgs) -> Outcome<RunConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => {
            return Err(Failure::Invalid(
                "one of --config or --preset is required".into(),
            ))
        }
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(l) = args.lambda {
        cfg.lambda = Some(l);
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// artifacts

struct Artifacts {
    dir: PathBuf,
    hash: String,
}

impl Artifacts {
    fn new(cfg: &RunConfig) -> Outcome<Self> {
        std::fs::create_dir_all(&cfg.out)
            .map_err(|e| Failure::Invalid(format!("{}: {e}", cfg.out.display())))?;
        let a = Artifacts {
            dir: cfg.out.clone(),
            hash: cfg.hash(),
        };
        a.write("config.toml", cfg.to_toml().into_bytes())?;
        Ok(a)
    }

    fn write(&self, name: &str, bytes: Vec<u8>) -> Outcome<()> {
        let p = self.dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))
    }

    fn json(&self, name: &str, mut v: serde_json::Value) -> Outcome<()> {
        if let Some(o) = v.as_object_mut() {
            o.insert("config_hash".into(), json!(self.hash));
        }
        let mut text = serde_json::to_string_pretty(&v).expect("serializable");
        text.push('\n');
        self.write(name, text.into_bytes())
    }

    /// CSV with a leading `# config_hash` comment line.
    fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Outcome<()> {
        let mut out = format!("# config_hash: {}\n", self.hash).into_bytes();
        let mut w = csv::Writer::from_writer(&mut out);
        let err = |e: csv::Error| Failure::Invalid(format!("{name}: {e}"));
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush()
            .map_err(|e| Failure::Invalid(format!("{name}: {e}")))?;
        drop(w);
        self.write(name, out)
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// sparsify

pub fn cmd_sparsify(cfg: &RunConfig, trace: bool) -> Outcome<()> {
    let k = cfg.kernel()?;
    let (f1, f2) = cfg.inputs()?;
    let art = Artifacts::new(cfg)?;
    let (p1, p2) = (cfg.exponents.p1, cfg.exponents.p2);
    match sparsify(&k, &f1, &f2, p1, p2, cfg.sparsify_options())? {
        Err(fail) => {
            art.json("failure.json", json!({ "attempts": fail.attempts }))?;
            let msg = fail
                .attempts
                .iter()
                .map(|(l, a)| format!("λ = {l}: {a}"))
                .collect::<Vec<_>>()
                .join("; ");
            Err(Failure::Aborted(msg))
        }
        Ok((sc, cert)) => {
            let report = verify_sparsity(&sc);
            art.json(
                "collection.json",
                json!({ "collection": sc.to_json(), "sparsity": report }),
            )?;
            art.json("certificate.json", json!({ "certificate": cert.to_json() }))?;
            if trace {
                cert.write_trace(
                    &art.dir.join("trace"),
                    Some(&format!("config_hash: {}", art.hash)),
                )?;
            }
            println!(
                "{}: {} cubes, {} levels, λ = {} ({} retries), η = {:.4}, η(3Q) = {:.4}{}",
                cfg.name,
                sc.len(),
                cert.levels.len(),
                cert.lambda,
                cert.retries,
                sc.eta,
                sc.eta_dilated,
                if cert.degenerate {
                    ", degenerate input"
                } else {
                    ""
                }
            );
            let mut bad = Vec::new();
            if !cert.all_valid() {
                bad.push("a level certificate failed".to_string());
            }
            if !cert.scales_decrease() {
                bad.push("maximal scales did not decrease".to_string());
            }
            if !report.passed() {
                bad.push(format!("sparse collection audit failed: {report:?}"));
            }
            if bad.is_empty() {
                Ok(())
            } else {
                Err(Failure::Invariant(bad))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// verify

pub fn cmd_verify(cfg: &RunConfig, suite: Suite) -> Outcome<()> {
    let k = cfg.kernel()?;
    let art = Artifacts::new(cfg)?;
    let mut failures = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Domination {
        failures.extend(suite_domination(cfg, &k, &art)?);
    }
    if all || suite == Suite::Lemmas {
        failures.extend(suite_lemmas(cfg, &k, &art)?);
    }
    if all || suite == Suite::Weights {
        failures.extend(suite_weights(cfg, &art)?);
    }
    if all || suite == Suite::Weak11 {
        failures.extend(suite_weak11(cfg, &art)?);
    }
    if all || suite == Suite::Decay {
        failures.extend(suite_decay(cfg, &k, &art)?);
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(failures))
    }
}

fn suite_domination(cfg: &RunConfig, k: &KernelFamily, art: &Artifacts) -> Outcome<Vec<String>> {
    let opts = DominationOptions {
        sparsify: cfg.sparsify_options(),
        p_sweep: DEFAULT_P_SWEEP.to_vec(),
    };
    let (p1, p2) = (cfg.exponents.p1, cfg.exponents.p2);
    let mut failures = Vec::new();
    let (mut cells, mut sweep, mut pairs) = (Vec::new(), Vec::new(), Vec::new());
    let mut constant = 0.0f64;
    for i in 0..cfg.trials.domination_pairs {
        let (f1, f2) = if i == 0 {
            cfg.inputs()?
        } else {
            random_pair(cfg.dim, cfg.m, &mut cfg.rng(TRIAL_STREAM + i as u64))?
        };
        let rep = match domination_report(k, &f1, &f2, p1, p2, &opts) {
            Ok(r) => r,
            Err(Error::Aborted(m)) => {
                failures.push(format!("domination pair {i}: sparsifier aborted: {m}"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if !rep.audit() {
            failures.push(format!("domination pair {i}: ratio audit failed"));
        }
        if rep.eta < 0.5 {
            failures.push(format!("domination pair {i}: η = {} < 1/2", rep.eta));
        }
        constant = constant.max(rep.max_ratio);
        for c in &rep.cells {
            cells.push(vec![
                i.to_string(),
                c.mu.to_string(),
                c.nu.to_string(),
                num(c.value),
                num(rep.psf),
                num(c.ratio),
            ]);
        }
        for r in &rep.p_sweep {
            sweep.push(vec![
                i.to_string(),
                num(r.p),
                num(r.psf),
                num(r.ratio),
                num(r.normalized),
            ]);
        }
        pairs.push(json!({
            "pair": i, "lambda": rep.lambda, "retries": rep.retries, "eta": rep.eta,
            "eta_dilated": rep.eta_dilated, "cubes": rep.cubes, "psf": rep.psf, "max_ratio": rep.max_ratio,
        }));
    }
    art.csv(
        "domination.csv",
        &["pair", "mu", "nu", "value", "psf", "ratio"],
        &cells,
    )?;
    art.csv(
        "p_sweep.csv",
        &["pair", "p", "psf", "ratio", "normalized"],
        &sweep,
    )?;
    art.json(
        "domination.json",
        json!({ "kernel": k.id(), "p1": p1, "p2": p2, "constant": constant, "pairs": pairs, "failures": failures }),
    )?;
    println!(
        "domination: {} pairs, measured constant {constant:.4}",
        cfg.trials.domination_pairs
    );
    Ok(failures)
}

/// Collections used by the lemma and adjoint trials: about twenty trials each.
fn collection_count(trials: usize) -> usize {
    trials.div_ceil(20).max(1)
}

fn random_h<R: rand::Rng>(
    coll: &crate::dyadic::StoppingCollection,
    rng: &mut R,
) -> Outcome<GridFunction> {
    let three = coll.top().dilate_cells(3.0);
    Ok(GridFunction::from_fn(coll.dim(), coll.m(), |p| {
        if three.contains(p) {
            rng.gen_range(-1.0..1.0)
        } else {
            0.0
        }
    })?)
}

fn suite_lemmas(cfg: &RunConfig, k: &KernelFamily, art: &Artifacts) -> Outcome<Vec<String>> {
    let mut rng = cfg.rng(TRIAL_STREAM + (1 << 16));
    let beta = cfg.exponents.beta;
    let mut failures = Vec::new();
    let (mut rows, mut summaries) = (Vec::new(), Vec::new());
    let n_coll = collection_count(cfg.trials.lemmas);
    let mut remaining = cfg.trials.lemmas;
    for c in 0..n_coll {
        let coll = random_stopping_collection(cfg.dim, cfg.m, true, &mut rng)?;
        let n = remaining.div_ceil(n_coll - c);
        remaining -= n;
        let rep = lemma_checks(k, &coll, n, beta, &mut rng)?;
        if !rep.flagged.is_empty() {
            failures.push(format!(
                "lemmas collection {c}: trials {:?} exceed the ceiling {}",
                rep.flagged, rep.ceiling
            ));
        }
        let cz = cz_decompose(
            &StoppedFunction::new(random_h(&coll, &mut rng)?, coll.clone())?,
            cfg.exponents.r,
        )?;
        if !cz.all_bounds_hold() || cz.reconstruction_error > 1e-12 {
            failures.push(format!(
                "lemmas collection {c}: CZ bounds or reconstruction failed"
            ));
        }
        for (i, t) in rep.trials.iter().enumerate() {
            rows.push(vec![
                c.to_string(),
                i.to_string(),
                t.mu.to_string(),
                t.nu.to_string(),
                num(t.uniform_lhs),
                num(t.uniform_rhs),
                num(t.trivial_lhs),
                num(t.trivial_rhs),
                t.trivial_j.to_string(),
                num(t.cancellation_lhs),
                num(t.cancellation_rhs),
            ]);
        }
        summaries.push(json!({
            "collection": c, "top": coll.top(), "members": coll.members().len(),
            "uniform": rep.uniform_constant, "trivial": rep.trivial_constant, "cancellation": rep.cancellation_constant,
            "cz_reconstruction": cz.reconstruction_error,
        }));
    }
    art.csv(
        "lemmas.csv",
        &[
            "collection",
            "trial",
            "mu",
            "nu",
            "uniform_lhs",
            "uniform_rhs",
            "trivial_lhs",
            "trivial_rhs",
            "trivial_j",
            "cancellation_lhs",
            "cancellation_rhs",
        ],
        &rows,
    )?;

    let (lo, hi) = k.scales();
    let q = cfg.kernel.q;
    let mut adj = Vec::new();
    let mut worst = 0.0f64;
    let ceiling = 2f64.powi(8 * cfg.dim as i32);
    for i in 0..cfg.trials.adjoint {
        let coll = random_stopping_collection(cfg.dim, cfg.m, true, &mut rng)?;
        let cz = cz_decompose(
            &StoppedFunction::new(random_h(&coll, &mut rng)?, coll.clone())?,
            1.0,
        )?;
        let h = random_h(&coll, &mut rng)?;
        let r = adjoint_remainder_check(k, &coll, &h, &cz.b, lo - 1, hi, q)?;
        worst = worst.max(r.constant);
        if r.constant > ceiling {
            failures.push(format!(
                "adjoint trial {i}: remainder constant {} exceeds {ceiling}",
                r.constant
            ));
        }
        adj.push(vec![
            i.to_string(),
            num(r.form),
            num(r.main),
            num(r.remainder),
            num(r.out_part),
            num(r.scale),
            num(r.constant),
        ]);
    }
    art.csv(
        "adjoint.csv",
        &[
            "trial",
            "form",
            "main",
            "remainder",
            "out_part",
            "scale",
            "constant",
        ],
        &adj,
    )?;
    art.json("lemmas.json", json!({ "kernel": k.id(), "beta": beta, "collections": summaries, "adjoint_constant": worst, "failures": failures }))?;
    println!(
        "lemmas: {} trials on {n_coll} collections, {} adjoint trials (constant {worst:.4})",
        cfg.trials.lemmas, cfg.trials.adjoint
    );
    Ok(failures)
}

fn suite_weights(cfg: &RunConfig, art: &Artifacts) -> Outcome<Vec<String>> {
    let k = cfg.weight_kernel()?;
    let m = cfg.weights.m;
    let x0 = [1i64 << (m - 1), 0];
    let f = spike(1, m, x0, 1.0)?;
    let (lo, hi) = k.scales();
    let t = cfg.exponents.t;
    let sweep = power_weight_sweep(&k, &f, t, x0, &cfg.weights.exponents, lo - 1, hi)?;
    let rows: Vec<Vec<String>> = sweep
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.a),
                num(r.ap),
                num(r.ratio),
                num(r.exponent),
                num(r.bound),
                num(r.sharp_power),
            ]
        })
        .collect();
    art.csv(
        "weights.csv",
        &["a", "ap", "ratio", "exponent", "bound", "sharp_power"],
        &rows,
    )?;
    art.json("weights.json", json!({ "kernel": k.id(), "t": t, "constant": sweep.constant, "violations": sweep.violations }))?;
    println!(
        "weights: {} exponents, C = {:.4}, {} violations",
        sweep.rows.len(),
        sweep.constant,
        sweep.violations.len()
    );
    Ok(if sweep.violations.is_empty() {
        Vec::new()
    } else {
        vec![format!(
            "weights: ratio above C·bound at a = {:?}",
            sweep.violations
        )]
    })
}

fn suite_weak11(cfg: &RunConfig, art: &Artifacts) -> Outcome<Vec<String>> {
    let mut rng = cfg.rng(TRIAL_STREAM + (2 << 16));
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut center = BTreeMap::new();
    // the centered spike on neighbouring grids, then random spikes on the run grid
    for m in [cfg.m.saturating_sub(2), cfg.m, cfg.m + 2] {
        if !(3..=14).contains(&m) {
            continue;
        }
        let c = cfg.with_m(m)?;
        let k = c.kernel()?;
        let (lo, hi) = k.scales();
        let n = 1i64 << m;
        let mut spikes = vec![[n / 2, if cfg.dim == 2 { n / 2 } else { 0 }]];
        if m == cfg.m {
            use rand::Rng;
            for _ in 1..cfg.trials.weak11_spikes {
                spikes.push([
                    rng.gen_range(0..n),
                    if cfg.dim == 2 { rng.gen_range(0..n) } else { 0 },
                ]);
            }
        }
        for (i, at) in spikes.iter().enumerate() {
            let r = weak11_diagnostic(&k, &spike(cfg.dim, m, *at, 1.0)?, lo - 1, hi)?;
            if !r.value.is_finite() {
                failures.push(format!(
                    "weak11: non-finite diagnostic at m = {m}, spike {at:?}"
                ));
            }
            if i == 0 {
                center.insert(m, r.value);
            }
            rows.push(vec![
                m.to_string(),
                i.to_string(),
                at[0].to_string(),
                at[1].to_string(),
                num(r.value),
                num(r.l1),
            ]);
        }
    }
    art.csv(
        "weak11.csv",
        &["m", "spike", "x", "y", "value", "l1"],
        &rows,
    )?;
    let vals: Vec<f64> = center.values().copied().collect();
    let spread = vals.iter().copied().fold(0.0, f64::max)
        / vals.iter().copied().fold(f64::INFINITY, f64::min);
    art.json(
        "weak11.json",
        json!({ "centered": center, "spread": spread }),
    )?;
    println!("weak11: centered spike {:?}, spread {spread:.4}", center);
    Ok(failures)
}

fn suite_decay(cfg: &RunConfig, k: &KernelFamily, art: &Artifacts) -> Outcome<Vec<String>> {
    let mut rng = cfg.rng(TRIAL_STREAM + (3 << 16));
    let omega = cfg.omega()?.filter(|o| {
        o.q().is_finite() && matches!(cfg.kernel.kind, crate::config::KernelType::Rough)
    });
    let mode = match &omega {
        Some(om) => DecayMode::Rough {
            omega: om.clone(),
            deltas: vec![0.1, 0.25, 0.5],
        },
        None => DecayMode::Plain,
    };
    let (lo, hi) = k.scales();
    let trials = 10;
    let mut failures = Vec::new();
    let (mut rows, mut splits) = (Vec::new(), Vec::new());
    let mut mean: BTreeMap<i32, f64> = BTreeMap::new();
    for i in 0..trials {
        let coll = random_stopping_collection(cfg.dim, cfg.m, true, &mut rng)?;
        let cz = cz_decompose(
            &StoppedFunction::new(random_h(&coll, &mut rng)?, coll.clone())?,
            1.0,
        )?;
        let bx = cz.b.x_norm(&coll, 1.0)?;
        let b = if bx > 0.0 {
            cz.b.scaled(1.0 / bx)
        } else {
            cz.b
        };
        let h = random_h(&coll, &mut rng)?;
        let rep = decay_diagnostics(k, &coll, &b, &h, lo - 1, hi, &mode)?;
        if !rep.consistent {
            failures.push(format!(
                "decay trial {i}: j-profile does not sum to the stopped form"
            ));
        }
        let scale = rep.profile.values().fold(1.0f64, |a, v| a.max(v.abs()));
        for (&j, &v) in &rep.profile {
            *mean.entry(j).or_insert(0.0) += v.abs() / trials as f64;
            rows.push(vec![i.to_string(), j.to_string(), num(v)]);
        }
        for s in &rep.rough {
            if s.split_error > 1e-9 * scale {
                failures.push(format!(
                    "decay trial {i}: H + V split off by {} at δ = {}",
                    s.split_error, s.delta
                ));
            }
            splits.push(vec![
                i.to_string(),
                num(s.delta),
                num(s.split_error),
                num(s.tail_sum),
                num(s.orlicz),
                num(s.fitted_constant),
            ]);
        }
    }
    art.csv("decay.csv", &["trial", "j", "value"], &rows)?;
    if !splits.is_empty() {
        art.csv(
            "decay_rough.csv",
            &[
                "trial",
                "delta",
                "split_error",
                "tail_sum",
                "orlicz",
                "fitted_constant",
            ],
            &splits,
        )?;
    }
    let slope = fitted_slope(&mean);
    art.json(
        "decay.json",
        json!({ "kernel": k.id(), "mean_profile": mean, "slope": slope, "failures": failures }),
    )?;
    match slope {
        Some(s) => println!("decay: mean |K^j| slope {s:.4} over {} scales", mean.len()),
        None => println!("decay: profile too short to fit"),
    }
    Ok(failures)
}
