//! Command-line driver: parses configs, calls into the `brownlab` library,
//! and writes CSV/JSON artifacts. No numerical logic lives here.

use brownlab::brown::{
    brown_field, find_edge_ray, EdgeOptions, EdgePoint, GridSpec, SpecEpsControls,
};
use brownlab::ensembles::{sample_iid, DeformedModel, Dist, Field, ModelSpec};
use brownlab::experiments::{
    chi2_two_sample, cluster_count, edge_statistics, girko_identity_test, girko_observables,
    local_law, no_outlier, p1_profile_deviation, smallest_singular_tail, Bump, Window,
};
use brownlab::flows::{
    characteristic_flow, complex_path, real_path, zigzag_schedule, PathOptions, RkControls,
};
use brownlab::{c64, Error};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug)]
enum CliError {
    Config(String),
    Compute(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "brownlab",
    version,
    about = "Numerical laboratory for spectra of deformed i.i.d. random matrices A + X",
    after_help = "Every artifact carries a header with the config hash and the base seed;\n\
                  rerunning with an identical config reproduces the files byte for byte."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Deformation: zero | twocluster | threecluster | jordan | path to a
    /// model-spec JSON file
    #[arg(long, default_value = "zero")]
    model: String,
    /// Matrix dimension N
    #[arg(long = "N", default_value_t = 256)]
    n: usize,
    /// Noise symmetry class
    #[arg(long, value_parser = ["real", "complex"], default_value = "complex")]
    field: String,
    /// Noise entry law
    #[arg(long, value_parser = ["gaussian", "rademacher", "uniform"], default_value = "gaussian")]
    dist: String,
    /// First cluster / Jordan eigenvalue (complex, e.g. "1.5" or "0.3+0.4i")
    #[arg(long, default_value = "1.5")]
    cluster_a: String,
    /// Second cluster
    #[arg(long, default_value = "-1.5")]
    cluster_b: String,
    /// Third cluster
    #[arg(long, default_value = "0+2i")]
    cluster_c: String,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed for all randomness
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// JSON object overriding solver tolerances, e.g. '{"edge_tol":1e-12}'
    #[arg(long)]
    tol_overrides: Option<String>,
    /// Load the full run configuration from a JSON file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate f_A, the Brown density, and the support contour on a grid
    BrownGrid {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Grid nodes per axis
        #[arg(long, default_value_t = 121)]
        nodes: usize,
        /// Margin beyond ‖A‖ + 1 covered by the grid
        #[arg(long, default_value_t = 0.5)]
        margin: f64,
        /// Laplacian step for the density layer
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
    },
    /// Locate and classify a support edge along a ray from an interior point
    EdgeScan {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Ray origin (must satisfy f_A > 1)
        #[arg(long, default_value = "0")]
        origin: String,
        /// Ray direction, e.g. "1+0i"
        #[arg(long, default_value = "1+0i")]
        ray: String,
    },
    /// Build a deformation path to the Ginibre ensemble and check its bounds
    PathBuild {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Starting edge point z₀
        #[arg(long)]
        z0: String,
        /// Use the real-field path construction (regimes A1/A2)
        #[arg(long, default_value_t = false)]
        real: bool,
        /// Regime-selection exponent 𝔠 for real paths
        #[arg(long, default_value_t = 0.05)]
        c_frak: f64,
        /// Scale separation exponent δ
        #[arg(long, default_value_t = 0.005)]
        delta: f64,
        /// Samples along the path
        #[arg(long, default_value_t = 512)]
        samples: usize,
    },
    /// Integrate the characteristic flow and check the e^{t/2} trace law
    FlowCheck {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Spectral base point z
        #[arg(long, default_value = "0")]
        z: String,
        /// Initial spectral scale η₀
        #[arg(long, default_value_t = 1.0)]
        eta0: f64,
        /// Flow horizon
        #[arg(long, default_value_t = 4.0)]
        t_max: f64,
    },
    /// Compute the zig-zag scale schedule 𝔰_k, t_k
    ZigzagPlan {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value = "0")]
        z: String,
        /// Target exponent ε (η_fin solves Nη·Im⟨M⟩ = N^ε)
        #[arg(long, default_value_t = 0.2)]
        eps: f64,
        /// Step exponent ε₀ (T = N^{−ε₀})
        #[arg(long, default_value_t = 0.05)]
        eps0: f64,
    },
    /// Sample eigenvalues of A + X and emit scatter + support-band layers
    McEigen {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Fattening exponent ε for the Spec_ε band layer
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
    },
    /// Local-law error scaling in η over Monte Carlo trials
    LocalLaw {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value = "0")]
        z: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// η grid, comma-separated; default is 8 log-spaced points in
        /// [N^{-0.9}, 0.5]
        #[arg(long)]
        eta_grid: Option<String>,
        /// Acceptance window for the log-log slope
        #[arg(long, default_value_t = -1.2)]
        slope_min: f64,
        #[arg(long, default_value_t = -0.8)]
        slope_max: f64,
    },
    /// Check that no eigenvalue escapes the fattened support Spec_ε
    NoOutlier {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
    },
    /// Per-cluster eigenvalue counts against the deterministic prediction
    ClusterCount {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
    },
    /// Rescaled edge eigenvalue statistics against the Ginibre kernel
    EdgeStats {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 4000)]
        trials: usize,
        #[arg(long, default_value = "0")]
        origin: String,
        #[arg(long, default_value = "1+0i")]
        ray: String,
        /// Sup-deviation floor for the p₁ profile check
        #[arg(long, default_value_t = 0.03)]
        p1_floor: f64,
        /// Optional second run to compare against by binned χ² (directory
        /// containing a previous bins.csv)
        #[arg(long)]
        compare: Option<PathBuf>,
        /// χ² p-value threshold when --compare is given
        #[arg(long, default_value_t = 0.01)]
        p_min: f64,
    },
    /// Exact identities on one sample: Girko formula and log-det routes
    GirkoCheck {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Bump test function center
        #[arg(long, default_value = "0")]
        center: String,
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        /// Quadrature grid nodes per axis
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// Trials for the L₀/N₀ route comparisons
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0.005)]
        delta: f64,
        #[arg(long, default_value = "0")]
        origin: String,
        #[arg(long, default_value = "1+0i")]
        ray: String,
    },
    /// Smallest-singular-value tail probability against its counting bound
    Sstail {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 0.005)]
        delta: f64,
        /// Rescaled observation point w (z = z₀ + γ₀⁻¹N^{−1/2}w)
        #[arg(long, default_value = "0")]
        w: String,
        #[arg(long, default_value = "0")]
        origin: String,
        #[arg(long, default_value = "1+0i")]
        ray: String,
    },
}

fn parse_complex(s: &str) -> CliResult<c64> {
    let t = s.trim().replace(' ', "");
    let bad = || CliError::Config(format!("cannot parse complex number {s:?}"));
    if let Some((re, im)) = t.split_once(',') {
        return Ok(c64::new(
            re.parse().map_err(|_| bad())?,
            im.parse().map_err(|_| bad())?,
        ));
    }
    if let Some(body) = t.strip_suffix('i') {
        // Find the sign that splits real and imaginary parts (skip a leading
        // sign and signs inside exponents).
        let chars: Vec<char> = body.chars().collect();
        let mut split = None;
        for k in (1..chars.len()).rev() {
            if (chars[k] == '+' || chars[k] == '-')
                && chars[k - 1] != 'e'
                && chars[k - 1] != 'E'
            {
                split = Some(k);
                break;
            }
        }
        return match split {
            Some(k) => {
                let (re, im) = body.split_at(k);
                let im = if im == "+" || im == "-" {
                    format!("{im}1")
                } else {
                    im.to_string()
                };
                Ok(c64::new(re.parse().map_err(|_| bad())?, im.parse().map_err(|_| bad())?))
            }
            None => {
                let im = if body.is_empty() { "1".to_string() } else { body.to_string() };
                Ok(c64::new(0.0, im.parse().map_err(|_| bad())?))
            }
        };
    }
    Ok(c64::new(t.parse().map_err(|_| bad())?, 0.0))
}

fn pair(z: c64) -> [f64; 2] {
    [z.re, z.im]
}

fn build_model(args: &ModelArgs) -> CliResult<DeformedModel> {
    let field = match args.field.as_str() {
        "real" => Field::Real,
        _ => Field::Complex,
    };
    let dist = match args.dist.as_str() {
        "rademacher" => Dist::Rademacher,
        "uniform" => Dist::Uniform,
        _ => Dist::Gaussian,
    };
    if args.n == 0 {
        return Err(CliError::Config("N must be positive".into()));
    }
    let a = parse_complex(&args.cluster_a)?;
    let b = parse_complex(&args.cluster_b)?;
    let c = parse_complex(&args.cluster_c)?;
    let spec = match args.model.as_str() {
        "zero" => ModelSpec::Zero { n: args.n },
        "twocluster" => ModelSpec::TwoCluster { n: args.n, a: pair(a), b: pair(b) },
        "threecluster" => ModelSpec::ThreeCluster { n: args.n, a: pair(a), b: pair(b), c: pair(c) },
        "jordan" => ModelSpec::Jordan { n: args.n, lambda: pair(a) },
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read model spec {path}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid model spec {path}: {e}")))?
        }
    };
    DeformedModel::build(&spec, field, dist).map_err(|e| CliError::Config(e.to_string()))
}

/// Artifact writer: every file carries the config hash and base seed.
struct Emitter {
    dir: PathBuf,
    hash: String,
    seed: u64,
    artifacts: Vec<String>,
}

impl Emitter {
    fn new(out: &OutArgs, config: &Value) -> CliResult<Self> {
        if let Some(w) = out.workers {
            if w == 0 {
                return Err(CliError::Config("workers must be positive".into()));
            }
            std::env::set_var("RAYON_NUM_THREADS", w.to_string());
        }
        if let Some(t) = &out.tol_overrides {
            let v: Value = serde_json::from_str(t)
                .map_err(|e| CliError::Config(format!("bad --tol-overrides JSON: {e}")))?;
            if !v.is_object() {
                return Err(CliError::Config("--tol-overrides must be a JSON object".into()));
            }
        }
        std::fs::create_dir_all(&out.out)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.out.display())))?;
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(config).unwrap().as_bytes());
        let hash = format!("{:x}", hasher.finalize())[..16].to_string();
        Ok(Self { dir: out.out.clone(), hash, seed: out.seed, artifacts: Vec::new() })
    }

    fn header(&self) -> String {
        format!("# config_hash={}\n# seed={}\n", self.hash, self.seed)
    }

    fn write_csv(&mut self, name: &str, body: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, format!("{}{}", self.header(), body))
            .map_err(|e| CliError::Compute(format!("cannot write {}: {e}", path.display())))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> CliResult<()> {
        let mut wrapped = value.clone();
        if let Some(obj) = wrapped.as_object_mut() {
            obj.insert("config_hash".into(), json!(self.hash));
            obj.insert("seed".into(), json!(self.seed));
        }
        let path = self.dir.join(name);
        std::fs::write(&path, serde_json::to_string_pretty(&wrapped).unwrap())
            .map_err(|e| CliError::Compute(format!("cannot write {}: {e}", path.display())))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, command: &str, config: &Value, pass: bool, started: Instant) -> CliResult<bool> {
        let summary = json!({
            "command": command,
            "config": config,
            "version": env!("CARGO_PKG_VERSION"),
            "wall_time_s": started.elapsed().as_secs_f64(),
            "pass": pass,
            "artifacts": self.artifacts,
        });
        let summary = {
            let mut s = summary;
            let obj = s.as_object_mut().unwrap();
            obj.insert("config_hash".into(), json!(self.hash));
            s
        };
        let path = self.dir.join("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(&summary).unwrap())
            .map_err(|e| CliError::Compute(format!("cannot write {}: {e}", path.display())))?;
        self.artifacts.push("summary.json".into());
        Ok(pass)
    }
}

/// Merge a `--config` file (if given) under the CLI-provided values; the
/// result is the canonical config echoed into every artifact.
fn effective_config(out: &OutArgs, flags: Value) -> CliResult<Value> {
    let mut base = match &out.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid config JSON: {e}")))?;
            if !v.is_object() {
                return Err(CliError::Config("config file must hold a JSON object".into()));
            }
            v
        }
        None => json!({}),
    };
    if let (Some(b), Some(f)) = (base.as_object_mut(), flags.as_object()) {
        for (k, v) in f {
            b.insert(k.clone(), v.clone());
        }
    }
    Ok(base)
}

fn model_config(m: &ModelArgs) -> Value {
    json!({
        "model": m.model, "N": m.n, "field": m.field, "dist": m.dist,
        "cluster_a": m.cluster_a, "cluster_b": m.cluster_b, "cluster_c": m.cluster_c,
    })
}

fn edge_json(edge: &EdgePoint) -> Value {
    json!({
        "z0": pair(edge.z0),
        "f": edge.f,
        "grad_f": pair(edge.grad_f),
        "i3": pair(edge.i3),
        "i4": edge.i4,
        "gamma0": pair(edge.gamma0),
        "class": format!("{:?}", edge.cls),
        "sigma_f": edge.sigma_f,
        "inv_norm": edge.inv_norm,
    })
}

fn find_edge(model: &DeformedModel, origin: &str, ray: &str) -> CliResult<EdgePoint> {
    let origin = parse_complex(origin)?;
    let dir = parse_complex(ray)?;
    Ok(find_edge_ray(model, origin, dir, &EdgeOptions { n: model.n, ..EdgeOptions::default() })?)
}

fn run(cli: Cli) -> CliResult<bool> {
    let started = Instant::now();
    match cli.command {
        Command::BrownGrid { model, out, nodes, margin, h } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "brown-grid", "nodes": nodes, "margin": margin, "h": h,
                "seed": out.seed,
            }), model_config(&model)))?;
            let m = build_model(&model)?;
            if nodes < 8 {
                return Err(CliError::Config("grid needs at least 8 nodes per axis".into()));
            }
            let grid = GridSpec::covering(&m, margin, nodes);
            let field = brown_field(&m, grid, true, h)?;
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_csv("field.csv", &field.to_csv())?;
            em.write_csv("contour.csv", &contour_csv(&field.contour))?;
            em.write_json("contour.json", &serde_json::from_str(&field.contour_json()).unwrap_or(json!({})))?;
            let pass = !field.contour.is_empty();
            em.finish("brown-grid", &cfg, pass, started)
        }
        Command::EdgeScan { model, out, origin, ray } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "edge-scan", "origin": origin, "ray": ray, "seed": out.seed,
            }), model_config(&model)))?;
            let m = build_model(&model)?;
            let edge = find_edge(&m, &origin, &ray)?;
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_json("edge.json", &edge_json(&edge))?;
            let pass = edge.cls != brownlab::brown::EdgeClass::Irregular;
            em.finish("edge-scan", &cfg, pass, started)
        }
        Command::PathBuild { model, out, z0, real, c_frak, delta, samples } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "path-build", "z0": z0, "real": real, "c_frak": c_frak,
                "delta": delta, "samples": samples, "seed": out.seed,
            }), model_config(&model)))?;
            let m = build_model(&model)?;
            let z0 = parse_complex(&z0)?;
            let opts = PathOptions { n: m.n, delta, samples };
            let path = if real {
                real_path(&m, z0, c_frak, &opts)?
            } else {
                complex_path(&m, z0, None, &opts)?
            };
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_csv("path.csv", &path.to_csv())?;
            em.write_json("report.json", &serde_json::to_value(&path.report).unwrap())?;
            let pass = path.report.max_f_dev <= 1e-10
                && path.report.max_norm <= 1e3
                && path.report.max_inv_norm <= 1e3
                && path.report.max_i4 <= 1e3;
            em.finish("path-build", &cfg, pass, started)
        }
        Command::FlowCheck { model, out, z, eta0, t_max } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "flow-check", "z": z, "eta0": eta0, "t_max": t_max, "seed": out.seed,
            }), model_config(&model)))?;
            let m = build_model(&model)?;
            let z = parse_complex(&z)?;
            if eta0 <= 0.0 || t_max <= 0.0 {
                return Err(CliError::Config("eta0 and t_max must be positive".into()));
            }
            let traj = characteristic_flow(&m, z, eta0, t_max, &RkControls::default())?;
            // e^{t/2} trace law along the flow.
            let base = traj.samples[0].im_m;
            let mut max_rel = 0.0_f64;
            for s in &traj.samples {
                let want = (s.t / 2.0).exp() * base;
                max_rel = max_rel.max((s.im_m - want).abs() / want.abs().max(1e-300));
            }
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_csv("trajectory.csv", &traj.to_csv())?;
            em.write_json("flow.json", &json!({
                "steps": traj.steps, "rejected": traj.rejected,
                "terminal_t": traj.terminal, "max_trace_law_rel_dev": max_rel,
            }))?;
            em.finish("flow-check", &cfg, max_rel <= 1e-8, started)
        }
        Command::ZigzagPlan { model, out, z, eps, eps0 } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "zigzag-plan", "z": z, "eps": eps, "eps0": eps0, "seed": out.seed,
            }), model_config(&model)))?;
            let m = build_model(&model)?;
            let zc = parse_complex(&z)?;
            let sched = zigzag_schedule(&m, zc, m.n, eps, eps0)?;
            let recon = sched.reconstruction(&m, zc)?;
            let max_recon = recon.iter().cloned().fold(0.0, f64::max);
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_csv("schedule.csv", &sched.to_csv())?;
            em.write_json("schedule.json", &serde_json::to_value(&sched).unwrap())?;
            em.finish("zigzag-plan", &cfg, max_recon <= 1e-8, started)
        }
        Command::McEigen { model, out, trials, eps } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "mc-eigen", "trials": trials, "eps": eps, "seed": out.seed,
            }), model_config(&model)))?;
            if trials == 0 {
                return Err(CliError::Config("mc-eigen needs at least one trial".into()));
            }
            let m = build_model(&model)?;
            let mut scatter = String::from("trial,re,im\n");
            for t in 0..trials {
                let x = sample_iid(&m, brownlab::util::derive_seed(out.seed, t as u64));
                let b = &m.a + &x.entries;
                for lambda in brownlab::ensembles::eigenvalues(&b)? {
                    writeln!(scatter, "{t},{},{}", lambda.re, lambda.im).unwrap();
                }
            }
            let spec = brownlab::brown::spec_eps(&m, m.n, eps, &SpecEpsControls::default())?;
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_csv("scatter.csv", &scatter)?;
            em.write_csv("contour.csv", &contour_csv(&spec.loops))?;
            em.write_csv("band.csv", &band_csv(&spec))?;
            em.finish("mc-eigen", &cfg, true, started)
        }
        Command::LocalLaw { model, out, z, trials, eta_grid, slope_min, slope_max } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "local-law", "z": z, "trials": trials, "eta_grid": eta_grid,
                "slope_min": slope_min, "slope_max": slope_max, "seed": out.seed,
            }), model_config(&model)))?;
            require_trials(trials)?;
            let m = build_model(&model)?;
            let zc = parse_complex(&z)?;
            let etas = match &eta_grid {
                Some(s) => s
                    .split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|_| {
                        CliError::Config(format!("bad η value {t:?} in --eta-grid"))
                    }))
                    .collect::<CliResult<Vec<f64>>>()?,
                None => {
                    let lo = (m.n as f64).powf(-0.9).ln();
                    let hi = 0.5_f64.ln();
                    (0..8).map(|k| (lo + (hi - lo) * k as f64 / 7.0).exp()).collect()
                }
            };
            let r = local_law(&m, zc, &etas, trials, out.seed)?;
            let mut csv = String::from("eta,rho,mean_avg_err,p95_avg_err,mean_b_err,p95_iso_err\n");
            for i in 0..etas.len() {
                writeln!(csv, "{},{},{},{},{},{}", r.etas[i], r.rho[i], r.mean_avg_err[i],
                    r.p95_avg_err[i], r.mean_b_err[i], r.p95_iso_err[i]).unwrap();
            }
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_csv("errors.csv", &csv)?;
            em.write_json("local_law.json", &serde_json::to_value(&r).unwrap())?;
            let pass = r.slope >= slope_min && r.slope <= slope_max;
            em.finish("local-law", &cfg, pass, started)
        }
        Command::NoOutlier { model, out, trials, eps } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "no-outlier", "trials": trials, "eps": eps, "seed": out.seed,
            }), model_config(&model)))?;
            require_trials(trials)?;
            let m = build_model(&model)?;
            let r = no_outlier(&m, eps, trials, out.seed, &SpecEpsControls::default())?;
            let mut csv = String::from("trial,max_excursion\n");
            for (t, e) in r.max_excursion.iter().enumerate() {
                writeln!(csv, "{t},{e}").unwrap();
            }
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_csv("excursions.csv", &csv)?;
            em.write_json("no_outlier.json", &json!({
                "trials": r.trials, "violations": r.violations,
                "worst_excursion": r.max_excursion.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }))?;
            em.finish("no-outlier", &cfg, r.violations == 0, started)
        }
        Command::ClusterCount { model, out, trials, eps } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "cluster-count", "trials": trials, "eps": eps, "seed": out.seed,
            }), model_config(&model)))?;
            require_trials(trials)?;
            let m = build_model(&model)?;
            let r = cluster_count(&m, eps, trials, out.seed, &SpecEpsControls::default())?;
            let mut csv = String::from("trial");
            for k in 0..r.expected.len() {
                write!(csv, ",cluster_{k}").unwrap();
            }
            csv.push('\n');
            for (t, row) in r.observed.iter().enumerate() {
                write!(csv, "{t}").unwrap();
                for c in row {
                    write!(csv, ",{c}").unwrap();
                }
                csv.push('\n');
            }
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_csv("counts.csv", &csv)?;
            em.write_json("clusters.json", &json!({
                "expected": r.expected, "trials": r.trials,
                "mismatched_trials": r.mismatched_trials,
                "ambiguous_trials": r.ambiguous_trials,
            }))?;
            em.finish("cluster-count", &cfg, r.mismatched_trials == 0, started)
        }
        Command::EdgeStats { model, out, trials, origin, ray, p1_floor, compare, p_min } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "edge-stats", "trials": trials, "origin": origin, "ray": ray,
                "p1_floor": p1_floor, "p_min": p_min, "seed": out.seed,
                "compare": compare.as_ref().map(|p| p.display().to_string()),
            }), model_config(&model)))?;
            require_trials(trials)?;
            let m = build_model(&model)?;
            let edge = find_edge(&m, &origin, &ray)?;
            let stats = edge_statistics(&m, &edge, trials, out.seed, Window::default())?;
            let (dev, allow) = p1_profile_deviation(&stats, p1_floor);
            let mut csv = String::from("re,im,count,p1,se\n");
            for (i, &c) in stats.counts.iter().enumerate() {
                let w = stats.window.bin_center(i);
                writeln!(csv, "{},{},{c},{},{}", w.re, w.im, stats.p1[i], stats.se[i]).unwrap();
            }
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_csv("bins.csv", &csv)?;
            em.write_json("edge.json", &edge_json(&edge))?;
            let mut pass = dev <= allow;
            let mut chi2 = json!(null);
            if let Some(dir) = &compare {
                let other = read_bins(&dir.join("bins.csv"))?;
                let r = chi2_two_sample(&stats.counts, &other)?;
                pass = pass && r.p_value >= p_min;
                chi2 = serde_json::to_value(&r).unwrap();
            }
            em.write_json("edge_stats.json", &json!({
                "trials": stats.trials, "empty_trials": stats.empty_trials,
                "p1_sup_dev": dev, "p1_allowance": allow, "chi2": chi2,
            }))?;
            em.finish("edge-stats", &cfg, pass, started)
        }
        Command::GirkoCheck { model, out, center, radius, grid, trials, delta, origin, ray } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "girko-check", "center": center, "radius": radius, "grid": grid,
                "trials": trials, "delta": delta, "origin": origin, "ray": ray, "seed": out.seed,
            }), model_config(&model)))?;
            require_trials(trials)?;
            let m = build_model(&model)?;
            if radius <= 0.0 || grid < 8 {
                return Err(CliError::Config("need radius > 0 and grid ≥ 8".into()));
            }
            let c = parse_complex(&center)?;
            let bump = Bump { center: [c.re, c.im], radius };
            let girko = girko_identity_test(&m, &bump, out.seed, grid)?;
            let edge = find_edge(&m, &origin, &ray)?;
            let obs = girko_observables(&m, &edge, c64::new(0.0, 0.0), trials, out.seed, delta)?;
            let mut csv = String::from("trial_seed,l0_direct,l0_integral,n0,n0_herm,smin\n");
            let mut max_l0 = 0.0_f64;
            let mut max_n0 = 0.0_f64;
            for s in &obs.samples {
                writeln!(csv, "{},{},{},{},{},{}", s.seed, s.l0_direct, s.l0_integral,
                    s.n0, s.n0_herm, s.smin).unwrap();
                max_l0 = max_l0.max((s.l0_direct - s.l0_integral).abs());
                max_n0 = max_n0.max((s.n0 - s.n0_herm).abs());
            }
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_csv("observables.csv", &csv)?;
            let pass = girko.pass && max_l0 <= 1e-6 * m.n as f64 && max_n0 <= 1e-12;
            em.write_json("girko.json", &json!({
                "identity": serde_json::to_value(&girko).unwrap(),
                "max_l0_route_dev": max_l0, "max_n0_route_dev": max_n0,
                "eta0": obs.eta0, "c0": obs.c0,
            }))?;
            em.finish("girko-check", &cfg, pass, started)
        }
        Command::Sstail { model, out, trials, delta, w, origin, ray } => {
            let cfg = effective_config(&out, merged(json!({
                "command": "sstail", "trials": trials, "delta": delta, "w": w,
                "origin": origin, "ray": ray, "seed": out.seed,
            }), model_config(&model)))?;
            require_trials(trials)?;
            let m = build_model(&model)?;
            let edge = find_edge(&m, &origin, &ray)?;
            let wc = parse_complex(&w)?;
            let r = smallest_singular_tail(&m, &edge, wc, trials, out.seed, delta)?;
            let mut em = Emitter::new(&out, &cfg)?;
            em.write_json("sstail.json", &serde_json::to_value(&r).unwrap())?;
            em.finish("sstail", &cfg, r.pass, started)
        }
    }
}

fn require_trials(trials: usize) -> CliResult<()> {
    if trials == 0 {
        return Err(CliError::Config("need at least one trial".into()));
    }
    Ok(())
}

fn merged(mut flags: Value, model: Value) -> Value {
    if let (Some(f), Some(m)) = (flags.as_object_mut(), model.as_object()) {
        f.extend(m.clone());
    }
    flags
}

fn contour_csv(loops: &[Vec<c64>]) -> String {
    let mut out = String::from("loop,re,im\n");
    for (li, poly) in loops.iter().enumerate() {
        for p in poly {
            writeln!(out, "{li},{},{}", p.re, p.im).unwrap();
        }
    }
    out
}

fn band_csv(spec: &brownlab::brown::SpecEps) -> String {
    let mut out = String::from("loop,re,im,sigma,width\n");
    for (li, (poly, sig)) in spec.loops.iter().zip(&spec.sigma).enumerate() {
        for (p, s) in poly.iter().zip(sig) {
            writeln!(out, "{li},{},{},{s},{}", p.re, p.im, spec.factor * s).unwrap();
        }
    }
    out
}

fn read_bins(path: &std::path::Path) -> CliResult<Vec<u64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut counts = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("re,") || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            return Err(CliError::Config(format!("malformed bins row in {}", path.display())));
        }
        counts.push(cols[2].parse().map_err(|_| {
            CliError::Config(format!("malformed count in {}", path.display()))
        })?);
    }
    if counts.is_empty() {
        return Err(CliError::Config(format!("{} holds no bins", path.display())));
    }
    Ok(counts)
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => std::process::exit(0),
        Ok(false) => {
            eprintln!("acceptance check failed (see summary.json)");
            std::process::exit(1);
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Compute(msg)) => {
            eprintln!("compute error: {msg}");
            std::process::exit(3);
        }
    }
}
