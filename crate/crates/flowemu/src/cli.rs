//! Command-line driver: `synth -> extract -> fit -> predict / uq / tke / couplings`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowemu_core::cokrige::CovarianceModel;
use flowemu_core::coupling::{couplings_from_precisions, CouplingGraph};
use flowemu_core::cpod::{CouplingMask, CpodOptions};
use flowemu_core::eigen::EigenMethod;
use flowemu_core::idw::DEFAULT_NEIGHBOURS;
use flowemu_core::predictor::Emulator;
use flowemu_core::spectrum::Window;
use flowemu_core::synth::generate;
use flowemu_core::wncq::{BandSide, CdfMethod};
use serde_json::json;

use crate::archive::{read_geometry, read_grid, read_json, read_run, write_json, write_run};
use crate::bundle::{design_ranges, read_models, step_dir, varying_space, write_models, BasisBundle, ModelFile, RunManifest};
use crate::cpd;
use crate::error::{format_err, io_err, validation, Error, Result};
use crate::pipeline::{
    band_coverage, default_regions, extract_runs, fit_bundle, hdcr_rows, predict_field, probe_spectra, project_run, region_mre, tke_rows,
    FitSettings, MeansSource, Probe, Regions, Target, TkeOptions, Tuning,
};
use crate::provenance::{check_upstream, digest, seal, verify};
use crate::synthspec::SynthSpecFile;

#[derive(Debug, Parser)]
#[command(name = "flowemu", version, about = "Common-POD co-kriging emulator for parametric flow ensembles")]
pub struct Cli {
    /// Random seed for design generation, synthetic draws and multi-start placement.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ensemble with known ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Extract the common POD basis from a run manifest.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        energy_target: f64,
        /// Remove the per-point snapshot mean before decomposition.
        #[arg(long)]
        center: bool,
        #[arg(long, default_value_t = DEFAULT_NEIGHBOURS)]
        neighbours: usize,
    },
    /// Fit the per-step co-kriging models.
    Fit {
        #[arg(long)]
        basis: PathBuf,
        /// JSON fit configuration; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, conflicts_with = "top_k")]
        cv_folds: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Predict mean and variance fields at a new geometry.
    Predict {
        #[command(flatten)]
        target: TargetArgs,
        /// JSON sidecar `{"name": [point indices]}` of MRE regions; default is the geometric partition.
        #[arg(long)]
        regions: Option<PathBuf>,
        /// JSON list of `{"name", "x", "y"}` probes for spectra.
        #[arg(long)]
        probes: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long)]
        hann: bool,
    },
    /// Coefficient uncertainty and highest-density regions at a new geometry.
    Uq {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
    },
    /// Turbulent kinetic energy and its confidence bands at probe points.
    Tke {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        probes: PathBuf,
        /// Velocity variables, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "u,v")]
        velocity: Vec<String>,
        /// Steps `start:end` for time means and coverage.
        #[arg(long)]
        window: Option<String>,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        #[arg(long, value_enum, default_value_t = Side::Lower)]
        side: Side,
        #[arg(long, value_enum, default_value_t = MeansSource::Prediction)]
        means: MeansSource,
        /// Moment-matching distribution function instead of exact inversion.
        #[arg(long)]
        fast_cdf: bool,
    },
    /// Rank flow couplings from the fitted precision matrices.
    Couplings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 9)]
        top_k: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Side {
    Lower,
    Upper,
    TwoSided,
}

impl From<Side> for BandSide {
    fn from(s: Side) -> Self {
        match s {
            Side::Lower => BandSide::Lower,
            Side::Upper => BandSide::Upper,
            Side::TwoSided => BandSide::TwoSided,
        }
    }
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Reference simulation archive; its geometry and grid are the target.
    #[arg(long, conflicts_with_all = ["geometry", "grid"])]
    pub run: Option<PathBuf>,
    /// `geometry.json` of the new design (with `--grid`).
    #[arg(long, requires = "grid")]
    pub geometry: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

fn out_dir(cli_out: &Option<PathBuf>) -> Result<&Path> {
    let dir = cli_out.as_deref().ok_or_else(|| validation("--out is required"))?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir)
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| validation(e.to_string()))?;
    pool.install(|| dispatch(&cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec } => cmd_synth(spec, cli.seed, out_dir(&cli.out)?),
        Command::Extract { manifest, energy_target, center, neighbours } => {
            let opts = CpodOptions { energy_target: *energy_target, neighbours: *neighbours, center_snapshots: *center, method: EigenMethod::Auto };
            cmd_extract(manifest, &opts, out_dir(&cli.out)?)
        }
        Command::Fit { basis, config, lambda, cv_folds, top_k, starts } => {
            let mut s: FitSettings = match config {
                Some(p) => read_json(p)?,
                None => FitSettings::default(),
            };
            if let Some(l) = lambda {
                s.lambda = *l;
            }
            if let Some(f) = cv_folds {
                s.tuning = Tuning::CrossValidate { folds: *f };
            }
            if let Some(k) = top_k {
                s.tuning = Tuning::TopKEdges { k: *k };
            }
            if let Some(n) = starts {
                s.n_starts = *n;
            }
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            cmd_fit(basis, &s, out_dir(&cli.out)?)
        }
        Command::Predict { target, regions, probes, dt, hann } => {
            let window = if *hann { Window::Hann } else { Window::Rectangular };
            cmd_predict(target, regions.as_deref(), probes.as_deref(), *dt, window, out_dir(&cli.out)?)
        }
        Command::Uq { target, alpha } => cmd_uq(target, *alpha, out_dir(&cli.out)?),
        Command::Tke { target, probes, velocity, window, level, side, means, fast_cdf } => {
            let method = if *fast_cdf { CdfMethod::Liu } else { CdfMethod::Imhof };
            let names: Vec<&str> = velocity.iter().map(String::as_str).collect();
            cmd_tke(target, probes, &names, window.as_deref(), *level, (*side).into(), *means, method, out_dir(&cli.out)?)
        }
        Command::Couplings { model, top_k } => cmd_couplings(model, *top_k, out_dir(&cli.out)?),
    }
}

pub fn cmd_synth(spec_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let file = SynthSpecFile::load(spec_path)?;
    let seed = seed.unwrap_or(file.seed);
    let (spec, n_train) = file.to_spec(seed)?;
    let ens = generate(&spec)?;
    let mut runs = Vec::new();
    for (i, run) in ens.runs.iter().enumerate() {
        let name = if i < n_train { format!("run_{i:03}") } else { format!("holdout_{:03}", i - n_train) };
        write_run(&out.join(&name), run)?;
        if i < n_train {
            runs.push(PathBuf::from(name));
        }
    }
    write_json(&out.join("manifest.json"), &RunManifest { runs, design: design_ranges(&spec.space) })?;
    let truth = json!({
        "designs": &spec.designs[..n_train],
        "holdout": &spec.designs[n_train..],
        "mu": spec.mu.as_slice(),
        "t_cov": (0..spec.t_cov.nrows()).map(|i| spec.t_cov.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "tau": spec.tau,
    });
    write_json(&out.join("truth.json"), &truth)?;
    seal(out, "synth", Some(seed), serde_json::to_value(&file).unwrap_or_default(), BTreeMap::new())?;
    Ok(())
}

pub fn cmd_extract(manifest: &Path, opts: &CpodOptions, out: &Path) -> Result<()> {
    let (m, dirs) = RunManifest::load(manifest)?;
    let runs = dirs.iter().map(|d| read_run(d)).collect::<Result<Vec<_>>>()?;
    let space = if m.design.is_empty() {
        varying_space(&runs.iter().map(|r| r.geometry).collect::<Vec<_>>())?
    } else {
        crate::bundle::design_space(&m.design)?
    };
    let bundle = extract_runs(&runs, space, opts)?;
    bundle.write(out)?;
    let settings = json!({
        "energy_target": opts.energy_target,
        "neighbours": opts.neighbours,
        "center": opts.center_snapshots,
        "modes": bundle.basis.variables.iter().map(|v| (v.name.clone(), v.n_modes())).collect::<BTreeMap<_, _>>(),
    });
    seal(out, "extract", None, settings, BTreeMap::new())?;
    Ok(())
}

pub fn cmd_fit(basis_dir: &Path, settings: &FitSettings, out: &Path) -> Result<()> {
    verify(basis_dir, "extract")?;
    let basis = BasisBundle::read(basis_dir)?;
    let slices = fit_bundle(&basis, settings)?;
    write_models(out, &basis, &slices)?;
    let lambdas: Vec<f64> = slices.iter().map(|s| s.report.lambda).collect();
    let upstream = BTreeMap::from([("basis".to_string(), digest(basis_dir)?)]);
    let value = json!({ "config": settings, "lambda": lambdas });
    seal(out, "fit", Some(settings.seed), value, upstream)?;
    Ok(())
}

/// Loads an emulator after checking both bundles and their ordering.
pub fn load_emulator(basis_dir: &Path, model_dir: &Path) -> Result<(Emulator, BTreeMap<String, String>)> {
    verify(basis_dir, "extract")?;
    let fit = verify(model_dir, "fit")?;
    check_upstream(&fit, "basis", basis_dir)?;
    let basis = BasisBundle::read(basis_dir)?;
    let (_, models) = read_models(model_dir, &basis)?;
    let upstream = BTreeMap::from([("basis".to_string(), digest(basis_dir)?), ("model".to_string(), digest(model_dir)?)]);
    Ok((Emulator::new(basis.basis, models, basis.space)?, upstream))
}

fn load_target(args: &TargetArgs) -> Result<Target> {
    match (&args.run, &args.geometry, &args.grid) {
        (Some(run), _, _) => Ok(Target::from_run(read_run(run)?)),
        (None, Some(geom), Some(grid)) => {
            let grid = read_grid(grid)?;
            let dir = geom.parent().unwrap_or(Path::new("."));
            let geometry = if geom.file_name().is_some_and(|n| n == "geometry.json") {
                read_geometry(dir, &grid)?
            } else {
                let g: crate::archive::GeometryFile = read_json(geom)?;
                g.geometry(&grid)
            };
            geometry.validate()?;
            Ok(Target { geometry, grid, reference: None })
        }
        _ => Err(validation("give either --run or both --geometry and --grid")),
    }
}

fn load_regions(path: Option<&Path>, target: &Target) -> Result<Regions> {
    let Some(path) = path else {
        return default_regions(&target.grid, &target.geometry);
    };
    let raw: BTreeMap<String, Vec<usize>> = read_json(path)?;
    raw.into_iter()
        .map(|(name, idx)| {
            let mut mask = vec![false; target.grid.len()];
            for i in idx {
                *mask.get_mut(i).ok_or_else(|| format_err(path, format!("region {name}: point {i} is outside the grid")))? = true;
            }
            Ok((name, mask))
        })
        .collect()
}

pub fn cmd_predict(args: &TargetArgs, regions: Option<&Path>, probes: Option<&Path>, dt: f64, window: Window, out: &Path) -> Result<()> {
    let (emu, upstream) = load_emulator(&args.basis, &args.model)?;
    let target = load_target(args)?;
    let (c, _, field) = predict_field(&emu, &target.geometry, &target.grid)?;
    for v in &field.variables {
        cpd::write(&out.join(format!("{}_mean.bin", v.name)), &v.mean)?;
        cpd::write(&out.join(format!("{}_var.bin", v.name)), &v.variance)?;
    }
    let mre = match &target.reference {
        Some(run) => {
            let regions = load_regions(regions, &target)?;
            Some(region_mre(run, &field, &regions)?.into_iter().collect::<BTreeMap<_, _>>())
        }
        None => None,
    };
    let spectra = match probes {
        Some(p) => {
            let probes: Vec<Probe> = read_json(p)?;
            Some(probe_spectra(&target, &field, &probes, dt, window)?)
        }
        None => None,
    };
    let summary = json!({
        "design": c,
        "inside_training_hull": flowemu_core::cokrige::DesignSpace::inside_hull(&c, &emu.models[0].designs),
        "mre": mre,
        "psd": spectra,
    });
    write_json(&out.join("summary.json"), &summary)?;
    seal(out, "predict", None, json!({ "dt": dt, "hann": window == Window::Hann }), upstream)?;
    Ok(())
}

pub fn cmd_uq(args: &TargetArgs, alpha: f64, out: &Path) -> Result<()> {
    let (emu, upstream) = load_emulator(&args.basis, &args.model)?;
    let target = load_target(args)?;
    let c = emu.design_of(&target.geometry);
    let preds = emu.coefficients(&c)?;
    let observed = match &target.reference {
        Some(run) => Some(project_run(&emu.basis, run, DEFAULT_NEIGHBOURS)?),
        None => None,
    };
    let rows = hdcr_rows(&preds, observed.as_ref(), alpha)?;

    let path = out.join("coefficients.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| format_err(&path, e.to_string()))?;
    w.write_record(["step", "mode", "mean", "sd", "observed"]).map_err(|e| format_err(&path, e.to_string()))?;
    for (t, p) in preds.iter().enumerate() {
        let s = p.variance_factor.max(0.0);
        for k in 0..p.mean.len() {
            let obs = observed.as_ref().map(|o| o[(t, k)].to_string()).unwrap_or_default();
            let rec = [t.to_string(), k.to_string(), p.mean[k].to_string(), (s * p.t_cov[(k, k)]).sqrt().to_string(), obs];
            w.write_record(&rec).map_err(|e| format_err(&path, e.to_string()))?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = out.join("hdcr.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| format_err(&path, e.to_string()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| format_err(&path, e.to_string()))?;
    }
    w.flush().map_err(io_err(&path))?;

    let coverage = |model| {
        let hits: Vec<bool> = rows.iter().filter_map(|r| r.inside(model)).collect();
        (!hits.is_empty()).then(|| hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
    };
    let summary = json!({
        "design": c,
        "alpha": alpha,
        "coverage_joint": coverage(CovarianceModel::Joint),
        "coverage_independent": coverage(CovarianceModel::Independent),
    });
    write_json(&out.join("summary.json"), &summary)?;
    seal(out, "uq", None, json!({ "alpha": alpha }), upstream)?;
    Ok(())
}

fn parse_window(s: Option<&str>, steps: usize) -> Result<(usize, usize)> {
    let Some(s) = s else { return Ok((0, steps)) };
    let (a, b) = s.split_once(':').ok_or_else(|| validation(format!("--window {s:?} must look like start:end")))?;
    let parse = |v: &str, default: usize| -> Result<usize> {
        if v.is_empty() {
            Ok(default)
        } else {
            v.parse().map_err(|_| validation(format!("--window {s:?}: {v:?} is not a step index")))
        }
    };
    Ok((parse(a, 0)?, parse(b, steps)?))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_tke(
    args: &TargetArgs,
    probes_path: &Path,
    velocity: &[&str],
    window: Option<&str>,
    level: f64,
    side: BandSide,
    means: MeansSource,
    method: CdfMethod,
    out: &Path,
) -> Result<()> {
    let (emu, upstream) = load_emulator(&args.basis, &args.model)?;
    let target = load_target(args)?;
    let probes: Vec<Probe> = read_json(probes_path)?;
    if probes.is_empty() {
        return Err(validation(format!("{}: probe list is empty", probes_path.display())));
    }
    let window = parse_window(window, emu.n_steps())?;
    let opts = TkeOptions { level, side, window, means, method };
    let rows = tke_rows(&emu, &target, &probes, velocity, &opts)?;
    for (probe, rs) in probes.iter().zip(&rows) {
        let path = out.join(format!("tke_{}.csv", probe.name));
        let mut w = csv::Writer::from_path(&path).map_err(|e| format_err(&path, e.to_string()))?;
        for r in rs {
            w.serialize(r).map_err(|e| format_err(&path, e.to_string()))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    let summary = json!({
        "level": level,
        "window": [window.0, window.1],
        "coverage_joint": band_coverage(&rows, window, CovarianceModel::Joint),
        "coverage_independent": band_coverage(&rows, window, CovarianceModel::Independent),
    });
    write_json(&out.join("summary.json"), &summary)?;
    let settings = json!({ "level": level, "side": format!("{side:?}"), "means": means, "velocity": velocity });
    seal(out, "tke", None, settings, upstream)?;
    Ok(())
}

fn node_label(meta: &ModelFile, graph: &CouplingGraph, m: usize) -> String {
    let (v, k) = graph.nodes[m];
    format!("{}_{}", meta.variables[v], k + 1)
}

pub fn cmd_couplings(model_dir: &Path, k: usize, out: &Path) -> Result<()> {
    verify(model_dir, "fit")?;
    let meta: ModelFile = read_json(&model_dir.join("model.json"))?;
    let precisions = (0..meta.n_steps).map(|t| cpd::read(&step_dir(model_dir, t).join("precision.bin"))).collect::<Result<Vec<_>>>()?;
    let mask = CouplingMask::from_owners(meta.owners.clone());
    let graph = couplings_from_precisions(&precisions, &mask, k)?;

    let path = out.join("edges.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| format_err(&path, e.to_string()))?;
    w.write_record(["rank", "source", "target", "frequency", "mean_abs_partial_correlation"]).map_err(|e| format_err(&path, e.to_string()))?;
    for (r, e) in graph.edges.iter().enumerate() {
        let rec = [(r + 1).to_string(), node_label(&meta, &graph, e.i), node_label(&meta, &graph, e.j), e.frequency.to_string(), e.score.to_string()];
        w.write_record(&rec).map_err(|e| format_err(&path, e.to_string()))?;
    }
    w.flush().map_err(io_err(&path))?;

    let mut dot = String::from("graph couplings {\n");
    for m in 0..graph.nodes.len() {
        dot.push_str(&format!("  \"{}\";\n", node_label(&meta, &graph, m)));
    }
    for e in &graph.edges {
        dot.push_str(&format!(
            "  \"{}\" -- \"{}\" [weight={:.4}, penwidth={:.2}, label=\"{:.2}\"];\n",
            node_label(&meta, &graph, e.i),
            node_label(&meta, &graph, e.j),
            e.frequency,
            1.0 + 4.0 * e.frequency,
            e.score
        ));
    }
    dot.push_str("}\n");
    let path = out.join("couplings.dot");
    fs::write(&path, dot).map_err(io_err(&path))?;
    write_json(&out.join("per_slice.json"), &graph.per_slice)?;

    let upstream = BTreeMap::from([("model".to_string(), digest(model_dir)?)]);
    seal(out, "couplings", None, json!({ "top_k": k }), upstream)?;
    Ok(())
}

impl From<Error> for std::process::ExitCode {
    fn from(e: Error) -> Self {
        std::process::ExitCode::from(e.exit_code() as u8)
    }
}
