use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use fosr::archive::{DrawArchive, MANIFEST_FILE};
use fosr::data::{load_dataset, read_design, write_dataset, McmcConfig};
use fosr::dss::{build_dss_problem, run_selection, DEFAULT_GRID_SIZE};
use fosr::gibbs::run_chain;
use fosr::sim::{generate_dataset, inject_missing, run_study, SimSettings, StudyConfig};
use fosr::summaries::{summarize, write_summary_csvs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{files_below, RunManifest};

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    fosr::Error::Invalid(msg.into()).into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub p1: usize,
    pub rsnr: f64,
    pub seed: u64,
    pub missing_frac: f64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        let s = SimSettings::default();
        Self {
            n: s.n,
            m: s.m,
            p: s.p,
            p1: s.p1,
            rsnr: s.rsnr,
            seed: 0,
            missing_frac: 0.0,
        }
    }
}

pub fn simulate(cfg: &SimulateSettings, out: &Path) -> Result<()> {
    let start = Instant::now();
    let settings = SimSettings {
        n: cfg.n,
        m: cfg.m,
        p: cfg.p,
        p1: cfg.p1,
        rsnr: cfg.rsnr,
    };
    let (mut data, truth) = generate_dataset(&settings, cfg.seed)?;
    let mut masked = Vec::new();
    if cfg.missing_frac > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        masked = inject_missing(&mut data, cfg.missing_frac, &mut rng)?;
    }
    fs::create_dir_all(out)?;
    write_dataset(&data, &out.join("curves.csv"), &out.join("design.csv"))?;
    let truth_json = serde_json::json!({
        "settings": settings,
        "truth": truth,
        "coefficient_functions": truth.coefficient_functions(),
        "missing_cells": masked,
    });
    fs::write(out.join("truth.json"), serde_json::to_string(&truth_json)?)?;
    eprintln!(
        "simulated n={} m={} p={} ({} missing cells) into {}",
        cfg.n,
        cfg.m,
        cfg.p,
        masked.len(),
        out.display()
    );
    let mut manifest = RunManifest::new("simulate", cfg, Some(cfg.seed))?;
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub curves: Option<PathBuf>,
    pub design: Option<PathBuf>,
    #[serde(rename = "K")]
    pub k: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub fix_basis: bool,
    pub chains: usize,
    pub knots: Option<usize>,
    pub standardize: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        let m = McmcConfig::default();
        Self {
            curves: None,
            design: None,
            k: m.k,
            iters: m.n_iter,
            burnin: m.burn_in,
            thin: m.thin,
            seed: m.seed,
            fix_basis: m.fix_basis,
            chains: 1,
            knots: m.num_knots,
            standardize: m.standardize,
        }
    }
}

/// Seed for chain `c`; chain 0 uses the master seed.
pub fn chain_seed(master: u64, chain: usize) -> u64 {
    master.wrapping_add(chain as u64)
}

pub fn chain_dir(out: &Path, chain: usize) -> PathBuf {
    out.join(format!("chain_{chain}"))
}

pub fn fit(cfg: &FitSettings, out: &Path) -> Result<()> {
    let start = Instant::now();
    let (Some(curves), Some(design)) = (&cfg.curves, &cfg.design) else {
        bail!(invalid("fit needs --curves and --design"));
    };
    if cfg.chains == 0 {
        bail!(invalid("--chains must be at least 1"));
    }
    let data = load_dataset(curves, design)
        .with_context(|| format!("loading {} and {}", curves.display(), design.display()))?;
    let base = McmcConfig {
        k: cfg.k,
        n_iter: cfg.iters,
        burn_in: cfg.burnin,
        thin: cfg.thin,
        seed: cfg.seed,
        fix_basis: cfg.fix_basis,
        num_knots: cfg.knots,
        standardize: cfg.standardize,
        ..McmcConfig::default()
    };
    base.validate()?;
    eprintln!(
        "fitting n={} m={} p={} K={} with {} chain(s), {} iterations each",
        data.n(),
        data.m(),
        data.p(),
        cfg.k,
        cfg.chains,
        cfg.iters
    );
    let results = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mcmc = McmcConfig {
                seed: chain_seed(cfg.seed, c),
                ..base.clone()
            };
            let (archive, diag) = run_chain(&data, &mcmc, c as u64, |p| {
                if p.iteration % 1000 == 0 || p.iteration == mcmc.n_iter {
                    eprintln!(
                        "chain {c}: iteration {}/{} ({:.1}s, sigma_eps {:.4})",
                        p.iteration, mcmc.n_iter, p.seconds, p.sigma_eps
                    );
                }
            })?;
            archive.write_dir(&chain_dir(out, c))?;
            Ok(diag)
        })
        .collect::<Result<Vec<_>>>()?;
    for (c, d) in results.iter().enumerate() {
        if d.lambda_f_capped + d.lambda_f_prior_only + d.ssr_rate_floored > 0 {
            eprintln!("chain {c}: numerical guards fired: {d:?}");
        }
    }
    let mut manifest = RunManifest::new("fit", cfg, Some(cfg.seed))?;
    manifest.hash_input(curves)?;
    manifest.hash_input(design)?;
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(out)?;
    eprintln!("wrote {} archive(s) under {}", cfg.chains, out.display());
    Ok(())
}

/// Reads one archive directory, or pools every `chain_*` directory below a
/// fit output directory.
pub fn load_archives(dir: &Path) -> Result<DrawArchive> {
    if dir.join(MANIFEST_FILE).exists() {
        return Ok(DrawArchive::read_dir(dir)?);
    }
    let mut chains: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).exists())
        .collect();
    if chains.is_empty() {
        bail!(invalid(format!("no draw archive found in {}", dir.display())));
    }
    chains.sort();
    let archives = chains
        .iter()
        .map(|c| DrawArchive::read_dir(c))
        .collect::<fosr::Result<Vec<_>>>()?;
    Ok(DrawArchive::pool(archives)?)
}

fn hash_archive(manifest: &mut RunManifest, dir: &Path) -> Result<()> {
    for f in files_below(dir)? {
        manifest.hash_input(&f)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizeSettings {
    pub archive: Option<PathBuf>,
    pub level: f64,
}

impl Default for SummarizeSettings {
    fn default() -> Self {
        Self {
            archive: None,
            level: 0.95,
        }
    }
}

pub fn summarize_cmd(cfg: &SummarizeSettings, out: &Path) -> Result<()> {
    let start = Instant::now();
    let Some(dir) = &cfg.archive else {
        bail!(invalid("summarize needs --archive"));
    };
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        bail!(invalid(format!("--level must lie in (0, 1), got {}", cfg.level)));
    }
    let archive = load_archives(dir)?;
    let summary = summarize(&archive, cfg.level)?;
    let files = write_summary_csvs(&summary, out)?;
    eprintln!("wrote {} coefficient files to {}", files.len(), out.display());
    let mut manifest = RunManifest::new("summarize", cfg, None)?;
    hash_archive(&mut manifest, dir)?;
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSettings {
    pub archive: Option<PathBuf>,
    /// Prediction design on the raw scale; defaults to the training design.
    pub predict_design: Option<PathBuf>,
    pub grid_size: usize,
}

impl Default for SelectSettings {
    fn default() -> Self {
        Self {
            archive: None,
            predict_design: None,
            grid_size: DEFAULT_GRID_SIZE,
        }
    }
}

#[derive(Serialize)]
struct SelectionReport<'a> {
    selected: Vec<&'a str>,
    model_size: usize,
    lambda: f64,
    fallback: bool,
    rho2_full: fosr::dss::Rho2Summary,
    rho2_selected: fosr::dss::Rho2Summary,
    max_kkt_residual: f64,
}

pub fn select(cfg: &SelectSettings, out: &Path) -> Result<()> {
    let start = Instant::now();
    let Some(dir) = &cfg.archive else {
        bail!(invalid("select needs --archive"));
    };
    if cfg.grid_size < 2 {
        bail!(invalid("--grid-size must be at least 2"));
    }
    let archive = load_archives(dir)?;
    let x_tilde = match &cfg.predict_design {
        Some(path) => {
            let (x, _) = read_design(File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
            Some(archive.manifest.standardization.apply(&x)?)
        }
        None => None,
    };
    let prob = build_dss_problem(&archive, x_tilde.as_ref())?;
    let path = run_selection(&prob, &archive, cfg.grid_size)?;
    fs::create_dir_all(out)?;
    let p = prob.p();
    path.write_csv(&out.join("selection.csv"), p)?;

    let names = &archive.manifest.predictor_names;
    let chosen = path.selected_predictors();
    let report = SelectionReport {
        selected: chosen.iter().map(|&j| names[j].as_str()).collect(),
        model_size: chosen.len(),
        lambda: path.lambda_grid[path.selected_index],
        fallback: path.fallback,
        rho2_full: path.rho2_full,
        rho2_selected: path.rho2_lambda[path.selected_index],
        max_kkt_residual: path.max_kkt_residual(),
    };
    fs::write(out.join("selected.json"), serde_json::to_string_pretty(&report)?)?;

    // Point estimates of the selected model's coefficient functions.
    let coef = prob.coefficient_functions(&path.selected().delta);
    let mut w = File::create(out.join("selected_coefficients.csv"))?;
    write!(w, "tau")?;
    for &j in &chosen {
        write!(w, ",{}", names[j])?;
    }
    writeln!(w)?;
    for (l, t) in archive.manifest.tau.iter().enumerate() {
        write!(w, "{t}")?;
        for &j in &chosen {
            write!(w, ",{}", coef[(j, l)])?;
        }
        writeln!(w)?;
    }

    eprintln!(
        "selected {} of {} predictors{}: {}",
        chosen.len(),
        p,
        if path.fallback { " (fallback)" } else { "" },
        report.selected.join(", ")
    );
    let mut manifest = RunManifest::new("select", cfg, None)?;
    hash_archive(&mut manifest, dir)?;
    if let Some(pd) = &cfg.predict_design {
        manifest.hash_input(pd)?;
    }
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySettings {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub p1: usize,
    pub rsnr: f64,
    pub replicates: usize,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub ablation: bool,
    pub grid_size: usize,
}

impl Default for StudySettings {
    fn default() -> Self {
        let d = StudyConfig::default();
        Self {
            n: d.sim.n,
            m: d.sim.m,
            p: d.sim.p,
            p1: d.sim.p1,
            rsnr: d.sim.rsnr,
            replicates: d.replicates,
            seed: d.seed,
            k: d.mcmc.k,
            iters: d.mcmc.n_iter,
            burnin: d.mcmc.burn_in,
            thin: d.mcmc.thin,
            ablation: d.ablation,
            grid_size: d.grid_size,
        }
    }
}

pub fn study(cfg: &StudySettings, out: &Path) -> Result<()> {
    let start = Instant::now();
    let d = StudyConfig::default();
    let config = StudyConfig {
        sim: SimSettings {
            n: cfg.n,
            m: cfg.m,
            p: cfg.p,
            p1: cfg.p1,
            rsnr: cfg.rsnr,
        },
        replicates: cfg.replicates,
        seed: cfg.seed,
        mcmc: McmcConfig {
            k: cfg.k,
            n_iter: cfg.iters,
            burn_in: cfg.burnin,
            thin: cfg.thin,
            ..d.mcmc
        },
        ablation: cfg.ablation,
        grid_size: cfg.grid_size,
    };
    eprintln!(
        "running {} replicate(s) at n={} m={} p={} with {} iterations",
        cfg.replicates, cfg.n, cfg.m, cfg.p, cfg.iters
    );
    let outcome = run_study(&config)?;
    fs::create_dir_all(out)?;
    outcome.write_csvs(&out.join("results.csv"), &out.join("roc.csv"), cfg.p)?;
    for method in ["fosr", "fosr-dss", "basis-spline"] {
        if let Some(r) = outcome.method_mean(method, |r| Some(r.rmse)) {
            eprintln!("{method}: mean RMSE {r:.5}");
        }
    }
    eprintln!(
        "mean ROC area: dss {:.4}, gbpv {:.4}",
        outcome.mean_auc(true),
        outcome.mean_auc(false)
    );
    let mut manifest = RunManifest::new("study", cfg, Some(cfg.seed))?;
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(out)
}
