//! The five subcommands: simulate, fit, crossval, predict, hazard.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use slidemark::error::{Error, Result};
use slidemark::eval::{
    self, auc, crps_ensemble, dic, make_folds, summarize_series, thinning_factor, FoldMode,
    TruthSpec,
};
use slidemark::graph::PixelGrid;
use slidemark::marks::{MarkModel, MarkParams};
use slidemark::model::{deviance, Dataset, Landslide, LatentState, ModelConfig};
use slidemark::sampler::{run_chain_checkpointed, ChainOutput, SamplerOptions};

use crate::config::{EvalMode, RunConfig};
use crate::io::{
    self, create_out_dir, export_dataset, write_csv_with_echo, FitArtifact, Ingested,
    FIT_ARTIFACT_VERSION,
};

/// Parameter names in summary order, matching both truth files and
/// posterior summaries.
pub fn parameter_names(
    family: slidemark::marks::MarkFamily,
    iid_eta: bool,
    iid_mu: bool,
    beta_free: bool,
    names1: &[String],
    names2: &[String],
) -> Vec<String> {
    let mut names = Vec::new();
    for p in family.param_names() {
        names.push(format!("mark_{p}"));
    }
    names.push("kappa_w1".into());
    names.push("kappa_w2".into());
    if iid_eta {
        names.push("kappa_eta".into());
    }
    if iid_mu {
        names.push("kappa_mu".into());
    }
    names.push("gamma1".into());
    names.push("gamma2".into());
    if beta_free {
        names.push("beta".into());
    }
    for n in names1 {
        names.push(format!("beta1_{n}"));
    }
    for n in names2 {
        names.push(format!("beta2_{n}"));
    }
    names
}

fn state_scalars(state: &LatentState, iid_eta: bool, iid_mu: bool, beta_free: bool) -> Vec<f64> {
    let mut v = state.theta.values();
    v.push(state.kappa_w1);
    v.push(state.kappa_w2);
    if iid_eta {
        v.push(state.kappa_eta);
    }
    if iid_mu {
        v.push(state.kappa_mu);
    }
    v.push(state.gamma1);
    v.push(state.gamma2);
    if beta_free {
        v.push(state.beta);
    }
    v.extend(state.beta1.iter().copied());
    v.extend(state.beta2.iter().copied());
    v
}

/// Per-parameter draw series for the scalar parameters of a chain.
pub fn scalar_series(
    chain: &ChainOutput,
    iid_eta: bool,
    iid_mu: bool,
    beta_free: bool,
) -> Vec<Vec<f64>> {
    let n_params = state_scalars(&chain.draws[0], iid_eta, iid_mu, beta_free).len();
    let mut series = vec![Vec::with_capacity(chain.draws.len()); n_params];
    for draw in &chain.draws {
        for (k, v) in state_scalars(draw, iid_eta, iid_mu, beta_free).into_iter().enumerate() {
            series[k].push(v);
        }
    }
    series
}

fn sampler_options(config: &RunConfig, seed: Option<u64>) -> SamplerOptions {
    SamplerOptions {
        n_iter: config.sampler.n_iter,
        burn_in: config.sampler.burn_in,
        thin: config.sampler.thin,
        seed: seed.unwrap_or(config.sampler.seed),
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(config: &RunConfig, out: &Path, seed: Option<u64>) -> Result<()> {
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs a [simulate] section".into()))?;
    let seed = seed.unwrap_or(config.sampler.seed);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let theta = MarkParams::new(sim.family, &sim.theta)?;
    let beta1 = if sim.beta1.is_empty() { vec![0.15; sim.p1] } else { sim.beta1.clone() };
    let beta2 = if sim.beta2.is_empty() { vec![0.15; sim.p2] } else { sim.beta2.clone() };
    let truth = TruthSpec {
        gamma1: sim.gamma1,
        gamma2: sim.gamma2,
        beta1,
        beta2,
        beta: sim.beta,
        kappa_eta: sim.kappa_eta,
        kappa_mu: sim.kappa_mu,
        kappa_w1: sim.kappa_w1,
        kappa_w2: sim.kappa_w2,
        theta,
    };

    // Use the provided spatial structure when paths are configured,
    // otherwise generate a synthetic one.
    let (graph, grid, z1, z2, names1, names2) = if config.paths.pixels.is_some() {
        let ing = io::ingest_structure(config)?;
        (ing.0, ing.1, ing.2, ing.3, ing.4, ing.5)
    } else {
        let graph = eval::synthetic::random_unit_graph(sim.n_units, sim.extra_edges, &mut rng);
        let su = eval::synthetic::random_pixel_assignment(sim.n_pixels, sim.n_units, &mut rng);
        let mut grid = PixelGrid::regular(su, sim.n_units)?;
        for e in grid.exposure.iter_mut() {
            *e = sim.exposure;
        }
        let z1 = eval::synthetic::standard_normal_matrix(sim.n_pixels, sim.p1, &mut rng);
        let z2 = eval::synthetic::standard_normal_matrix(sim.n_pixels, sim.p2, &mut rng);
        let names1: Vec<String> = (1..=sim.p1).map(|i| format!("z1_{i}")).collect();
        let names2: Vec<String> = (1..=sim.p2).map(|i| format!("z2_{i}")).collect();
        (graph, grid, z1, z2, names1, names2)
    };
    if z1.ncols() != truth.beta1.len() || z2.ncols() != truth.beta2.len() {
        return Err(Error::Config(format!(
            "truth coefficient lengths ({}, {}) do not match covariates ({}, {})",
            truth.beta1.len(),
            truth.beta2.len(),
            z1.ncols(),
            z2.ncols()
        )));
    }

    let simulated = eval::simulate_dataset(&truth, &graph, &grid, &z1, &z2, &mut rng)?;
    create_out_dir(out)?;
    export_dataset(out, &grid, &graph, &simulated.dataset, &names1, &names2)?;

    let names = parameter_names(sim.family, true, true, true, &names1, &names2);
    let mut values = truth.theta.values();
    values.extend([truth.kappa_w1, truth.kappa_w2, truth.kappa_eta, truth.kappa_mu]);
    values.extend([truth.gamma1, truth.gamma2, truth.beta]);
    values.extend(truth.beta1.iter().copied());
    values.extend(truth.beta2.iter().copied());
    let echo = format!("{}seed = {seed}\n", config.echo(Some(seed)));
    write_csv_with_echo(
        &out.join("truth.csv"),
        &echo,
        "parameter,value",
        names.iter().zip(values.iter()).map(|(n, v)| format!("{n},{v}")),
    )?;
    log::info!(
        "simulated {} landslides over {} pixels / {} units",
        simulated.dataset.n_landslides(),
        grid.n_pixels(),
        graph.n_units()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

pub fn cmd_fit(config: &RunConfig, out: &Path, seed: Option<u64>) -> Result<()> {
    let ingested = io::ingest(config)?;
    let opts = sampler_options(config, seed);
    let model_config = config.model_config();
    let (chain, checkpoint) = run_chain_checkpointed(
        &model_config,
        &ingested.dataset,
        &ingested.graph,
        opts,
        None,
        None,
    )?;
    create_out_dir(out)?;
    write_fit_outputs(config, &model_config, &ingested, chain, out, opts.seed)?;
    let file = std::fs::File::create(out.join("checkpoint.json"))
        .map_err(|e| Error::Data(format!("checkpoint: {e}")))?;
    checkpoint.write_to(std::io::BufWriter::new(file))?;
    Ok(())
}

pub fn write_fit_outputs(
    config: &RunConfig,
    model_config: &ModelConfig,
    ingested: &Ingested,
    chain: ChainOutput,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let names = parameter_names(
        config.model.family,
        model_config.iid_eta,
        model_config.iid_mu,
        model_config.beta_free,
        &ingested.covariate_names_counts,
        &ingested.covariate_names_sizes,
    );
    let series = scalar_series(
        &chain,
        model_config.iid_eta,
        model_config.iid_mu,
        model_config.beta_free,
    );
    let echo = config.echo(Some(seed));
    write_csv_with_echo(
        &out.join("posterior_summary.csv"),
        &echo,
        "parameter,median,sd,q025,q975",
        names.iter().zip(series.iter()).map(|(n, s)| {
            let sm = summarize_series(s);
            format!("{n},{},{},{},{}", sm.median, sm.sd, sm.q025, sm.q975)
        }),
    )?;

    let artifact = FitArtifact {
        version: FIT_ARTIFACT_VERSION,
        config_echo: echo,
        seed,
        n_units: ingested.graph.n_units(),
        covariate_names_counts: ingested.covariate_names_counts.clone(),
        covariate_names_sizes: ingested.covariate_names_sizes.clone(),
        transform_counts: ingested.transform_counts.clone(),
        transform_sizes: ingested.transform_sizes.clone(),
        chain,
    };
    artifact.save(&out.join("chain.json"))
}

// ---------------------------------------------------------------------------
// crossval
// ---------------------------------------------------------------------------

/// Per-unit observed values and per-draw predictions collected over the
/// held-out items of one or more folds.
struct UnitEval {
    observed_count: Vec<f64>,
    /// draw-major: pred_count[s][u]
    pred_count: Vec<Vec<f64>>,
    /// units that carry a size observation, with observed aggregate sizes
    size_units: Vec<usize>,
    observed_size: Vec<f64>,
    /// draw-major predicted aggregate size per entry of `size_units`
    pred_size: Vec<Vec<f64>>,
}

fn metric_rows(eval_cfg: &crate::config::EvalSection, unit_eval: &UnitEval, fold: &str) -> Vec<String> {
    let n_units = unit_eval.observed_count.len();
    let n_draws = unit_eval.pred_count.len();
    let mut rows = Vec::new();

    let mean_count: Vec<f64> = (0..n_units)
        .map(|u| unit_eval.pred_count.iter().map(|d| d[u]).sum::<f64>() / n_draws as f64)
        .collect();
    let labels: Vec<bool> =
        unit_eval.observed_count.iter().map(|&c| c >= eval_cfg.count_threshold).collect();
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
    rows.push(format!("{fold},auc,count,{}", fmt(auc(&mean_count, &labels))));
    let abs_err =
        (0..n_units).map(|u| (mean_count[u] - unit_eval.observed_count[u]).abs()).sum::<f64>()
            / n_units as f64;
    rows.push(format!("{fold},abs_error,count,{abs_err}"));
    let crps_count = (0..n_units)
        .map(|u| {
            let draws: Vec<f64> = unit_eval.pred_count.iter().map(|d| d[u]).collect();
            crps_ensemble(&draws, unit_eval.observed_count[u]).unwrap_or(f64::NAN)
        })
        .sum::<f64>()
        / n_units as f64;
    rows.push(format!("{fold},crps,count,{crps_count}"));

    let n_size = unit_eval.size_units.len();
    if n_size > 0 {
        let mean_size: Vec<f64> = (0..n_size)
            .map(|j| unit_eval.pred_size.iter().map(|d| d[j]).sum::<f64>() / n_draws as f64)
            .collect();
        let threshold = eval_cfg.size_threshold.unwrap_or_else(|| {
            unit_eval.observed_size.iter().sum::<f64>() / n_size as f64
        });
        let labels: Vec<bool> = unit_eval.observed_size.iter().map(|&s| s >= threshold).collect();
        rows.push(format!("{fold},auc,size,{}", fmt(auc(&mean_size, &labels))));
        let abs_err = (0..n_size)
            .map(|j| (mean_size[j] - unit_eval.observed_size[j]).abs())
            .sum::<f64>()
            / n_size as f64;
        rows.push(format!("{fold},abs_error,size,{abs_err}"));
        let crps_size = (0..n_size)
            .map(|j| {
                let draws: Vec<f64> = unit_eval.pred_size.iter().map(|d| d[j]).collect();
                crps_ensemble(&draws, unit_eval.observed_size[j]).unwrap_or(f64::NAN)
            })
            .sum::<f64>()
            / n_size as f64;
        rows.push(format!("{fold},crps,size,{crps_size}"));
    }
    rows
}

fn observed_unit_counts(dataset: &Dataset, grid: &PixelGrid, n_units: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_units];
    for i in 0..dataset.n_pixels() {
        counts[grid.su_index[i]] += dataset.counts[i] as f64;
    }
    counts
}

fn observed_unit_sizes(dataset: &Dataset, grid: &PixelGrid, n_units: usize) -> Vec<Option<f64>> {
    let mut sizes = vec![None; n_units];
    for rec in &dataset.landslides {
        let u = grid.su_index[rec.pixel];
        *sizes[u].get_or_insert(0.0) += rec.size;
    }
    sizes
}

/// Per-draw unit count predictions from stored eta draws over given pixels.
fn unit_count_draws(
    chain: &ChainOutput,
    exposure: &[f64],
    su: &[usize],
    n_units: usize,
    factor: f64,
) -> Vec<Vec<f64>> {
    chain
        .draws
        .iter()
        .map(|d| {
            let mut out = vec![0.0; n_units];
            for i in 0..su.len() {
                out[su[i]] += factor * exposure[i] * d.eta[i].exp();
            }
            out
        })
        .collect()
}

pub fn cmd_crossval(config: &RunConfig, out: &Path, seed: Option<u64>) -> Result<()> {
    let ingested = io::ingest(config)?;
    let model_config = config.model_config();
    let opts = sampler_options(config, seed);
    let n_units = ingested.graph.n_units();
    create_out_dir(out)?;
    let echo = config.echo(Some(opts.seed));

    let mut rows: Vec<String> = Vec::new();
    match config.eval.fold_mode {
        EvalMode::WithinSample => {
            let chain =
                slidemark::sampler::run_chain(&model_config, &ingested.dataset, &ingested.graph, opts)?;
            let unit_eval = within_sample_eval(&ingested, &chain, n_units);
            rows.extend(metric_rows(&config.eval, &unit_eval, "ws"));
            // Conditional deviance DIC over the stored draws.
            let mut devs = Vec::with_capacity(chain.draws.len());
            for d in &chain.draws {
                let mark = MarkModel::new(d.theta)?;
                devs.push(deviance(d, &ingested.dataset, &model_config, &mark)?);
            }
            let mean_state = posterior_mean_state(&chain);
            let mark = MarkModel::new(mean_state.theta)?;
            let d_mean = deviance(&mean_state, &ingested.dataset, &model_config, &mark)?;
            rows.push(format!("ws,dic,joint,{}", dic(&devs, d_mean)?));
        }
        EvalMode::Units => {
            let plan = make_folds(FoldMode::SlopeUnitKFold, config.eval.k, n_units, opts.seed)?;
            let fold_results: Vec<Result<UnitEval>> = {
                use rayon::prelude::*;
                (0..config.eval.k)
                    .into_par_iter()
                    .map(|fold| unit_fold_eval(config, &model_config, &ingested, &plan.labels, fold, opts))
                    .collect()
            };
            let mut pooled = UnitEval {
                observed_count: Vec::new(),
                pred_count: vec![Vec::new(); 0],
                size_units: Vec::new(),
                observed_size: Vec::new(),
                pred_size: vec![Vec::new(); 0],
            };
            for (fold, result) in fold_results.into_iter().enumerate() {
                let unit_eval = result?;
                rows.extend(metric_rows(&config.eval, &unit_eval, &fold.to_string()));
                pool_unit_eval(&mut pooled, unit_eval);
            }
            rows.extend(metric_rows(&config.eval, &pooled, "pooled"));
        }
        EvalMode::Thinning => {
            let l = ingested.dataset.n_landslides();
            let plan = make_folds(FoldMode::Thinning, config.eval.k, l, opts.seed)?;
            let fold_results: Vec<Result<UnitEval>> = {
                use rayon::prelude::*;
                (0..config.eval.k)
                    .into_par_iter()
                    .map(|fold| {
                        thinning_fold_eval(config, &model_config, &ingested, &plan.labels, fold, opts)
                    })
                    .collect()
            };
            let mut pooled: Option<UnitEval> = None;
            for (fold, result) in fold_results.into_iter().enumerate() {
                let unit_eval = result?;
                rows.extend(metric_rows(&config.eval, &unit_eval, &fold.to_string()));
                match pooled.as_mut() {
                    None => pooled = Some(unit_eval),
                    Some(p) => pool_unit_eval(p, unit_eval),
                }
            }
            if let Some(p) = pooled {
                rows.extend(metric_rows(&config.eval, &p, "pooled"));
            }
        }
    }

    write_csv_with_echo(&out.join("metrics.csv"), &echo, "fold,metric,target,value", rows.into_iter())
}

fn pool_unit_eval(pooled: &mut UnitEval, fold: UnitEval) {
    let offset_draws = |dst: &mut Vec<Vec<f64>>, src: Vec<Vec<f64>>| {
        if dst.is_empty() {
            *dst = src;
        } else {
            for (d, s) in dst.iter_mut().zip(src.into_iter()) {
                d.extend(s);
            }
        }
    };
    let unit_offset = 0; // units are disjoint across folds; indices are local
    let _ = unit_offset;
    pooled.observed_count.extend(fold.observed_count);
    offset_draws(&mut pooled.pred_count, fold.pred_count);
    pooled.size_units.extend(fold.size_units);
    pooled.observed_size.extend(fold.observed_size);
    offset_draws(&mut pooled.pred_size, fold.pred_size);
}

fn posterior_mean_state(chain: &ChainOutput) -> LatentState {
    let n = chain.draws.len() as f64;
    let mut mean = chain.draws[0].clone();
    let mut eta = DVector::zeros(mean.eta.len());
    let mut mu = DVector::zeros(mean.mu.len());
    let mut theta = vec![0.0; mean.theta.values().len()];
    for d in &chain.draws {
        eta += &d.eta;
        mu += &d.mu;
        for (k, v) in d.theta.values().into_iter().enumerate() {
            theta[k] += v;
        }
    }
    mean.eta = eta / n;
    mean.mu = mu / n;
    for t in theta.iter_mut() {
        *t /= n;
    }
    mean.theta = MarkParams::new(mean.theta.family(), &theta).expect("mean of valid params");
    mean
}

fn within_sample_eval(ingested: &Ingested, chain: &ChainOutput, n_units: usize) -> UnitEval {
    let grid = &ingested.grid;
    let dataset = &ingested.dataset;
    let pred_count =
        unit_count_draws(chain, &grid.exposure, &grid.su_index, n_units, 1.0);
    let observed_count = observed_unit_counts(dataset, grid, n_units);

    // Sizes anchored at the observed landslides, using the stored mu draws.
    let observed = observed_unit_sizes(dataset, grid, n_units);
    let size_units: Vec<usize> = (0..n_units).filter(|&u| observed[u].is_some()).collect();
    let observed_size: Vec<f64> = size_units.iter().map(|&u| observed[u].unwrap()).collect();
    let unit_pos: std::collections::HashMap<usize, usize> =
        size_units.iter().enumerate().map(|(j, &u)| (u, j)).collect();
    let pred_size: Vec<Vec<f64>> = chain
        .draws
        .iter()
        .map(|d| {
            let mut out = vec![0.0; size_units.len()];
            for (j, rec) in dataset.landslides.iter().enumerate() {
                let u = grid.su_index[rec.pixel];
                out[unit_pos[&u]] += d.mu[j].exp();
            }
            out
        })
        .collect();
    UnitEval {
        observed_count,
        pred_count,
        size_units,
        observed_size,
        pred_size,
    }
}

fn fold_seed(base: u64, fold: usize) -> u64 {
    base.wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn unit_fold_eval(
    _config: &RunConfig,
    model_config: &ModelConfig,
    ingested: &Ingested,
    labels: &[usize],
    fold: usize,
    opts: SamplerOptions,
) -> Result<UnitEval> {
    let grid = &ingested.grid;
    let dataset = &ingested.dataset;
    let n1 = dataset.n_pixels();
    let held: Vec<bool> = (0..n1).map(|i| labels[grid.su_index[i]] == fold).collect();

    // Training structures: drop held-out pixels and their landslides.
    let train_pixels: Vec<usize> = (0..n1).filter(|&i| !held[i]).collect();
    let train_grid = PixelGrid::new(
        train_pixels.iter().map(|&i| grid.x[i]).collect(),
        train_pixels.iter().map(|&i| grid.y[i]).collect(),
        train_pixels.iter().map(|&i| grid.su_index[i]).collect(),
        train_pixels.iter().map(|&i| grid.exposure[i]).collect(),
        ingested.graph.n_units(),
    )?;
    let mut pixel_map = vec![usize::MAX; n1];
    for (new, &old) in train_pixels.iter().enumerate() {
        pixel_map[old] = new;
    }
    let train_counts: Vec<u32> = train_pixels.iter().map(|&i| dataset.counts[i]).collect();
    let keep_ls: Vec<usize> =
        (0..dataset.n_landslides()).filter(|&j| !held[dataset.landslides[j].pixel]).collect();
    let train_landslides: Vec<Landslide> = keep_ls
        .iter()
        .map(|&j| Landslide {
            pixel: pixel_map[dataset.landslides[j].pixel],
            size: dataset.landslides[j].size,
        })
        .collect();
    let z1 = DMatrix::from_fn(train_pixels.len(), dataset.p1(), |r, c| {
        dataset.z1[(train_pixels[r], c)]
    });
    let z2 = DMatrix::from_fn(keep_ls.len(), dataset.p2(), |r, c| dataset.z2[(keep_ls[r], c)]);
    let z2_pixel = DMatrix::from_fn(train_pixels.len(), dataset.z2_pixel.ncols(), |r, c| {
        dataset.z2_pixel[(train_pixels[r], c)]
    });
    let train =
        Dataset::point_process(train_counts, train_landslides, z1, z2, z2_pixel, &train_grid)?;

    let fold_opts = SamplerOptions { seed: fold_seed(opts.seed, fold), ..opts };
    let chain = slidemark::sampler::run_chain(model_config, &train, &ingested.graph, fold_opts)?;

    // Predictions at the held-out units.
    let held_units: Vec<usize> = (0..ingested.graph.n_units()).filter(|&u| labels[u] == fold).collect();
    let unit_pos: std::collections::HashMap<usize, usize> =
        held_units.iter().enumerate().map(|(j, &u)| (u, j)).collect();
    let held_pixels: Vec<usize> = (0..n1).filter(|&i| held[i]).collect();
    let z1_held = DMatrix::from_fn(held_pixels.len(), dataset.p1(), |r, c| {
        dataset.z1[(held_pixels[r], c)]
    });
    let su_held: Vec<usize> = held_pixels.iter().map(|&i| grid.su_index[i]).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(fold_seed(opts.seed, fold) ^ 0x5EED);
    let eta_draws = eval::reconstruct_eta_draws(&chain, &z1_held, &su_held, &mut rng);
    let pred_count: Vec<Vec<f64>> = eta_draws
        .iter()
        .map(|draw| {
            let mut out = vec![0.0; held_units.len()];
            for (r, &i) in held_pixels.iter().enumerate() {
                out[unit_pos[&grid.su_index[i]]] += grid.exposure[i] * draw[r].exp();
            }
            out
        })
        .collect();
    let observed_count: Vec<f64> = {
        let all = observed_unit_counts(dataset, grid, ingested.graph.n_units());
        held_units.iter().map(|&u| all[u]).collect()
    };

    // Held-out landslides: mu reconstructed at their covariate rows.
    let held_ls: Vec<usize> =
        (0..dataset.n_landslides()).filter(|&j| held[dataset.landslides[j].pixel]).collect();
    let (size_units, observed_size, pred_size) = if held_ls.is_empty() {
        (Vec::new(), Vec::new(), Vec::new())
    } else {
        let z2_held =
            DMatrix::from_fn(held_ls.len(), dataset.p2(), |r, c| dataset.z2[(held_ls[r], c)]);
        let su_ls: Vec<usize> =
            held_ls.iter().map(|&j| grid.su_index[dataset.landslides[j].pixel]).collect();
        let mu_draws = eval::reconstruct_mu_draws(&chain, &z2_held, &su_ls, &mut rng);
        let mut observed: Vec<Option<f64>> = vec![None; held_units.len()];
        for &j in &held_ls {
            let u = grid.su_index[dataset.landslides[j].pixel];
            *observed[unit_pos[&u]].get_or_insert(0.0) += dataset.landslides[j].size;
        }
        let size_units: Vec<usize> = held_units
            .iter()
            .enumerate()
            .filter(|(j, _)| observed[*j].is_some())
            .map(|(_, &u)| u)
            .collect();
        let size_pos: std::collections::HashMap<usize, usize> =
            size_units.iter().enumerate().map(|(j, &u)| (u, j)).collect();
        let observed_size: Vec<f64> = observed.iter().flatten().copied().collect();
        let pred_size: Vec<Vec<f64>> = mu_draws
            .iter()
            .map(|draw| {
                let mut out = vec![0.0; size_units.len()];
                for (r, &u) in su_ls.iter().enumerate() {
                    out[size_pos[&u]] += draw[r].exp();
                }
                out
            })
            .collect();
        (size_units, observed_size, pred_size)
    };

    Ok(UnitEval { observed_count, pred_count, size_units, observed_size, pred_size })
}

fn thinning_fold_eval(
    config: &RunConfig,
    model_config: &ModelConfig,
    ingested: &Ingested,
    labels: &[usize],
    fold: usize,
    opts: SamplerOptions,
) -> Result<UnitEval> {
    let grid = &ingested.grid;
    let dataset = &ingested.dataset;
    let n1 = dataset.n_pixels();
    let n_units = ingested.graph.n_units();

    // Training data: remove this fold's landslides and decrement counts.
    let mut train_counts: Vec<u32> = dataset.counts.clone();
    let keep_ls: Vec<usize> =
        (0..dataset.n_landslides()).filter(|&j| labels[j] != fold).collect();
    let held_ls: Vec<usize> = (0..dataset.n_landslides()).filter(|&j| labels[j] == fold).collect();
    for &j in &held_ls {
        train_counts[dataset.landslides[j].pixel] -= 1;
    }
    let train_landslides: Vec<Landslide> =
        keep_ls.iter().map(|&j| dataset.landslides[j]).collect();
    let z2 = DMatrix::from_fn(keep_ls.len(), dataset.p2(), |r, c| dataset.z2[(keep_ls[r], c)]);
    let train = Dataset::point_process(
        train_counts,
        train_landslides,
        dataset.z1.clone(),
        z2,
        dataset.z2_pixel.clone(),
        grid,
    )?;

    let fold_opts = SamplerOptions { seed: fold_seed(opts.seed, fold), ..opts };
    let chain = slidemark::sampler::run_chain(model_config, &train, &ingested.graph, fold_opts)?;

    // Counts: stored intensities, re-adjusted by k/(k-1), against the full
    // observed counts at every unit.
    let factor = thinning_factor(config.eval.k);
    let pred_count = unit_count_draws(&chain, &grid.exposure, &grid.su_index, n_units, factor);
    let observed_count = observed_unit_counts(dataset, grid, n_units);
    let _ = n1;

    // Sizes: reconstruct mu at the held-out landslides.
    let (size_units, observed_size, pred_size) = if held_ls.is_empty() {
        (Vec::new(), Vec::new(), Vec::new())
    } else {
        let z2_held =
            DMatrix::from_fn(held_ls.len(), dataset.p2(), |r, c| dataset.z2[(held_ls[r], c)]);
        let su_ls: Vec<usize> =
            held_ls.iter().map(|&j| grid.su_index[dataset.landslides[j].pixel]).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(fold_seed(opts.seed, fold) ^ 0x5EED);
        let mu_draws = eval::reconstruct_mu_draws(&chain, &z2_held, &su_ls, &mut rng);
        let mut observed: Vec<Option<f64>> = vec![None; n_units];
        for &j in &held_ls {
            let u = grid.su_index[dataset.landslides[j].pixel];
            *observed[u].get_or_insert(0.0) += dataset.landslides[j].size;
        }
        let size_units: Vec<usize> = (0..n_units).filter(|&u| observed[u].is_some()).collect();
        let size_pos: std::collections::HashMap<usize, usize> =
            size_units.iter().enumerate().map(|(j, &u)| (u, j)).collect();
        let observed_size: Vec<f64> = observed.iter().flatten().copied().collect();
        let pred_size: Vec<Vec<f64>> = mu_draws
            .iter()
            .map(|draw| {
                let mut out = vec![0.0; size_units.len()];
                for (r, &u) in su_ls.iter().enumerate() {
                    out[size_pos[&u]] += draw[r].exp();
                }
                out
            })
            .collect();
        (size_units, observed_size, pred_size)
    };

    Ok(UnitEval { observed_count, pred_count, size_units, observed_size, pred_size })
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

fn check_artifact_compatibility(artifact: &FitArtifact, ingested: &Ingested) -> Result<()> {
    if artifact.covariate_names_counts != ingested.covariate_names_counts
        || artifact.covariate_names_sizes != ingested.covariate_names_sizes
    {
        return Err(Error::Config(format!(
            "chain archive was fitted with covariates {:?} / {:?}, but the current config selects {:?} / {:?}",
            artifact.covariate_names_counts,
            artifact.covariate_names_sizes,
            ingested.covariate_names_counts,
            ingested.covariate_names_sizes
        )));
    }
    if artifact.n_units != ingested.graph.n_units() {
        return Err(Error::Config(format!(
            "chain archive has {} units, current graph has {}",
            artifact.n_units,
            ingested.graph.n_units()
        )));
    }
    Ok(())
}

pub fn cmd_predict(config: &RunConfig, out: &Path, chain_path: &Path) -> Result<()> {
    let ingested = io::ingest(config)?;
    let artifact = FitArtifact::load(chain_path)?;
    check_artifact_compatibility(&artifact, &ingested)?;
    let chain = &artifact.chain;
    if chain.draws.is_empty() {
        return Err(Error::Data("chain archive holds no draws".into()));
    }
    let n_units = ingested.graph.n_units();
    let grid = &ingested.grid;
    let dataset = &ingested.dataset;

    let mut rng = ChaCha12Rng::seed_from_u64(artifact.seed ^ 0x93ED);
    let predictions = eval::posterior_predict(chain, dataset, grid, n_units, &mut rng)?;

    // Event-anchored size predictions from the stored mu draws.
    let mut unit_size_events = vec![0.0; n_units];
    for d in &chain.draws {
        for (j, rec) in dataset.landslides.iter().enumerate() {
            unit_size_events[grid.su_index[rec.pixel]] += d.mu[j].exp();
        }
    }
    for v in unit_size_events.iter_mut() {
        *v /= chain.draws.len() as f64;
    }

    let observed_count = observed_unit_counts(dataset, grid, n_units);
    let observed_size = observed_unit_sizes(dataset, grid, n_units);
    create_out_dir(out)?;
    write_csv_with_echo(
        &out.join("predictions.csv"),
        &artifact.config_echo,
        "su_id,observed_count,predicted_count,observed_size,predicted_size",
        (0..n_units).map(|u| {
            format!(
                "{u},{},{},{},{}",
                observed_count[u],
                predictions.unit_count[u],
                observed_size[u].map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
                unit_size_events[u]
            )
        }),
    )
}

// ---------------------------------------------------------------------------
// hazard
// ---------------------------------------------------------------------------

pub fn cmd_hazard(config: &RunConfig, out: &Path, chain_path: &Path) -> Result<()> {
    let ingested = io::ingest(config)?;
    let artifact = FitArtifact::load(chain_path)?;
    check_artifact_compatibility(&artifact, &ingested)?;
    let chain = &artifact.chain;
    if chain.draws.is_empty() {
        return Err(Error::Data("chain archive holds no draws".into()));
    }
    let grid = &ingested.grid;
    let dataset = &ingested.dataset;
    let n1 = grid.n_pixels();

    // Stored eta draws; mu rebuilt at every pixel from the linear predictor
    // draws (landslide-level extra covariates enter at their standardized
    // mean, zero).
    let eta_draws: Vec<DVector<f64>> = chain.draws.iter().map(|d| d.eta.clone()).collect();
    let p2 = chain.draws[0].beta2.len();
    let mut z2 = DMatrix::zeros(n1, p2);
    for i in 0..n1 {
        for c in 0..dataset.z2_pixel.ncols().min(p2) {
            z2[(i, c)] = dataset.z2_pixel[(i, c)];
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(artifact.seed ^ 0x44A2);
    let mu_draws = eval::reconstruct_mu_draws(chain, &z2, &grid.su_index, &mut rng);

    let susceptibility = eval::susceptibility(&eta_draws, &grid.exposure)?;
    let subset: Vec<usize> = match &config.eval.subset {
        None => (0..n1).collect(),
        Some(path) => {
            let wanted = io::read_subset_pixel_ids(path)?;
            let index: std::collections::HashMap<i64, usize> =
                ingested.pixel_ids.iter().enumerate().map(|(row, &id)| (id, row)).collect();
            wanted
                .iter()
                .map(|id| {
                    index.get(id).copied().ok_or_else(|| {
                        Error::Data(format!("subset references unknown pixel id {id}"))
                    })
                })
                .collect::<Result<Vec<usize>>>()?
        }
    };
    let hazard = eval::hazard(&eta_draws, &mu_draws, &grid.exposure, &subset, &config.eval.quantiles)?;

    create_out_dir(out)?;
    write_csv_with_echo(
        &out.join("hazard_map.csv"),
        &artifact.config_echo,
        "pixel_id,susceptibility,hazard_mean",
        (0..n1).map(|i| {
            format!("{},{},{}", ingested.pixel_ids[i], susceptibility[i], hazard.pixel_mean[i])
        }),
    )?;
    write_csv_with_echo(
        &out.join("hazard_aggregate.csv"),
        &artifact.config_echo,
        "quantile,value",
        hazard.aggregate_quantiles.iter().map(|(p, v)| format!("{p},{v}")),
    )
}
