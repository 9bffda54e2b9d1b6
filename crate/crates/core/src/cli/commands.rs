use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use simrecon::eigenspace::fit_pca_with_stats;
use simrecon::experiment::{self, AblationError, AblationPlan, World, WorldSpec};
use simrecon::netbox::{self, RemoteOracle, ServerConfig};
use simrecon::optimizer::{reconstruct_with_monitors, EmbeddingMonitor, TraceMonitor};
use simrecon::oracle::{NoisyOracle, QuantizedOracle};
use simrecon::synthetic::{FaceModel, FaceModelSpec};
use simrecon::verify::{evaluate_replacement, ImagePair};
use simrecon::{
    load_basis, make_cosine_oracle, save_basis, EigenBasis, ImageTensor, LatentCoords, OptimizerConfig, RunError,
    RunTrace, SimilarityOracle, SyntheticEmbedder, TargetId,
};

use super::config::{FileConfig, OptimizerSection};
use super::specs::{self, EmbedderSpec, OracleSpec};
use super::*;

fn resolve_out_dir(shared: &SharedArgs, file: &mut FileConfig) -> Result<PathBuf, CliError> {
    let dir = shared
        .out_dir
        .clone()
        .or(file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    file.out_dir = Some(dir.clone());
    Ok(dir)
}

fn resolve_seed(shared: &SharedArgs, file: &mut FileConfig) -> u64 {
    let seed = shared.seed.or(file.seed).unwrap_or(0);
    file.seed = Some(seed);
    seed
}

fn resolve_basis(shared: &SharedArgs, file: &mut FileConfig) -> Option<PathBuf> {
    let b = shared.basis.clone().or(file.basis.clone());
    file.basis = b.clone();
    b
}

fn open_basis(path: &Path) -> Result<EigenBasis, CliError> {
    load_basis(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn resolve_optimizer(
    args: &OptimizerArgs,
    file: &mut OptimizerSection,
    seed: u64,
) -> Result<OptimizerConfig, CliError> {
    let d = OptimizerConfig::default();
    let cfg = OptimizerConfig {
        sigma: args.sigma.or(file.sigma).unwrap_or(d.sigma),
        learning_rate: args.lr.or(file.lr),
        n_restarts: args.restarts.or(file.restarts).unwrap_or(d.n_restarts),
        restart_iters: args.restart_iters.or(file.restart_iters).unwrap_or(d.restart_iters),
        main_iters: args.main_iters.or(file.main_iters).unwrap_or(d.main_iters),
        seed,
        trace_every: args.trace_every.or(file.trace_every).unwrap_or(d.trace_every),
        init_std: args.init_std.or(file.init_std).unwrap_or(d.init_std),
        clamp_probes: args.clamp_probes || file.clamp_probes.unwrap_or(false),
        parallel_restarts: args.parallel_restarts || file.parallel_restarts.unwrap_or(false),
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    *file = OptimizerSection {
        sigma: Some(cfg.sigma),
        lr: cfg.learning_rate,
        restarts: Some(cfg.n_restarts),
        restart_iters: Some(cfg.restart_iters),
        main_iters: Some(cfg.main_iters),
        trace_every: Some(cfg.trace_every),
        init_std: Some(cfg.init_std),
        clamp_probes: Some(cfg.clamp_probes),
        parallel_restarts: Some(cfg.parallel_restarts),
    };
    Ok(cfg)
}

/// Target ids become file names; anything outside `[A-Za-z0-9._-]` is
/// replaced by `_`.
pub fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn pca_fit(a: PcaFitArgs, mut file: FileConfig) -> Result<(), CliError> {
    let seed = resolve_seed(&a.shared, &mut file);
    let p = &mut file.pca_fit;
    let images_dir = a.images.clone().or(p.images.clone());
    let synthetic = a.synthetic.or(p.synthetic);
    let rank = a.rank.or(p.rank).ok_or_else(|| CliError::usage("--rank is required"))?;
    let width = a.width.or(p.width);
    let height = a.height.or(p.height);
    let channels = a.channels.or(p.channels).unwrap_or(3);
    if channels != 1 && channels != 3 {
        return Err(CliError::usage("--channels must be 1 or 3"));
    }

    let images = match (&images_dir, synthetic) {
        (Some(_), Some(_)) => return Err(CliError::usage("--images and --synthetic are exclusive")),
        (None, None) => return Err(CliError::usage("one of --images or --synthetic is required")),
        (None, Some(n)) => {
            let model = FaceModel::new(FaceModelSpec {
                width: width.unwrap_or(16),
                height: height.unwrap_or(16),
                channels,
                seed,
                ..Default::default()
            });
            model.training_set(n)
        }
        (Some(dir), None) => {
            let files = specs::png_files(dir)?;
            if files.is_empty() {
                return Err(CliError::input(format!("no PNG images in {}", dir.display())));
            }
            let resize = width.zip(height);
            let first = simrecon::ImageTensor::load(&files[0], resize, channels)
                .map_err(|e| CliError::input(format!("{}: {e}", files[0].display())))?;
            let dims = first.dims();
            let mut images = vec![first];
            for f in &files[1..] {
                images.push(specs::load_image(f, Some(dims))?);
            }
            images
        }
    };
    let (basis, stats) = fit_pca_with_stats(&images, rank).map_err(|e| CliError::input(e.to_string()))?;

    let out = match a.out.clone().or(p.out.clone()) {
        Some(o) => o,
        None => resolve_out_dir(&a.shared, &mut file)?.join("basis.bin"),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    save_basis(&basis, &out).map_err(|e| CliError::general(format!("{}: {e}", out.display())))?;

    let p = &mut file.pca_fit;
    p.images = images_dir;
    p.synthetic = synthetic;
    p.rank = Some(rank);
    p.width = Some(basis.dims().0);
    p.height = Some(basis.dims().1);
    p.channels = Some(basis.dims().2);
    p.out = Some(out.clone());
    let echo_dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    file.write(echo_dir)?;

    println!(
        "wrote {}: d={} k={} images={} retained_variance={:.6}",
        out.display(),
        basis.dim(),
        basis.rank(),
        stats.samples,
        stats.retained_fraction()
    );
    Ok(())
}

struct TargetRun {
    id: TargetId,
    status: &'static str,
    queries_used: u64,
    selected_restart: Option<usize>,
    final_score: Option<f64>,
    final_similarity: Option<f64>,
}

fn write_artifacts(
    dir: &Path,
    id: &TargetId,
    basis: &EigenBasis,
    coords: &LatentCoords,
    trace: &RunTrace,
) -> Result<ImageTensor, CliError> {
    let stem = file_stem_for(id.as_str());
    let image = basis.synthesize(coords).map_err(|e| CliError::general(e.to_string()))?;
    let png = dir.join(format!("{stem}.png"));
    image
        .save_png(&png)
        .map_err(|e| CliError::general(format!("{}: {e}", png.display())))?;
    let cpath = dir.join(format!("{stem}.coords"));
    std::fs::write(&cpath, coords.to_f32_le_bytes()).map_err(|e| CliError::io(&cpath, e))?;
    let tpath = dir.join(format!("{stem}.trace.csv"));
    let f = std::fs::File::create(&tpath).map_err(|e| CliError::io(&tpath, e))?;
    trace
        .write_csv(std::io::BufWriter::new(f))
        .map_err(|e| CliError::io(&tpath, e))?;
    Ok(image)
}

fn write_report(dir: &Path, runs: &[TargetRun]) -> Result<(), CliError> {
    let path = dir.join("report.csv");
    let run = || -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "target_id",
            "status",
            "queries_used",
            "selected_restart",
            "final_score",
            "final_similarity",
        ])?;
        for r in runs {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                r.id.to_string(),
                r.status.to_string(),
                r.queries_used.to_string(),
                r.selected_restart.map(|x| x.to_string()).unwrap_or_default(),
                opt(r.final_score),
                opt(r.final_similarity),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    run().map_err(|e| CliError::general(format!("{}: {e}", path.display())))
}

fn wrap_oracle(
    base: Box<dyn SimilarityOracle>,
    quantize: Option<u32>,
    noise: Option<f64>,
    seed: u64,
) -> Result<Box<dyn SimilarityOracle>, CliError> {
    let mut o = base;
    if let Some(std) = noise {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(CliError::usage("--noise-std must be finite and >= 0"));
        }
        o = Box::new(NoisyOracle::new(o, std, seed));
    }
    if let Some(bits) = quantize {
        if bits == 0 {
            return Err(CliError::usage("--quantize-bits must be at least 1"));
        }
        o = Box::new(QuantizedOracle::new(o, bits));
    }
    Ok(o)
}

pub fn reconstruct(a: ReconstructArgs, mut file: FileConfig) -> Result<(), CliError> {
    let seed = resolve_seed(&a.shared, &mut file);
    let out_dir = resolve_out_dir(&a.shared, &mut file)?;
    let basis_path = resolve_basis(&a.shared, &mut file).ok_or_else(|| CliError::usage("--basis is required"))?;
    let basis = open_basis(&basis_path)?;
    let config = resolve_optimizer(&a.optimizer, &mut file.optimizer, seed)?;

    let o = &mut file.oracle;
    let oracle_spec = a
        .oracle
        .oracle
        .clone()
        .or(o.oracle.clone())
        .ok_or_else(|| CliError::usage("--oracle is required"))?;
    let spec = specs::parse_oracle(&oracle_spec)?;
    let budget = a.oracle.budget.or(o.budget);
    let quantize = a.oracle.quantize_bits.or(o.quantize_bits);
    let noise = a.oracle.noise_std.or(o.noise_std);
    let enroll = a.oracle.enroll.clone().or(o.enroll.clone());
    let transfer = a.transfer.clone().or(o.transfer.clone());
    let requested: Vec<String> = if a.targets.is_empty() {
        o.targets.clone().unwrap_or_default()
    } else {
        a.targets.clone()
    };
    *o = super::config::OracleSection {
        oracle: Some(oracle_spec),
        budget,
        quantize_bits: quantize,
        noise_std: noise,
        enroll: enroll.clone(),
        targets: (!requested.is_empty()).then(|| requested.clone()),
        transfer: transfer.clone(),
    };

    let enrolled = match &enroll {
        Some(e) => Some(specs::load_enrollment(&specs::parse_enroll(e)?, Some(basis.dims()))?),
        None => None,
    };
    let transfer_emb = match &transfer {
        Some(t) => {
            if enrolled.is_none() {
                return Err(CliError::usage("--transfer needs --enroll"));
            }
            Some(Arc::new(specs::parse_embedder(t)?.build(basis.dims())))
        }
        None => None,
    };
    let builtin = match &spec {
        OracleSpec::Builtin(e) => {
            if enrolled.is_none() {
                return Err(CliError::usage("a builtin oracle needs --enroll"));
            }
            Some(Arc::new(e.build(basis.dims())))
        }
        OracleSpec::Remote(_) => None,
    };

    let mut targets = Vec::new();
    for t in &requested {
        targets.push(TargetId::new(t.clone()).map_err(|_| CliError::usage("empty --target"))?);
    }
    if targets.is_empty() {
        targets = match (&spec, &enrolled) {
            (OracleSpec::Builtin(_), Some(e)) => e.keys().cloned().collect(),
            (OracleSpec::Remote(addr), _) => RemoteOracle::connect(addr, None)
                .map_err(|e| CliError::from_oracle(&e))?
                .targets(),
            _ => unreachable!("builtin oracle without enrollment rejected above"),
        };
    }
    file.write(&out_dir)?;

    let mut runs = Vec::new();
    for id in &targets {
        let enrolled_img = enrolled.as_ref().and_then(|e| e.get(id));
        let base: Box<dyn SimilarityOracle> = match (&spec, &builtin) {
            (OracleSpec::Builtin(_), Some(emb)) => {
                let img = enrolled_img.ok_or_else(|| CliError::input(format!("target {id} is not enrolled")))?;
                let mut one = BTreeMap::new();
                one.insert(id.clone(), img.clone());
                Box::new(
                    make_cosine_oracle(emb.clone(), &one, budget)
                        .map_err(|e| CliError::input(format!("target {id}: {e}")))?,
                )
            }
            (OracleSpec::Remote(addr), _) => {
                Box::new(RemoteOracle::for_target(addr, id, budget).map_err(|e| CliError::from_oracle(&e))?)
            }
            _ => unreachable!(),
        };
        let oracle = wrap_oracle(base, quantize, noise, seed)?;

        let mut monitors: Vec<EmbeddingMonitor> = Vec::new();
        if let (Some(emb), Some(img)) = (&builtin, enrolled_img) {
            monitors.push(EmbeddingMonitor::new(experiment::TARGET_MONITOR, emb.clone(), img));
        }
        if let (Some(emb), Some(img)) = (&transfer_emb, enrolled_img) {
            monitors.push(EmbeddingMonitor::new(experiment::TRANSFER_MONITOR, emb.clone(), img));
        }
        let mons: Vec<&dyn TraceMonitor> = monitors.iter().map(|m| m as &dyn TraceMonitor).collect();
        let similarity = |img: &ImageTensor| monitors.first().filter(|_| builtin.is_some()).map(|m| m.measure(img));

        match reconstruct_with_monitors(&basis, &oracle, id, &config, &mons) {
            Ok(rec) => {
                let img = write_artifacts(&out_dir, id, &basis, &rec.coords, &rec.trace)?;
                log::info!("{id}: {} queries", rec.trace.queries_used);
                runs.push(TargetRun {
                    id: id.clone(),
                    status: "ok",
                    queries_used: rec.trace.queries_used,
                    selected_restart: rec.trace.selected_restart,
                    final_score: rec.trace.records.last().map(|r| r.score),
                    final_similarity: similarity(&img),
                });
            }
            Err(e @ RunError::Interrupted { .. }) => {
                let partial = e.partial().expect("interrupted runs carry a partial");
                let img = write_artifacts(&out_dir, id, &basis, &partial.coords, &partial.trace)?;
                let err = CliError::from_run(&e);
                runs.push(TargetRun {
                    id: id.clone(),
                    status: if err.code == EXIT_BUDGET {
                        "budget_exhausted"
                    } else if err.code == EXIT_CONNECTION {
                        "connection_failed"
                    } else {
                        "failed"
                    },
                    queries_used: partial.trace.queries_used,
                    selected_restart: partial.trace.selected_restart,
                    final_score: partial.trace.records.last().map(|r| r.score),
                    final_similarity: similarity(&img),
                });
                write_report(&out_dir, &runs)?;
                return Err(CliError::new(
                    err.code,
                    format!("target {id}: {e} (partial results written)"),
                ));
            }
            Err(e) => {
                write_report(&out_dir, &runs)?;
                return Err(CliError::new(CliError::from_run(&e).code, format!("target {id}: {e}")));
            }
        }
    }
    write_report(&out_dir, &runs)?;
    for r in &runs {
        match r.final_similarity {
            Some(s) => println!("{}: {} queries, similarity {s:.6}", r.id, r.queries_used),
            None => println!("{}: {} queries", r.id, r.queries_used),
        }
    }
    Ok(())
}

struct PairRow {
    id_a: String,
    path_a: PathBuf,
    path_b: PathBuf,
    same: bool,
}

fn read_pairs(path: &Path) -> Result<Vec<PairRow>, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["id_a", "path_a", "id_b", "path_b", "label"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(CliError::input(format!(
            "{} line 1: header must be {}",
            path.display(),
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::input(format!("{} line {line}: {e}", path.display()))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |why: &str| CliError::input(format!("{} line {line}: {why}", path.display()));
        if rec.len() != 5 {
            return Err(bad(&format!("expected 5 fields, found {}", rec.len())));
        }
        let same = match &rec[4] {
            "1" => true,
            "0" => false,
            other => return Err(bad(&format!("label must be 0 or 1, found {other:?}"))),
        };
        if rec[1].is_empty() || rec[3].is_empty() {
            return Err(bad("empty image path"));
        }
        out.push(PairRow {
            id_a: rec[0].to_string(),
            path_a: base.join(&rec[1]),
            path_b: base.join(&rec[3]),
            same,
        });
    }
    if out.is_empty() {
        return Err(CliError::input(format!("{}: no pairs", path.display())));
    }
    Ok(out)
}

pub fn evaluate(a: EvaluateArgs, mut file: FileConfig) -> Result<(), CliError> {
    resolve_seed(&a.shared, &mut file);
    let out_dir = resolve_out_dir(&a.shared, &mut file)?;
    let basis_path = resolve_basis(&a.shared, &mut file);
    let e = &mut file.evaluate;
    let pairs_path = a
        .pairs
        .clone()
        .or(e.pairs.clone())
        .ok_or_else(|| CliError::usage("--pairs is required"))?;
    let recon_dir = a.recon_dir.clone().or(e.recon_dir.clone());
    let emb_spec = a
        .embedder
        .clone()
        .or(e.embedder.clone())
        .ok_or_else(|| CliError::usage("--embedder is required"))?;
    let folds = a.folds.or(e.folds).unwrap_or(10);
    let embedder: EmbedderSpec = specs::parse_embedder(&emb_spec)?;
    *e = super::config::EvaluateSection {
        pairs: Some(pairs_path.clone()),
        recon_dir: recon_dir.clone(),
        embedder: Some(emb_spec),
        folds: Some(folds),
    };

    let rows = read_pairs(&pairs_path)?;
    let mut dims = match &basis_path {
        Some(p) => Some(open_basis(p)?.dims()),
        None => None,
    };
    let mut cache: HashMap<PathBuf, ImageTensor> = HashMap::new();
    let mut load = |p: &Path, dims: &mut Option<(u32, u32, u32)>| -> Result<(), CliError> {
        if !cache.contains_key(p) {
            let img = specs::load_image(p, *dims)?;
            dims.get_or_insert(img.dims());
            cache.insert(p.to_path_buf(), img);
        }
        Ok(())
    };
    let mut recon_paths = Vec::with_capacity(rows.len());
    for r in &rows {
        load(&r.path_a, &mut dims)?;
        load(&r.path_b, &mut dims)?;
        let rp = match (&recon_dir, r.same) {
            (Some(d), true) => {
                let p = d.join(format!("{}.png", file_stem_for(&r.id_a)));
                if !p.is_file() {
                    return Err(CliError::input(format!("missing reconstruction {}", p.display())));
                }
                load(&p, &mut dims)?;
                Some(p)
            }
            _ => None,
        };
        recon_paths.push(rp);
    }
    let dims = dims.expect("at least one pair loaded");
    let emb: SyntheticEmbedder = embedder.build(dims);

    let pairs_with = |use_recon: bool| -> Vec<ImagePair<'_>> {
        rows.iter()
            .zip(&recon_paths)
            .map(|(r, rp)| ImagePair {
                first: &cache[&r.path_a],
                second: &cache[&r.path_b],
                same: r.same,
                replacement: rp.as_ref().filter(|_| use_recon).map(|p| &cache[p]),
            })
            .collect()
    };
    let verr = |e: simrecon::verify::VerifyError| CliError::input(e.to_string());
    let baseline = evaluate_replacement(&pairs_with(false), &emb, folds).map_err(verr)?;
    let write = |name: &str, r: &simrecon::FoldReport| -> Result<(), CliError> {
        let p = out_dir.join(name);
        let f = std::fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
        r.write_csv(f).map_err(|e| CliError::io(&p, e))
    };
    write("baseline_report.csv", &baseline)?;
    let report = if recon_dir.is_some() {
        let r = evaluate_replacement(&pairs_with(true), &emb, folds).map_err(verr)?;
        println!("baseline mean accuracy {:.6}", baseline.mean_accuracy);
        println!("replacement mean accuracy {:.6}", r.mean_accuracy);
        r
    } else {
        println!("mean accuracy {:.6}", baseline.mean_accuracy);
        baseline
    };
    write("report.csv", &report)?;
    file.write(&out_dir)
}

fn parse_seed_dim(s: &str) -> Result<(u64, usize), CliError> {
    let e = specs::parse_embedder(s)?;
    if e.flip {
        return Err(CliError::usage("flip is not supported for ablation embedders"));
    }
    Ok((e.seed, e.dim))
}

pub fn ablate(a: AblateArgs, mut file: FileConfig) -> Result<(), CliError> {
    let seed = resolve_seed(&a.shared, &mut file);
    let out_dir = resolve_out_dir(&a.shared, &mut file)?;
    let base = resolve_optimizer(&a.optimizer, &mut file.optimizer, seed)?;
    let s = &mut file.ablate;
    let base_k = a.k.or(s.k).unwrap_or(64);
    let ks = a.sweep_k.clone().or(s.sweep_k.clone()).unwrap_or_default();
    let sigmas = a.sweep_sigma.clone().or(s.sweep_sigma.clone()).unwrap_or_default();
    let restarts = a
        .sweep_restarts
        .clone()
        .or(s.sweep_restarts.clone())
        .unwrap_or_default();
    let main_iters = a
        .sweep_main_iters
        .clone()
        .or(s.sweep_main_iters.clone())
        .unwrap_or_default();
    let trials = a.trials.or(s.trials).unwrap_or(20);
    let threads = a
        .threads
        .or(s.threads)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let train_size = a.train_size.or(s.train_size).unwrap_or(256);
    let corpus_seed = a.corpus_seed.or(s.corpus_seed).unwrap_or(0);
    let target_spec = a
        .target_embedder
        .clone()
        .or(s.target_embedder.clone())
        .unwrap_or_else(|| "1:32".into());
    let transfer_spec = a
        .transfer_embedder
        .clone()
        .or(s.transfer_embedder.clone())
        .unwrap_or_else(|| "2:32".into());
    let (target_seed, target_dim) = parse_seed_dim(&target_spec)?;
    let (transfer_seed, transfer_dim) = parse_seed_dim(&transfer_spec)?;
    *s = super::config::AblateSection {
        k: Some(base_k),
        sweep_k: Some(ks.clone()),
        sweep_sigma: Some(sigmas.clone()),
        sweep_restarts: Some(restarts.clone()),
        sweep_main_iters: Some(main_iters.clone()),
        trials: Some(trials),
        threads: Some(threads),
        train_size: Some(train_size),
        corpus_seed: Some(corpus_seed),
        target_embedder: Some(target_spec),
        transfer_embedder: Some(transfer_spec),
    };

    let plan = AblationPlan {
        base,
        base_k,
        ks,
        sigmas,
        restarts,
        main_iters,
        trials,
        threads,
    };
    if plan.points().is_empty() {
        return Err(CliError::usage(
            "give at least one of --sweep-k, --sweep-sigma, --sweep-restarts, --sweep-main-iters",
        ));
    }
    let world = World::new(WorldSpec {
        model: FaceModelSpec {
            seed: corpus_seed,
            ..Default::default()
        },
        train_size,
        target_seed,
        target_dim,
        transfer_seed,
        transfer_dim,
    });
    file.write(&out_dir)?;
    let outcome = experiment::run_ablation(&world, &plan).map_err(|e| match e {
        AblationError::EmptyPlan | AblationError::NoTrials => CliError::usage(e.to_string()),
        AblationError::Run(r) => CliError::from_run(&r),
    })?;
    for sk in &outcome.skipped {
        eprintln!("skipped {}={}: {}", sk.axis, sk.value, sk.reason);
    }

    let rows_path = out_dir.join("ablation.csv");
    let f = std::fs::File::create(&rows_path).map_err(|e| CliError::io(&rows_path, e))?;
    experiment::write_rows_csv(&outcome.rows, f).map_err(|e| CliError::io(&rows_path, e))?;
    let summary = experiment::summarize(&outcome.rows);
    let sum_path = out_dir.join("ablation_summary.csv");
    let f = std::fs::File::create(&sum_path).map_err(|e| CliError::io(&sum_path, e))?;
    experiment::write_summary_csv(&summary, f).map_err(|e| CliError::io(&sum_path, e))?;
    for s in &summary {
        println!(
            "{}={} trials={} target={:.6} transfer={:.6}",
            s.axis, s.value, s.trials, s.mean_target_similarity, s.mean_transfer_similarity
        );
    }
    Ok(())
}

pub fn serve(a: ServeArgs, mut file: FileConfig) -> Result<(), CliError> {
    let seed = resolve_seed(&a.shared, &mut file);
    let basis_path = resolve_basis(&a.shared, &mut file);
    let o = &mut file.oracle;
    let oracle_spec = a
        .oracle
        .oracle
        .clone()
        .or(o.oracle.clone())
        .ok_or_else(|| CliError::usage("--oracle is required"))?;
    let OracleSpec::Builtin(emb_spec) = specs::parse_oracle(&oracle_spec)? else {
        return Err(CliError::usage("serve needs a builtin oracle"));
    };
    let budget = a.oracle.budget.or(o.budget);
    let quantize = a.oracle.quantize_bits.or(o.quantize_bits);
    let noise = a.oracle.noise_std.or(o.noise_std);
    let enroll = a
        .oracle
        .enroll
        .clone()
        .or(o.enroll.clone())
        .ok_or_else(|| CliError::usage("--enroll is required"))?;
    let sv = &mut file.serve;
    let bind = a
        .bind
        .clone()
        .or(sv.bind.clone())
        .unwrap_or_else(|| "127.0.0.1:8080".into());
    let latency_ms = a.latency_ms.or(sv.latency_ms);

    let dims = match &basis_path {
        Some(p) => Some(open_basis(p)?.dims()),
        None => None,
    };
    let enrolled = specs::load_enrollment(&specs::parse_enroll(&enroll)?, dims)?;
    let dims = enrolled.values().next().expect("enrollment is non-empty").dims();
    let embedder = Arc::new(emb_spec.build(dims));
    let base = make_cosine_oracle(embedder, &enrolled, None).map_err(|e| CliError::input(e.to_string()))?;
    let oracle: Arc<dyn SimilarityOracle> = Arc::from(wrap_oracle(Box::new(base), quantize, noise, seed)?);

    let ids: Vec<String> = enrolled.keys().map(|k| k.to_string()).collect();
    let config = ServerConfig {
        per_target_budget: budget,
        latency: latency_ms.map(Duration::from_millis),
    };
    netbox::serve_until(
        oracle,
        &bind,
        config,
        |addr| {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "listening on {addr}");
            let _ = writeln!(out, "targets: {}", ids.join(","));
            let _ = out.flush();
        },
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
    )
    .map_err(|e| match e {
        netbox::ServeError::NoTargets => CliError::input(e.to_string()),
        _ => CliError::general(e.to_string()),
    })
}
