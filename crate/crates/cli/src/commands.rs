//! Subcommand implementations. Each writes its artifacts under the output
//! directory and returns a short human-readable summary.

use std::path::{Path, PathBuf};

use sap_core::bp::{channel_llr, BpConfig, BpGraph};
use sap_core::channel::{evaluate, ChannelConfig, EvalOptions, EvalPoint};
use sap_core::code::{hard_decision, LinearCode};
use sap_core::decoder::{load_checkpoint, save_checkpoint, train_mixture, DecoderModel};
use sap_core::experiment::{correlation_study, default_pairs, eval_model, seq_len, StudyConfig};
use sap_core::library::{Decision, LibraryEntry, MaskLibrary};
use sap_core::lora::{merge, recover, AdaptedModel, LoraAdapterSet};
use sap_core::mask::{masked_flops, model_flops, DecoderArchitecture, StructuredMask};
use sap_core::numfmt::fmt17;
use sap_core::pruning::{apply_mask, compact, fisher_importance, select_mask};
use sap_core::report::{eval_rows, loss_rows, write_csv, CsvMeta, EVAL_COLUMNS};
use serde::Serialize;

use crate::config::{resolve_code, RunConfig};
use crate::error::CliError;

/// Resolved configuration plus where to write.
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(
        cfg: RunConfig,
        out_flag: Option<PathBuf>,
        env_out: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let out = out_flag
            .or_else(|| cfg.out_dir.as_ref().map(|p| cfg.base_dir.join(p)))
            .or(env_out)
            .unwrap_or_else(|| PathBuf::from("sap-out"));
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        Ok(Self { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn meta(&self) -> CsvMeta {
        CsvMeta::new(self.cfg.hash(), self.cfg.seed)
    }

    fn csv(
        &self,
        name: &str,
        meta: CsvMeta,
        columns: &[&str],
        rows: &[Vec<String>],
    ) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        write_csv(std::io::BufWriter::new(f), &meta, columns, rows)
            .map_err(|e| CliError::format(&path, e))?;
        Ok(path)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
        self.text(name, &text)
    }

    fn text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, format!("{}\n", text.trim_end()))
            .map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub fn load_model(path: &Path) -> Result<DecoderModel, CliError> {
    load_checkpoint(path).map_err(|e| match e {
        sap_core::decoder::DecoderError::Io(source) => CliError::io(path, source),
        other => CliError::format(path, other),
    })
}

fn save_model(model: &DecoderModel, path: &Path) -> Result<(), CliError> {
    save_checkpoint(model, path).map_err(|e| CliError::format(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_mask(path: &Path) -> Result<(DecoderArchitecture, StructuredMask), CliError> {
    StructuredMask::from_json(&read_text(path)?).map_err(|e| CliError::format(path, e))
}

pub fn load_library(path: &Path) -> Result<MaskLibrary, CliError> {
    MaskLibrary::load(path).map_err(|e| match e {
        sap_core::library::LibraryError::Io(source) => CliError::io(path, source),
        other => CliError::format(path, other),
    })
}

/// `0.4` → `r40`, `0.125` → `r12.5`.
fn ratio_tag(r: f64) -> String {
    let pct = format!("{:.4}", r * 100.0);
    let pct = pct.trim_end_matches('0').trim_end_matches('.');
    format!("r{pct}")
}

// ---------------------------------------------------------------- train

pub fn cmd_train(ctx: &Context) -> Result<String, CliError> {
    let codes = ctx.cfg.training_codes()?;
    let mut model = DecoderModel::new(ctx.cfg.arch()?, ctx.cfg.seed).map_err(CliError::runtime)?;
    let report = train_mixture(&mut model, &codes, &ctx.cfg.train).map_err(CliError::runtime)?;
    let ckpt = ctx.path("backbone.ckpt");
    save_model(&model, &ckpt)?;
    let names: Vec<&str> = codes.iter().map(|c| c.name.as_str()).collect();
    let meta = ctx.meta().with("codes", names.join(" "));
    let trace = ctx.csv(
        "train_loss.csv",
        meta,
        &["epoch", "loss"],
        &loss_rows(&report.epoch_loss),
    )?;
    Ok(format!(
        "trained {} steps on {}; final epoch loss {}\n{}\n{}",
        report.steps,
        names.join(", "),
        fmt17(*report.epoch_loss.last().unwrap_or(&f64::NAN)),
        ckpt.display(),
        trace.display()
    ))
}

// ---------------------------------------------------------------- prune

#[derive(Debug, Serialize)]
pub struct PruneReport {
    pub config_hash: String,
    pub seed: u64,
    pub code: String,
    pub seq_len: usize,
    pub target_ratio: Option<f64>,
    pub achieved_ratio: f64,
    pub full_flops: f64,
    pub pruned_flops: f64,
    pub full_params: usize,
    pub pruned_params: usize,
    pub heads_retained: usize,
    pub ffn_retained: usize,
    pub mask_file: String,
    pub checkpoint_file: String,
}

pub fn cmd_prune(
    ctx: &Context,
    checkpoint: &Path,
    ratios: &[f64],
    use_mask: Option<&Path>,
) -> Result<String, CliError> {
    let model = load_model(checkpoint)?;
    if model.is_compacted() {
        return Err(CliError::Usage(format!(
            "{} is already compacted",
            checkpoint.display()
        )));
    }
    let code = ctx.cfg.code()?;
    let arch = model.arch;
    let seq = seq_len(&code);

    let plans: Vec<(String, Option<f64>, StructuredMask)> = if let Some(path) = use_mask {
        let (mask_arch, mask) = load_mask(path)?;
        if mask_arch != arch {
            return Err(CliError::Usage(format!(
                "mask architecture {mask_arch:?} does not match checkpoint {arch:?}"
            )));
        }
        vec![("given".into(), None, mask)]
    } else {
        let ratios: Vec<f64> = if !ratios.is_empty() {
            ratios.to_vec()
        } else if !ctx.cfg.prune.ratios.is_empty() {
            ctx.cfg.prune.ratios.clone()
        } else {
            vec![ctx.cfg.prune.target_ratio]
        };
        if let Some(r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(CliError::Usage(format!("ratio {r} must lie in [0, 1)")));
        }
        let scores =
            fisher_importance(&model, &code, &ctx.cfg.prune.calib).map_err(CliError::runtime)?;
        ctx.json("importance.json", &scores)?;
        ratios
            .iter()
            .map(|&r| {
                select_mask(&scores, &arch, seq, r)
                    .map(|m| (ratio_tag(r), Some(r), m))
                    .map_err(CliError::runtime)
            })
            .collect::<Result<_, _>>()?
    };

    let full = model_flops(&arch, seq);
    let mut lines = Vec::new();
    for (tag, target, mask) in plans {
        let pruned = compact(&apply_mask(&model, &mask).map_err(CliError::runtime)?)
            .map_err(CliError::runtime)?;
        let mask_file = format!("mask_{tag}.json");
        let ckpt_file = format!("pruned_{tag}.ckpt");
        ctx.text(&mask_file, &mask.to_json(&arch).map_err(CliError::runtime)?)?;
        save_model(&pruned, &ctx.path(&ckpt_file))?;
        let kept = masked_flops(&arch, &mask, seq).map_err(CliError::runtime)?;
        let report = PruneReport {
            config_hash: ctx.cfg.hash(),
            seed: ctx.cfg.seed,
            code: code.name.clone(),
            seq_len: seq,
            target_ratio: target,
            achieved_ratio: 1.0 - kept / full,
            full_flops: full,
            pruned_flops: kept,
            full_params: model.param_count(),
            pruned_params: pruned.param_count(),
            heads_retained: mask.retained_heads(),
            ffn_retained: mask.retained_ffn(),
            mask_file,
            checkpoint_file: ckpt_file,
        };
        ctx.json(&format!("prune_{tag}.json"), &report)?;
        lines.push(format!(
            "{tag}: FLOPs reduction {:.2}% ({} heads, {} FFN channels kept), params {} -> {}",
            100.0 * report.achieved_ratio,
            report.heads_retained,
            report.ffn_retained,
            report.full_params,
            report.pruned_params
        ));
    }
    Ok(lines.join("\n"))
}

// ---------------------------------------------------------------- sap

#[derive(Debug, Serialize)]
pub struct DecisionRecord {
    pub config_hash: String,
    pub seed: u64,
    pub code: String,
    pub decision: Decision,
    /// Similarity to the nearest entry; absent for an empty library.
    pub kappa: Option<f64>,
    pub distance: Option<f64>,
    pub nearest_index: Option<usize>,
    pub nearest_label: Option<String>,
    pub entry_index: usize,
    pub tau: f64,
    pub beta: f64,
    pub library_len: usize,
}

pub fn cmd_sap(
    ctx: &Context,
    checkpoint: &Path,
    library: &Path,
    create_new: bool,
) -> Result<String, CliError> {
    let model = load_model(checkpoint)?;
    let code = ctx.cfg.code()?;
    let mut lib = if library.exists() {
        load_library(library)?
    } else if create_new {
        let l = &ctx.cfg.library;
        MaskLibrary::new(model.arch, l.k, l.tau, l.beta).map_err(|e| CliError::Config {
            field: "library".into(),
            msg: e.to_string(),
        })?
    } else {
        return Err(CliError::Usage(format!(
            "library {} does not exist (pass --create-new to start one)",
            library.display()
        )));
    };
    if lib.arch != model.arch {
        return Err(CliError::Usage(format!(
            "library architecture {:?} does not match checkpoint {:?}",
            lib.arch, model.arch
        )));
    }
    let calib = ctx.cfg.prune.calib;
    let ratio = ctx.cfg.prune.target_ratio;
    let sel = lib
        .select_or_create(&code.name, &code.pcm, |_| {
            sap_core::experiment::dedicated_mask(&model, &code, &calib, ratio)
        })
        .map_err(CliError::runtime)?;
    if sel.decision == Decision::Created {
        lib.save(library)
            .map_err(|e| CliError::format(library, e))?;
    }
    let record = DecisionRecord {
        config_hash: ctx.cfg.hash(),
        seed: ctx.cfg.seed,
        code: code.name.clone(),
        decision: sel.decision,
        kappa: sel.retrieval.map(|r| r.similarity),
        distance: sel.retrieval.map(|r| r.distance),
        nearest_index: sel.retrieval.map(|r| r.index),
        nearest_label: sel.retrieval.map(|r| lib.entries()[r.index].label.clone()),
        entry_index: sel.entry_index,
        tau: lib.tau,
        beta: lib.beta,
        library_len: lib.len(),
    };
    ctx.json("sap_decision.json", &record)?;
    ctx.text(
        "sap_mask.json",
        &sel.mask.to_json(&lib.arch).map_err(CliError::runtime)?,
    )?;
    Ok(format!(
        "{} kappa={} nearest={} entry={} library_len={}",
        sel.decision,
        record.kappa.map(fmt17).unwrap_or_else(|| "none".into()),
        record.nearest_label.as_deref().unwrap_or("none"),
        sel.entry_index,
        lib.len()
    ))
}

// ---------------------------------------------------------------- recover

pub fn cmd_recover(
    ctx: &Context,
    student: &Path,
    teacher: Option<&Path>,
    gamma: Option<f64>,
    ranks: &[usize],
    merge_out: bool,
) -> Result<String, CliError> {
    let student_model = load_model(student)?;
    let mut rcfg = ctx.cfg.recover.clone();
    if let Some(g) = gamma {
        rcfg.gamma = g;
    }
    let teacher_model = match teacher {
        Some(p) => load_model(p)?,
        None if rcfg.gamma == 0.0 => student_model.clone(),
        None => {
            return Err(CliError::Usage(
                "--teacher is required unless --gamma 0".into(),
            ))
        }
    };
    let code = ctx.cfg.code()?;
    let ranks = if ranks.is_empty() {
        vec![rcfg.rank]
    } else {
        ranks.to_vec()
    };
    let mut lines = Vec::new();
    for rank in ranks {
        let cfg = sap_core::lora::RecoveryConfig {
            rank,
            ..rcfg.clone()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let report =
            recover(&student_model, &teacher_model, &code, &cfg).map_err(CliError::runtime)?;
        let adapters_file = format!("adapters_r{rank}.json");
        ctx.text(
            &adapters_file,
            &report.adapters.to_json().map_err(CliError::runtime)?,
        )?;
        let meta = ctx
            .meta()
            .with("gamma", fmt17(cfg.gamma))
            .with("rank", rank);
        ctx.csv(
            &format!("recover_loss_r{rank}.csv"),
            meta,
            &["epoch", "loss"],
            &loss_rows(&report.epoch_loss),
        )?;
        let share = report.adapters.param_count() as f64 / student_model.param_count() as f64;
        let mut line = format!(
            "rank {rank}: {adapters_file}, {} adapter params ({:.1}% of backbone), final loss {}",
            report.adapters.param_count(),
            100.0 * share,
            fmt17(*report.epoch_loss.last().unwrap_or(&f64::NAN))
        );
        if merge_out {
            let merged = merge(&student_model, report.adapters).map_err(CliError::runtime)?;
            let name = format!("merged_r{rank}.ckpt");
            save_model(&merged, &ctx.path(&name))?;
            line.push_str(&format!(", merged into {name}"));
        }
        lines.push(line);
    }
    Ok(lines.join("\n"))
}

// ---------------------------------------------------------------- eval

/// Which decoder `cmd_eval` runs.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Checkpoint {
        path: PathBuf,
        adapters: Option<PathBuf>,
    },
    Bp,
    HardDecision,
}

impl ModelSpec {
    fn default_label(&self) -> &'static str {
        match self {
            ModelSpec::Checkpoint { adapters: None, .. } => "nn",
            ModelSpec::Checkpoint { .. } => "lora",
            ModelSpec::Bp => "bp",
            ModelSpec::HardDecision => "hard",
        }
    }
}

fn eval_options(ctx: &Context) -> EvalOptions {
    let e = &ctx.cfg.eval;
    EvalOptions {
        min_frames: e.min_frames,
        min_errors: e.min_errors,
        max_frames: e.max_frames,
        block: e.block,
        random_codewords: e.random_codewords,
        exec: ctx.cfg.exec,
    }
}

pub fn run_eval(
    ctx: &Context,
    code: &LinearCode,
    spec: &ModelSpec,
    snr: &[f64],
) -> Result<Vec<EvalPoint>, CliError> {
    let opts = eval_options(ctx);
    let seed = ctx.cfg.seed;
    let points = || -> Result<Vec<ChannelConfig>, CliError> {
        snr.iter()
            .map(|&e| {
                ChannelConfig::new(e, code.rate(), seed).map_err(|e| CliError::Usage(e.to_string()))
            })
            .collect()
    };
    match spec {
        ModelSpec::Checkpoint { path, adapters } => {
            let mut model = load_model(path)?;
            if let Some(a) = adapters {
                let set = LoraAdapterSet::from_json(&read_text(a)?)
                    .map_err(|e| CliError::format(a, e))?;
                model = AdaptedModel::new(model, set)
                    .and_then(|m| m.to_model())
                    .map_err(|e| CliError::Usage(e.to_string()))?;
            }
            eval_model(&model, code, snr, seed, &opts).map_err(CliError::runtime)
        }
        ModelSpec::Bp => {
            let graph = BpGraph::new(&code.pcm);
            let cfg = BpConfig {
                max_iters: ctx.cfg.eval.bp_iters,
                early_stop: true,
            };
            evaluate(
                &points()?,
                code,
                |y, sigma| {
                    channel_llr(y, sigma)
                        .and_then(|llr| graph.decode(&llr, &cfg))
                        .map(|r| r.bits)
                        .unwrap_or_default()
                },
                &opts,
            )
            .map_err(CliError::runtime)
        }
        ModelSpec::HardDecision => {
            evaluate(&points()?, code, |y, _| hard_decision(y), &opts).map_err(CliError::runtime)
        }
    }
}

pub fn cmd_eval(
    ctx: &Context,
    spec: &ModelSpec,
    snr: &[f64],
    label: Option<&str>,
) -> Result<String, CliError> {
    let code = ctx.cfg.code()?;
    let snr = if snr.is_empty() {
        ctx.cfg.eval.snr_db.clone()
    } else {
        snr.to_vec()
    };
    let res = run_eval(ctx, &code, spec, &snr)?;
    let label = label.unwrap_or(spec.default_label());
    let meta = ctx.meta().with("code", &code.name).with("decoder", label);
    let path = ctx.csv(
        &format!("eval_{label}.csv"),
        meta,
        EVAL_COLUMNS,
        &eval_rows(&res),
    )?;
    let mut lines: Vec<String> = res
        .iter()
        .map(|p| {
            format!(
                "{:>5.2} dB  BER {:.4e}  FER {:.4e}  frames {}",
                p.ebn0_db, p.ber, p.fer, p.frames
            )
        })
        .collect();
    lines.push(path.display().to_string());
    Ok(lines.join("\n"))
}

// ---------------------------------------------------------------- correlate

pub const CORRELATION_COLUMNS: &[&str] = &[
    "pair",
    "kind",
    "seed",
    "d_adjacency",
    "d_laplacian",
    "d_wd",
    "kappa_adjacency",
    "kappa_laplacian",
    "kappa_wd",
    "jaccard",
];

#[derive(Debug, Serialize)]
struct CorrelationSummary {
    config_hash: String,
    seed: u64,
    pairs: usize,
    seeds: Vec<u64>,
    rho_adjacency: f64,
    rho_laplacian: f64,
    rho_wd: f64,
    beta_adjacency: f64,
    beta_laplacian: f64,
    beta_wd: f64,
}

pub fn cmd_correlate(ctx: &Context, backbone: &Path) -> Result<String, CliError> {
    let model = load_model(backbone)?;
    let c = &ctx.cfg.correlate;
    let pairs = if c.pairs.is_empty() {
        default_pairs()
    } else {
        c.pairs.clone()
    };
    if pairs.len() < 3 {
        return Err(CliError::Config {
            field: "correlate.pairs".into(),
            msg: format!(
                "Pearson ρ is undefined for {} pairs; need at least 3",
                pairs.len()
            ),
        });
    }
    let study = StudyConfig {
        seeds: c.seeds.clone(),
        calib: ctx.cfg.prune.calib,
        target_ratio: c.target_ratio,
        k: c.k,
        beta_adjacency: c.beta_adjacency,
    };
    let rep = correlation_study(&model, &pairs, &study).map_err(CliError::runtime)?;
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                r.pair.clone(),
                serde_json::to_value(r.kind)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                r.seed.to_string(),
                fmt17(r.distances.adjacency),
                fmt17(r.distances.laplacian),
                fmt17(r.distances.degree_wd),
                fmt17(r.kappa_adjacency),
                fmt17(r.kappa_laplacian),
                fmt17(r.kappa_wd),
                fmt17(r.jaccard),
            ]
        })
        .collect();
    let meta = ctx
        .meta()
        .with("rho_adjacency", fmt17(rep.rho_adjacency))
        .with("rho_laplacian", fmt17(rep.rho_laplacian))
        .with("rho_wd", fmt17(rep.rho_wd));
    let path = ctx.csv("correlation.csv", meta, CORRELATION_COLUMNS, &rows)?;
    ctx.json(
        "correlation_summary.json",
        &CorrelationSummary {
            config_hash: ctx.cfg.hash(),
            seed: ctx.cfg.seed,
            pairs: pairs.len(),
            seeds: c.seeds.clone(),
            rho_adjacency: rep.rho_adjacency,
            rho_laplacian: rep.rho_laplacian,
            rho_wd: rep.rho_wd,
            beta_adjacency: rep.beta_adjacency,
            beta_laplacian: rep.beta_laplacian,
            beta_wd: rep.beta_wd,
        },
    )?;
    Ok(format!(
        "{} pairs x {} seeds: rho_adjacency {:.4} rho_laplacian {:.4} rho_wd {:.4}\n{}",
        pairs.len(),
        c.seeds.len(),
        rep.rho_adjacency,
        rep.rho_laplacian,
        rep.rho_wd,
        path.display()
    ))
}

// ---------------------------------------------------------------- library

pub fn cmd_library_show(library: &Path) -> Result<String, CliError> {
    let lib = load_library(library)?;
    let mut lines = vec![format!(
        "K={} tau={} beta={} arch L={} h={} d_model={} d_ffn={} entries={}",
        lib.k,
        lib.tau,
        lib.beta,
        lib.arch.layers,
        lib.arch.heads,
        lib.arch.d_model,
        lib.arch.d_ffn,
        lib.len()
    )];
    for (i, e) in lib.entries().iter().enumerate() {
        lines.push(format!(
            "{i:>3}  {:<20} n={:<3} k={:<3} heads={:<3} ffn={:<4} created_at={}",
            e.label,
            e.signature.source_dims.0,
            e.signature.source_dims.1,
            e.mask.retained_heads(),
            e.mask.retained_ffn(),
            e.created_at
        ));
    }
    Ok(lines.join("\n"))
}

pub fn cmd_library_add(
    library: &Path,
    code: &str,
    mask: &Path,
    label: Option<&str>,
    defaults: &crate::config::LibrarySection,
) -> Result<String, CliError> {
    let code = resolve_code(code)?;
    let (arch, mask) = load_mask(mask)?;
    let mut lib = if library.exists() {
        load_library(library)?
    } else {
        MaskLibrary::new(arch, defaults.k, defaults.tau, defaults.beta)
            .map_err(CliError::runtime)?
    };
    if lib.arch != arch {
        return Err(CliError::Usage(format!(
            "mask architecture {arch:?} does not match library {:?}",
            lib.arch
        )));
    }
    let signature = lib.signature_of(&code.pcm).map_err(CliError::runtime)?;
    let index = lib
        .insert(LibraryEntry {
            label: label.unwrap_or(&code.name).to_string(),
            created_at: sap_core::library::timestamp_now(),
            signature,
            mask,
        })
        .map_err(CliError::runtime)?;
    lib.save(library)
        .map_err(|e| CliError::format(library, e))?;
    Ok(format!(
        "added entry {index} ({}); library now has {} entries",
        code.name,
        lib.len()
    ))
}
