//! One function per subcommand.

use std::fmt::Write as _;

use serde_json::json;

use netcem::bundle::{write_bundle, BundleMeta};
use netcem::cem::{build_global_basis, PatchOptions};
use netcem::diagnostics::{
    build_pou, decay_profile, error_report, spectral_gap_count, L2Weight, ThresholdPolicy,
};
use netcem::linalg::mm::write_vector;
use netcem::partition::regularity;
use netcem::pipeline::fine_solve;
use netcem::study::{run_bench, run_study, solution_hash, StudyConfig};
use netcem::{run_pipeline, AuxSpace, CemBasis};

use crate::session::Session;
use crate::CliError;

pub fn generate(s: &Session) -> Result<(), CliError> {
    let p = &s.problem;
    let meta = BundleMeta {
        source: p.name.clone(),
        seed: Some(p.seed),
        contrast: Some(p.contrast),
        defaults: Some(p.defaults.clone()),
    };
    let m = write_bundle(&s.output, &p.network, &p.load, p.l2_weight.as_ref(), &meta)?;
    let mut summary = json!({
        "nodes": m.node_count,
        "edges": m.edge_count,
        "content_hash": m.content_hash,
    });
    if let Some(fem) = &p.fem {
        summary["elements"] = json!(fem.mesh.triangles.len());
        summary["non_m_matrix"] = json!(fem.non_m_matrix);
    }
    s.finish(&["manifest.json", "L.mtx", "M.txt", "f.txt"], summary)
}

pub fn partition(s: &Session) -> Result<(), CliError> {
    let (part, warnings) = s.partition()?;
    part.write(&s.path("partition.txt"))?;
    let layers = s.config.layers.unwrap_or(0);
    let reg = regularity(&s.problem.network, &part, layers);
    s.write_json(
        "partition.json",
        &json!({
            "count": part.count(),
            "sizes": part.sizes(),
            "warnings": warnings,
            "regularity": reg,
            "oversampling": part.oversampling_json(layers),
        }),
    )?;
    s.finish(
        &["partition.txt", "partition.json"],
        json!({ "subgraphs": part.count(), "f_table": reg.f_table }),
    )
}

fn build_aux(s: &Session) -> Result<(netcem::Partition, AuxSpace), CliError> {
    let (part, _) = s.partition()?;
    let m = s.method();
    let aux = AuxSpace::build(
        &s.problem.network,
        &part,
        m.nov,
        &m.c_po,
        m.tolerances.eigen,
    )?;
    for w in &aux.warnings {
        log::warn!("{w}");
    }
    Ok((part, aux))
}

pub fn aux(s: &Session) -> Result<(), CliError> {
    let (_, aux) = build_aux(s)?;
    s.write_json("aux.json", &aux.summary())?;
    s.finish(
        &["aux.json"],
        json!({
            "dimension": aux.dimension(),
            "spectral_gap": aux.spectral_gap(),
            "c_po_max": aux.c_po_max(),
        }),
    )
}

pub fn basis(s: &Session) -> Result<(), CliError> {
    let (part, aux) = build_aux(s)?;
    let m = s.method();
    let opts = PatchOptions {
        tolerances: m.tolerances.clone(),
        direct_limit: m.direct_limit,
    };
    let basis = CemBasis::build(&s.problem.network, &part, &aux, m.layers, &opts)?;
    basis.write(&s.path("basis"))?;
    s.write_json("aux.json", &aux.summary())?;
    s.finish(
        &["basis", "aux.json"],
        json!({ "basis_functions": basis.dim() }),
    )
}

pub fn solve(s: &Session, with_fine: bool) -> Result<(), CliError> {
    let (part, _) = s.partition()?;
    let m = s.method();
    let p = &s.problem;
    let out = run_pipeline(&p.network, &part, &p.load, &m)?;
    for w in &out.aux.warnings {
        log::warn!("{w}");
    }
    write_vector(&s.path("u_ms.txt"), &s.expand(&out.solution.u)?)?;
    out.coarse.write(&s.path("coarse.mtx"))?;
    write_vector(&s.path("coarse_rhs.txt"), &out.coarse.rhs)?;
    let mut outputs = vec!["u_ms.txt", "coarse.mtx", "coarse_rhs.txt", "report.json"];
    let errors = if with_fine {
        let u = fine_solve(&p.network, &p.load, &m.tolerances)?;
        write_vector(&s.path("u_fine.txt"), &s.expand(&u)?)?;
        outputs.push("u_fine.txt");
        let a = p.network.operator_matrix();
        let diag = p.network.lumped_plus_mass();
        let weight = match &p.l2_weight {
            Some(mh) => L2Weight::Matrix(mh),
            None => L2Weight::Diagonal(&diag),
        };
        Some(error_report(&u, &out.solution.u, &a, weight)?)
    } else {
        None
    };
    let report = json!({
        "errors": errors,
        "subgraphs": part.count(),
        "layers": m.layers,
        "nov": m.nov,
        "contrast": p.contrast,
        "coarse_dimension": out.coarse.dim(),
        "coarse_asymmetry": out.coarse.asymmetry,
        "galerkin_residual": out.solution.galerkin_residual,
        "spectral_gap": out.aux.spectral_gap(),
        "c_po_max": out.aux.c_po_max(),
        "t_aux_s": out.timings.t_aux,
        "t_cem_s": out.timings.t_cem,
        "solution_hash": solution_hash(&out.solution.u),
        "warnings": out.aux.warnings,
    });
    s.write_json("report.json", &report)?;
    let summary = json!({
        "e_L2": errors.as_ref().map(|e| e.e_l2),
        "e_a": errors.as_ref().map(|e| e.e_a),
        "galerkin_residual": out.solution.galerkin_residual,
        "solution_hash": report["solution_hash"],
    });
    s.finish(&outputs, summary)
}

pub struct AnalyzeOptions {
    pub subgraph: usize,
    pub probe: usize,
    pub l_max: usize,
}

pub fn analyze(s: &Session, o: &AnalyzeOptions) -> Result<(), CliError> {
    let p = &s.problem;
    let net = &p.network;
    let (part, aux) = build_aux(s)?;
    if o.subgraph >= part.count() {
        return Err(CliError::Config(format!(
            "subgraph {} out of range ({} subgraphs)",
            o.subgraph,
            part.count()
        )));
    }
    let gap = spectral_gap_count(net, &ThresholdPolicy::new(p.contrast), o.probe)?;
    let pou = build_pou(net, &part)?;
    let psi = build_global_basis(net, &part, &aux, o.subgraph, 0)?;
    let decay = decay_profile(
        net,
        &part,
        &aux,
        &psi,
        o.subgraph,
        o.l_max,
        (1, o.l_max.min(4)),
    )?;
    let analysis = json!({
        "spectral_gap_count": gap,
        "partition_of_unity": {
            "sum_error": pou.sum_error,
            "max_jump": pou.max_jump,
            "support_ok": pou.support_ok,
        },
        "decay": decay,
        "decay_subgraph": o.subgraph,
        "aux_spectral_gap": aux.spectral_gap(),
        "c_po_max": aux.c_po_max(),
    });
    s.write_json("analysis.json", &analysis)?;
    s.finish(
        &["analysis.json"],
        json!({
            "small_eigenvalues": gap.count,
            "threshold": gap.threshold,
            "decay_theta": decay.theta,
            "decay_r_squared": decay.r_squared,
            "pou_sum_error": pou.sum_error,
        }),
    )
}

pub fn bench(s: &Session, threads: &[usize], repeats: usize) -> Result<(), CliError> {
    let (part, _) = s.partition()?;
    let table = run_bench(&s.problem, &part, &s.method(), threads, repeats)?;
    let mut csv =
        String::from("threads,t_aux_s,t_cem_s,S_aux,S_cem,E_aux,E_cem,solution_hash,noisy\n");
    for r in &table.rows {
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4},{},{}",
            r.threads,
            r.t_aux,
            r.t_cem,
            r.s_aux,
            r.s_cem,
            r.e_aux,
            r.e_cem,
            r.solution_hash,
            r.noisy
        );
    }
    let path = s.path("bench.csv");
    std::fs::write(&path, csv).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    s.write_json(
        "bench.json",
        &serde_json::to_value(&table).map_err(netcem::Error::from)?,
    )?;
    for r in table.rows.iter().filter(|r| r.noisy) {
        log::warn!(
            "timings on {} threads vary by more than 20% across repeats",
            r.threads
        );
    }
    if !table.hashes_agree {
        log::warn!("solution hashes differ across thread counts");
    }
    s.finish(
        &["bench.csv", "bench.json"],
        json!({
            "hashes_agree": table.hashes_agree,
            "S_cem": table.rows.iter().map(|r| (r.threads, r.s_cem)).collect::<Vec<_>>(),
        }),
    )
}

pub fn study(s: &Session) -> Result<(), CliError> {
    let Some(name) = s.config.preset.clone() else {
        return Err(CliError::Config(
            "study needs a preset (the contrast axis regenerates it)".into(),
        ));
    };
    let c = &s.config;
    let grid = c.study.clone().expect("filled by the caller");
    let cfg = StudyConfig {
        preset: name,
        seed: c.seed,
        grid,
        c_po: if s.c_po_explicit {
            c.c_po.clone()
        } else {
            None
        },
        tolerances: s.tolerances(),
    };
    let table = run_study(&cfg)?;
    table.write_csv(&s.path("study.csv"))?;
    table.write_json(&s.path("study.json"))?;
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    s.finish(
        &["study.csv", "study.json"],
        json!({ "cells": table.rows.len(), "failed": failed, "config_hash": table.config_hash }),
    )
}
