//! Subcommand bodies. Reports go to stdout unless stdout carries CSV.

use std::io::{self, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use elastonet::dynsynth::probe_frequencies;
use elastonet::linalg::rank;
use elastonet::reduce::{dynamic_response_at_with, extract_modal_with, floppy_modes_with};
use elastonet::robust::mode_displacements;
use elastonet::{
    eliminate_floppy, resonances, stability_experiment, synth_dynamic, synth_static, validate_modal,
    validate_static, Error, ModalResponse, Network, Perturbation, PlacementPolicy, SynthesisReport,
    Tolerances,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::files::{read_network, read_response, write_canonical, write_network, Response, ResponseFile};

fn describe(net: &Network<f64>) -> String {
    let massive = net.nodes().iter().filter(|n| n.mass > 0.0).count();
    format!(
        "dimension {}, {} terminals, {} interior nodes, {} springs, {} massive nodes",
        net.dimension(),
        net.terminals().len(),
        net.interior().len(),
        net.springs().len(),
        massive
    )
}

fn policy(eps: f64, seed: u64) -> PlacementPolicy<f64> {
    PlacementPolicy {
        eps_hull: eps,
        min_separation: (eps / 10.0).min(1e-3),
        ..PlacementPolicy::with_seed(seed)
    }
}

fn csv_row(omega: f64, w: Option<&DMatrix<f64>>, n: usize) -> Vec<String> {
    let mut row = Vec::with_capacity(n * n + 1);
    row.push(omega.to_string());
    for i in 0..n {
        for j in 0..n {
            row.push(w.map_or(f64::NAN, |w| w[(i, j)]).to_string());
        }
    }
    row
}

pub fn analyze(
    path: &Path,
    omegas: &[f64],
    csv_path: Option<&Path>,
    export: Option<&Path>,
    tol: &Tolerances,
) -> Result<()> {
    let net = read_network(path)?;
    let csv_on_stdout = !omegas.is_empty() && csv_path.is_none();
    let mut report: Box<dyn Write> = if csv_on_stdout {
        Box::new(io::stderr())
    } else {
        Box::new(io::stdout())
    };
    let modal = extract_modal_with(&net, tol)?;
    let floppy = floppy_modes_with(&net, tol)?;
    writeln!(report, "network: {}", describe(&net))?;
    writeln!(report, "floppy modes: {}", floppy.len())?;
    if modal.terms.is_empty() {
        writeln!(report, "resonances: none")?;
    } else {
        writeln!(report, "resonances: {}", modal.terms.len())?;
        for (k, t) in modal.terms.iter().enumerate() {
            writeln!(
                report,
                "  {k}: omega^2 = {:.10e}  omega = {:.10e}  residue rank {}",
                t.omega_sq,
                t.omega_sq.sqrt(),
                rank(&t.residue, tol.rank)
            )?;
        }
    }
    let masses: Vec<String> = modal.masses.iter().map(|m| m.to_string()).collect();
    writeln!(report, "terminal masses: [{}]", masses.join(", "))?;
    writeln!(report, "static part rank: {}", rank(&modal.static_part(), tol.rank))?;

    if let Some(out) = export {
        let file = if modal.terms.is_empty() && modal.masses.iter().all(|m| *m == 0.0) {
            let resp = elastonet::StaticResponse::new(modal.terminal_positions.clone(), modal.a.clone())?;
            ResponseFile::from_static(&resp)
        } else {
            ResponseFile::from_modal(&modal)
        };
        write_canonical(out, &file)?;
        writeln!(report, "spec written to {}", out.display())?;
    }

    if omegas.is_empty() {
        return Ok(());
    }
    let n = net.terminals().len() * net.dimension();
    let sink: Box<dyn Write> = match csv_path {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("cannot write {}", p.display()))?),
        None => Box::new(io::stdout()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    let mut header = vec!["omega".to_string()];
    for i in 1..=n {
        for j in 1..=n {
            header.push(format!("w_{i}_{j}"));
        }
    }
    csv.write_record(&header)?;
    for &omega in omegas {
        match dynamic_response_at_with(&net, omega, tol) {
            Ok(w) => csv.write_record(csv_row(omega, Some(&w), n))?,
            Err(Error::ResonanceProximity { resonance, .. }) => {
                eprintln!("warning: omega = {omega} is at the resonance omega^2 = {resonance:e}; row written as NaN");
                csv.write_record(csv_row(omega, None, n))?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    csv.flush()?;
    if let Some(p) = csv_path {
        writeln!(report, "{} rows written to {}", omegas.len(), p.display())?;
    }
    Ok(())
}

pub fn validate(path: &Path, tol: &Tolerances) -> Result<()> {
    let resp = read_response(path)?;
    let (passed, text) = match &resp {
        Response::Static(r) => {
            let rep = validate_static(r, tol);
            (rep.passed(), format!("static response, {} terminals\n{rep}", r.terminal_positions.len()))
        }
        Response::Modal(r) => {
            let rep = validate_modal(r, tol);
            let head = format!("modal response, {} terminals, {} resonant terms", r.terminal_positions.len(), r.terms.len());
            (rep.passed(), format!("{head}\n{rep}"))
        }
    };
    print!("{text}");
    if passed {
        println!("realizable");
        Ok(())
    } else {
        bail!("{} is not realizable", path.display())
    }
}

fn failures(resp: &Response, tol: &Tolerances) -> Vec<String> {
    match resp {
        Response::Static(r) => validate_static(r, tol).failures().iter().map(|c| c.to_string()).collect(),
        Response::Modal(r) => validate_modal(r, tol).failures().iter().map(|c| c.to_string()).collect(),
    }
}

fn with_seed_advice(e: Error, seed: u64) -> anyhow::Error {
    match e {
        Error::RetryExhausted { .. } | Error::NoBalancingPoint(_) | Error::DegeneratePlacement(_) => anyhow!(
            "{e}\nplacement is randomized; try another seed (--seed or ELASTONET_SEED, current {seed}) or a larger --eps"
        ),
        e => e.into(),
    }
}

fn print_synthesis(rep: &SynthesisReport<f64>, eps: f64, seed: u64) {
    let net = &rep.network;
    println!("round-trip error: {:.3e}", rep.roundtrip_error);
    println!(
        "nodes: {} ({} terminals, {} interior)",
        net.nodes().len(),
        net.terminals().len(),
        net.interior().len()
    );
    println!("springs: {}", net.springs().len());
    println!("crossings: {}", rep.crossings);
    println!("placement eps: {eps}");
    println!("seed: {seed}");
}

pub fn synthesize(path: &Path, eps: f64, seed: u64, out: &Path, tol: &Tolerances) -> Result<()> {
    let resp = read_response(path)?;
    if resp.dimension() != 2 {
        return Err(Error::NotSupported(format!(
            "synthesis is implemented for planar networks only; {} has dimension {}",
            path.display(),
            resp.dimension()
        ))
        .into());
    }
    let bad = failures(&resp, tol);
    if !bad.is_empty() {
        return Err(Error::ValidationFailed(format!("{} is not realizable:\n{}", path.display(), bad.join("\n"))).into());
    }
    let policy = policy(eps, seed);
    let rep = match &resp {
        Response::Static(r) => synth_static(r, &policy),
        Response::Modal(r) => synth_dynamic(r, &policy),
    }
    .map_err(|e| with_seed_advice(e, seed))?;
    write_network(out, &rep.network)?;
    print_synthesis(&rep, eps, seed);
    println!("network written to {}", out.display());
    Ok(())
}

/// Largest relative deviation between two networks' responses over `W(0)`
/// and probe frequencies of `modal`, the first network's modal form.
fn response_gap(a: &Network<f64>, b: &Network<f64>, modal: &ModalResponse<f64>, tol: &Tolerances) -> Result<(f64, usize)> {
    let res: Vec<f64> = modal.terms.iter().map(|t| t.omega_sq).collect();
    let mut grid = vec![0.0];
    grid.extend(probe_frequencies(&res, 20));
    let mut worst = 0.0f64;
    for &omega in &grid {
        let wa = dynamic_response_at_with(a, omega, tol)?;
        let wb = dynamic_response_at_with(b, omega, tol)?;
        // W(0) may cancel to roundoff; judge it on the scale of its terms.
        let floor = if omega == 0.0 { modal.reference_scale() } else { 0.0 };
        let scale = wa.norm().max(floor);
        let diff = (wb - &wa).norm();
        worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
    }
    Ok((worst, grid.len()))
}

pub fn roundtrip(path: &Path, eps: f64, seed: u64, out: Option<&Path>, tol: &Tolerances) -> Result<()> {
    let net = read_network(path)?;
    println!("network: {}", describe(&net));
    let modal = extract_modal_with(&net, tol)?;
    println!("resonances: {}", modal.terms.len());
    let rep = validate_modal(&modal, tol);
    println!("modal form realizable: {}", if rep.passed() { "yes" } else { "no" });
    if net.dimension() != 2 {
        println!(
            "notice: synthesis is implemented for planar networks only; dimension {} is analysis only, synthesis skipped",
            net.dimension()
        );
        return Ok(());
    }
    let synth = synth_dynamic(&modal, &policy(eps, seed)).map_err(|e| with_seed_advice(e, seed))?;
    let (err, count) = response_gap(&net, &synth.network, &modal, tol)?;
    println!(
        "synthesized: {} nodes, {} springs, {} crossings",
        synth.network.nodes().len(),
        synth.network.springs().len(),
        synth.crossings
    );
    println!("max relative error over {count} frequencies: {err:.3e}");
    if let Some(p) = out {
        write_network(p, &synth.network)?;
        println!("network written to {}", p.display());
    }
    Ok(())
}

pub fn floppy(path: &Path, fix: Option<f64>, seed: u64, out: Option<&Path>, tol: &Tolerances) -> Result<()> {
    let net = read_network(path)?;
    let modes = floppy_modes_with(&net, tol)?;
    let d = net.dimension();
    if modes.is_empty() {
        println!("no floppy modes");
    } else {
        println!("{} floppy modes (cutoff {:e})", modes.len(), modes.tolerance);
        for k in 0..modes.len() {
            println!("mode {k}:");
            for (i, v) in modes.interior.iter().zip(mode_displacements(&modes, k, d)) {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:+.6}")).collect();
                println!("  {}: [{}]", net.nodes()[*i].label, parts.join(", "));
            }
        }
    }
    let Some(eps_k) = fix else {
        return Ok(());
    };
    if !(eps_k > 0.0 && eps_k.is_finite()) {
        return Err(crate::files::InputError(format!("--fix must be positive, got {eps_k}")).into());
    }
    let rep = eliminate_floppy(&net, eps_k, &PlacementPolicy::with_seed(seed))?;
    println!("added {} springs of stiffness {eps_k:e}", rep.added_springs);
    if !rep.anchor_nodes.is_empty() {
        println!("anchors: {}", rep.anchor_nodes.join(", "));
    }
    println!(
        "response drift: {:.3e} over {} probe frequencies",
        rep.residual_drift,
        rep.probe_omegas.len()
    );
    println!("remaining floppy modes: {}", rep.remaining_modes.len());
    if let Some(p) = out {
        write_network(p, &rep.fixed_network)?;
        println!("network written to {}", p.display());
    }
    if !rep.fixed() {
        bail!("{} floppy modes remain; try a larger --fix", rep.remaining_modes.len());
    }
    Ok(())
}

pub fn perturb(path: &Path, eps: &[f64], added: usize, seed: u64) -> Result<()> {
    let net = read_network(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pert = Perturbation::random(&mut rng, &net, added, 1.0);
    let res = resonances(&net)?;
    let mut omegas = vec![0.0];
    omegas.extend(probe_frequencies(&res, 8));
    let rep = stability_experiment(&net, &pert, eps, &omegas)?;
    println!(
        "perturbation: {} rescaled springs, {} added springs, {} frequencies",
        pert.scaled.len(),
        pert.added.len(),
        omegas.len()
    );
    println!("{:>12}  {:>12}", "epsilon", "drift");
    for (e, d) in rep.epsilons.iter().zip(&rep.drifts) {
        println!("{e:>12.3e}  {d:>12.3e}");
    }
    match rep.slope {
        Some(s) => println!("log-log slope: {s:.3}"),
        None => println!("log-log slope: undefined (need two positive drifts)"),
    }
    Ok(())
}
