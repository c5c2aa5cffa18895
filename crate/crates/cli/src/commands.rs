use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use rankone::analysis::{
    correlation_matrices, default_lemma_windows, fit_weak_limit, mixing_decay_profile, scan_lemma_times, CorrelationOptions,
    Dictionary, TestBasis, Term, DEFAULT_QUADRATURE_DIVISIONS,
};
use rankone::spectral::{autocorrelation, convolution_density, multiplicity_probe, overlap_statistic, spectral_density, Window};
use rankone::{Error, Stages};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{Artifacts, Plot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Build,
    Correlate,
    Weaklimit,
    Lemma,
    Spectrum,
    Multiplicity,
    Decay,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Build => "build",
            Command::Correlate => "correlate",
            Command::Weaklimit => "weaklimit",
            Command::Lemma => "lemma",
            Command::Spectrum => "spectrum",
            Command::Multiplicity => "multiplicity",
            Command::Decay => "decay",
        }
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    stages: Stages,
    opts: CorrelationOptions<f64>,
    plot: bool,
}

impl Ctx<'_> {
    fn basis(&self) -> Result<TestBasis<f64>> {
        Ok(self.cfg.basis(&self.stages)?)
    }
}

/// Runs one command and writes its artifacts; returns the manifest path and
/// whether the results are partial.
pub fn run(cfg: &RunConfig, command: Command, plot: bool) -> Result<(std::path::PathBuf, bool)> {
    let config_json = serde_json::to_value(cfg)?;
    let hash = crate::output::sha256_hex(serde_json::to_string(&config_json)?.as_bytes());
    let header = json!({
        "tool": "rankone",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "config_hash": hash,
        "seed": cfg.seed,
        "config": config_json,
    });
    let mut out = Artifacts::new(cfg.out.join(command.name()), header);
    let stages = cfg.stages().context("building stages")?;
    let ctx = Ctx { cfg, stages, opts: CorrelationOptions { escape_tol: cfg.escape_tol }, plot };
    match command {
        Command::Build => build(&ctx, &mut out)?,
        Command::Correlate => correlate(&ctx, &mut out)?,
        Command::Weaklimit => weaklimit(&ctx, &mut out)?,
        Command::Lemma => lemma(&ctx, &mut out)?,
        Command::Spectrum => spectrum(&ctx, &mut out)?,
        Command::Multiplicity => multiplicity(&ctx, &mut out)?,
        Command::Decay => decay(&ctx, &mut out)?,
    }
    let partial = out.is_partial();
    Ok((out.finish()?, partial))
}

fn build(ctx: &Ctx, out: &mut Artifacts) -> Result<()> {
    let mut table = Vec::new();
    ctx.stages.write_table(&mut table)?;
    out.csv("stages.csv", std::str::from_utf8(&table)?)?;
    if ctx.plot {
        let pts = ctx.stages.stages().iter().map(|s| (s.index as f64, s.height.log10())).collect();
        out.svg(
            "stages.svg",
            &Plot { title: "tower heights".into(), x_label: "j".into(), y_label: "log10 h_j".into(), series: vec![("h_j".into(), pts)] },
        )?;
    }
    Ok(())
}

fn correlate(ctx: &Ctx, out: &mut Artifacts) -> Result<()> {
    let basis = ctx.basis()?;
    let times = RunConfig::times(&ctx.cfg.correlate);
    let mut csv = String::from("t,t_value,a,b,value,stage_used,tail_bound\n");
    for (t, m) in times.iter().zip(correlation_matrices(&ctx.stages, &basis, &times, ctx.opts)) {
        match m {
            Ok(m) => {
                for a in 0..basis.len() {
                    for b in 0..basis.len() {
                        writeln!(csv, "{t},{:?},{a},{b},{:?},{},{:?}", t.value(&ctx.stages), m.values[(a, b)], m.stage_used, m.tail_bound)?;
                    }
                }
            }
            Err(e @ Error::DepthExhausted { .. }) => out.flag_partial(format!("t = {t}: {e}")),
            Err(e) => return Err(e.into()),
        }
    }
    out.csv("correlations.csv", &csv)
}

fn weaklimit(ctx: &Ctx, out: &mut Artifacts) -> Result<()> {
    let basis = ctx.basis()?;
    let spec = &ctx.cfg.weaklimit;
    let mut dict = Dictionary::new(&ctx.stages, &basis, ctx.opts)?;
    let mut terms = vec![Term::Theta, Term::Id];
    if let Some(a) = spec.average {
        dict = dict.with_average(&ctx.stages, &basis, a, DEFAULT_QUADRATURE_DIVISIONS, ctx.opts)?;
        terms.push(Term::Avg);
    }
    let times = RunConfig::times(&spec.times);
    let mut csv = String::from("t,t_value,alpha,beta,gamma,residual,stage_used,tail_bound\n");
    let mut pts = Vec::new();
    for (t, m) in times.iter().zip(correlation_matrices(&ctx.stages, &basis, &times, ctx.opts)) {
        match m {
            Ok(m) => {
                let f = fit_weak_limit(*t, &m.values, &dict, &terms)?;
                writeln!(csv, "{t},{:?},{:?},{:?},{:?},{:?},{},{:?}", t.value(&ctx.stages), f.alpha, f.beta, f.gamma, f.residual, m.stage_used, m.tail_bound)?;
                pts.push((pts.len() as f64, ((f.alpha - 0.5).powi(2) + (f.beta - 0.5).powi(2)).sqrt()));
            }
            Err(e @ Error::DepthExhausted { .. }) => out.flag_partial(format!("t = {t}: {e}")),
            Err(e) => return Err(e.into()),
        }
    }
    out.csv("weaklimit.csv", &csv)?;
    if ctx.plot {
        out.svg(
            "weaklimit.svg",
            &Plot {
                title: "distance of (alpha, beta) to (1/2, 1/2)".into(),
                x_label: "time index".into(),
                y_label: "distance".into(),
                series: vec![("distance".into(), pts)],
            },
        )?;
    }
    Ok(())
}

fn lemma(ctx: &Ctx, out: &mut Artifacts) -> Result<()> {
    let basis = ctx.basis()?;
    let spec = &ctx.cfg.lemma;
    let dict = Dictionary::new(&ctx.stages, &basis, ctx.opts)?.with_average(&ctx.stages, &basis, spec.a, DEFAULT_QUADRATURE_DIVISIONS, ctx.opts)?;
    let windows = default_lemma_windows(spec.stage, spec.a, spec.eps);
    let scan = scan_lemma_times(&ctx.stages, &basis, &dict, &windows, spec.step, ctx.opts)?;
    let mut points = scan.points.clone();
    points.sort_by(|x, y| {
        let (a, b) = (x.identity.t.value(&ctx.stages), y.identity.t.value(&ctx.stages));
        a.partial_cmp(&b).expect("finite times")
    });
    let mut csv = String::from("t,t_value,alpha_id,beta_id,residual_id,alpha_avg,gamma_avg,residual_avg\n");
    for p in &points {
        let (i, a) = (&p.identity, &p.average);
        writeln!(csv, "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}", i.t, i.t.value(&ctx.stages), i.alpha, i.beta, i.residual, a.alpha, a.gamma, a.residual)?;
    }
    if !scan.exhausted.is_empty() {
        out.flag_partial(format!("{} scan times exhausted the stages", scan.exhausted.len()));
    }
    out.csv("lemma.csv", &csv)?;
    out.json(
        "lemma.json",
        &json!({
            "a": spec.a,
            "stage": spec.stage,
            "step": spec.step,
            "windows": windows,
            "sampled": points.len(),
            "exhausted": scan.exhausted.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
            "best_identity": scan.best_identity(),
            "best_average": scan.best_average(),
            "improvement": scan.improvement(),
        }),
    )?;
    if ctx.plot {
        let series = |f: fn(&rankone::analysis::LemmaPoint<f64>) -> f64| -> Vec<(f64, f64)> {
            points.iter().map(|p| (p.identity.t.value(&ctx.stages), f(p))).collect()
        };
        out.svg(
            "lemma.svg",
            &Plot {
                title: format!("fit residuals, a = {}", spec.a),
                x_label: "t".into(),
                y_label: "relative residual".into(),
                series: vec![("{Theta, I}".into(), series(|p| p.identity.residual)), ("{Theta, Avg}".into(), series(|p| p.average.residual))],
            },
        )?;
    }
    Ok(())
}

fn spectrum(ctx: &Ctx, out: &mut Artifacts) -> Result<()> {
    let basis = ctx.basis()?;
    let spec = &ctx.cfg.spectrum;
    let coeffs = match &spec.coeffs {
        Some(c) if c.len() != basis.len() => bail!(Error::Config {
            line: None,
            field: "spectrum.coeffs".into(),
            message: format!("{} coefficients for {} basis sets", c.len(), basis.len()),
        }),
        Some(c) => c.clone(),
        None => (0..basis.len()).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect(),
    };
    let window: Window = spec.window.parse()?;
    let r = autocorrelation(&ctx.stages, &basis, &coeffs, spec.dt, spec.samples, ctx.opts)
        .context("sampling the autocorrelation (raise construction.max_stage or shorten the grid)")?;
    let sigma = spectral_density(&r, window)?;
    let conv = convolution_density(&r, window)?;
    let overlap = overlap_statistic(&sigma, &conv)?;
    let mut csv = String::from("t,r\n");
    for (k, v) in r.values.iter().enumerate() {
        writeln!(csv, "{:?},{v:?}", k as f64 * r.dt)?;
    }
    out.csv("autocorrelation.csv", &csv)?;
    let mut csv = String::from("freq,density,convolution_density\n");
    for ((f, d), c) in sigma.freqs.iter().zip(&sigma.density).zip(&conv.density) {
        writeln!(csv, "{f:?},{d:?},{c:?}")?;
    }
    out.csv("density.csv", &csv)?;
    out.json(
        "spectrum.json",
        &json!({
            "window": window.name(),
            "window_len": sigma.window_len,
            "bin_width": sigma.bin_width(),
            "peak": sigma.peak(),
            "integral": sigma.integral(),
            "clipped_mass": sigma.clipped_mass,
            "convolution_peak": conv.peak(),
            "convolution_clipped_mass": conv.clipped_mass,
            "overlap": overlap,
        }),
    )?;
    if ctx.plot {
        let pts = |d: &[f64]| sigma.freqs.iter().copied().zip(d.iter().copied()).collect();
        out.svg(
            "density.svg",
            &Plot {
                title: "spectral density estimates".into(),
                x_label: "frequency".into(),
                y_label: "density".into(),
                series: vec![("sigma".into(), pts(&sigma.density)), ("sigma * sigma".into(), pts(&conv.density))],
            },
        )?;
    }
    Ok(())
}

fn multiplicity(ctx: &Ctx, out: &mut Artifacts) -> Result<()> {
    let basis = ctx.basis()?;
    let spec = &ctx.cfg.multiplicity;
    let times = RunConfig::times(&spec.times);
    let report = multiplicity_probe(&ctx.stages, &basis, &times, ctx.cfg.seed, spec.tol, ctx.opts)?;
    let mut csv = String::from("mode,word_len,rank,dimension\n");
    for p in [&report.sym, &report.full] {
        let mode = format!("{:?}", p.mode).to_lowercase();
        for (k, r) in p.growth.iter().enumerate() {
            writeln!(csv, "{mode},{k},{r},{}", p.dimension)?;
        }
    }
    if report.inconclusive {
        out.note("word-length budget ran out before a span closed");
    }
    out.csv("multiplicity.csv", &csv)?;
    out.json(
        "multiplicity.json",
        &json!({
            "report": report,
            "note": "finite-basis numerical diagnostic; it does not establish any spectral property",
        }),
    )?;
    if ctx.plot {
        let curve = |p: &rankone::spectral::CyclicProbe| p.growth.iter().enumerate().map(|(k, r)| (k as f64, *r as f64 / p.dimension as f64)).collect();
        out.svg(
            "multiplicity.svg",
            &Plot {
                title: "cyclic rank growth".into(),
                x_label: "word length".into(),
                y_label: "rank / dimension".into(),
                series: vec![("sym".into(), curve(&report.sym)), ("full".into(), curve(&report.full))],
            },
        )?;
    }
    Ok(())
}

fn decay(ctx: &Ctx, out: &mut Artifacts) -> Result<()> {
    let basis = ctx.basis()?;
    let times = RunConfig::times(&ctx.cfg.decay);
    let profile = mixing_decay_profile(&ctx.stages, &basis, &times, ctx.opts)?;
    let mut csv = String::from("t,t_value,deviation,tail_bound,stage_used\n");
    let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    let mut missing = 0;
    for p in &profile {
        missing += usize::from(p.deviation.is_none());
        writeln!(
            csv,
            "{},{:?},{},{},{}",
            p.t,
            p.t.value(&ctx.stages),
            opt(p.deviation),
            opt(p.tail_bound),
            p.stage_used.map(|s| s.to_string()).unwrap_or_default()
        )?;
    }
    if missing > 0 {
        out.flag_partial(format!("{missing} of {} times exhausted the stages", profile.len()));
    }
    out.csv("decay.csv", &csv)?;
    if ctx.plot {
        let pts = profile.iter().enumerate().map(|(k, p)| (k as f64, p.deviation.unwrap_or(f64::NAN))).collect();
        out.svg(
            "decay.svg",
            &Plot { title: "mixing deviation".into(), x_label: "time index".into(), y_label: "max deviation".into(), series: vec![("deviation".into(), pts)] },
        )?;
    }
    Ok(())
}
