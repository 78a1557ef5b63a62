use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hyperlatent::hypergraph::{parse_hyperlinks, Hypergraph};
use hyperlatent::simulate::{
    self, CoverageConfig, ErrorScalingConfig, SimDesign, SparsityConfig, Table,
};
use hyperlatent::{json, rng, Exec, FitConfig, FitResult, PluginCovariances, Target};
use serde::Serialize;

use crate::config::{load, EllipseConfig, InferConfig};
use crate::output::{CliError, Outputs};
use crate::{AuditArgs, Cli, Command, EllipsesArgs, FitArgs, InferArgs, InputArgs};

type Res<T> = Result<T, CliError>;

pub fn run(cli: &Cli) -> Res<()> {
    configure_threads(cli.global.threads)?;
    let g = &cli.global;
    let config = g.config.as_deref();
    let mut out = Outputs::default();
    match &cli.command {
        Command::Simulate => simulate(config, g.seed, &mut out)?,
        Command::Fit(a) => fit(a, config, g.seed, &mut out)?,
        Command::Infer(a) => infer(a, config, &mut out)?,
        Command::Ellipses(a) => ellipses(a, config, &mut out)?,
        Command::ExperimentError => {
            let mut c: ErrorScalingConfig = load(config)?;
            c.seed = g.seed.unwrap_or(c.seed);
            table(
                &mut out,
                "error_scaling.csv",
                simulate::experiment_error_scaling(&c, Exec::Parallel)?,
            )?;
        }
        Command::ExperimentCoverage => {
            let mut c: CoverageConfig = load(config)?;
            c.seed = g.seed.unwrap_or(c.seed);
            table(
                &mut out,
                "coverage.csv",
                simulate::experiment_coverage(&c, Exec::Parallel)?,
            )?;
        }
        Command::ExperimentSparsity => {
            let mut c: SparsityConfig = load(config)?;
            c.seed = g.seed.unwrap_or(c.seed);
            table(
                &mut out,
                "sparsity.csv",
                simulate::experiment_sparsity(&c, Exec::Parallel)?,
            )?;
        }
        Command::Audit(a) => return audit(a),
    }
    let written = out.commit(&g.out)?;
    if !g.quiet {
        for p in written {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn configure_threads(threads: usize) -> Res<()> {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start {threads} threads: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn read_hypergraph(a: &InputArgs) -> Res<Hypergraph> {
    let file = File::open(&a.input)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", a.input.display())))?;
    parse_hyperlinks(BufReader::new(file), a.n)
        .map_err(|e| CliError::data(format!("{}: {e}", a.input.display())))
}

fn read_fit(path: &Path) -> Res<FitResult> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Res<String> {
    Ok(json::to_string(value)?)
}

fn table(out: &mut Outputs, name: &str, t: Table) -> Res<()> {
    out.add(name, t.to_csv()?);
    Ok(())
}

fn simulate(config: Option<&Path>, seed: Option<u64>, out: &mut Outputs) -> Res<()> {
    let mut design: SimDesign = load(config)?;
    design.seed = seed.unwrap_or(design.seed);
    design.validate()?;
    let gt = simulate::gen_ground_truth(&SimDesign {
        seed: rng::child_seed(design.seed, 0),
        ..design.clone()
    })?;
    let hg = simulate::gen_hypergraph(&gt, rng::child_seed(design.seed, 1), Exec::Parallel);
    out.add("hyperlinks.txt", hg.to_text());
    out.add("truth.json", to_json(&gt)?);
    Ok(())
}

fn fit(a: &FitArgs, config: Option<&Path>, seed: Option<u64>, out: &mut Outputs) -> Res<()> {
    let mut cfg: FitConfig = load(config)?;
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.validate()?;
    let hg = read_hypergraph(&a.input)?;
    let y = hg.incidence();
    let mut result = if a.f1 {
        hyperlatent::fit_f1(&y, &cfg)?
    } else {
        hyperlatent::fit(&y, &cfg)?
    };
    result.labels = hg.labels().map(<[String]>::to_vec);
    out.add("fit.json", to_json(&result)?);
    Ok(())
}

fn parse_targets(cfg: &InferConfig, cov: &PluginCovariances) -> Res<Vec<Target>> {
    let p = cov.params();
    let (m, n, k) = (p.m(), p.n(), p.k());
    let mut targets = Vec::new();
    for family in &cfg.families {
        match family.as_str() {
            "alpha_dagger" => targets.extend((0..n).map(Target::AlphaDagger)),
            "z" => targets.extend((0..n).flat_map(|i| (0..k).map(move |c| Target::Z(i, c)))),
            "f" => targets.extend((0..m).flat_map(|j| (0..k).map(move |c| Target::F(j, c)))),
            "theta" | "p" => {
                if cfg.pairs.is_empty() {
                    return Err(CliError::config(format!("family {family} needs `pairs`")));
                }
                for &[j, i] in &cfg.pairs {
                    if j == 0 || i == 0 || j > m || i > n {
                        return Err(CliError::config(format!(
                            "pair ({j}, {i}) is outside 1..={m} x 1..={n}"
                        )));
                    }
                    targets.push(if family == "theta" {
                        Target::Theta(j - 1, i - 1)
                    } else {
                        Target::P(j - 1, i - 1)
                    });
                }
            }
            other => return Err(CliError::config(format!("unknown target family `{other}`"))),
        }
    }
    Ok(targets)
}

fn infer(a: &InferArgs, config: Option<&Path>, out: &mut Outputs) -> Res<()> {
    let cfg: InferConfig = load(config)?;
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(CliError::config(format!(
            "level must lie in (0, 1), got {}",
            cfg.level
        )));
    }
    let fit = read_fit(&a.fit)?;
    let cov = PluginCovariances::new(&fit.params, Exec::Parallel)?;
    let targets = parse_targets(&cfg, &cov)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::data(e.to_string());
    w.write_record([
        "target", "index", "estimate", "variance", "lo", "hi", "level",
    ])
    .map_err(err)?;
    for t in targets {
        let ci = cov.interval(t, cfg.level)?;
        w.write_record([
            t.family().to_string(),
            t.index_label(),
            simulate::fmt_num(ci.center),
            simulate::fmt_num(ci.variance),
            simulate::fmt_num(ci.lo),
            simulate::fmt_num(ci.hi),
            simulate::fmt_num(ci.level),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    out.add("intervals.csv", bytes);
    Ok(())
}

fn resolve_vertex(key: &str, labels: Option<&[String]>, n: usize) -> Res<usize> {
    if let Some(i) = labels.and_then(|l| l.iter().position(|x| x == key)) {
        return Ok(i);
    }
    match key.parse::<usize>() {
        Ok(i) if (1..=n).contains(&i) => Ok(i - 1),
        _ => Err(CliError::config(format!("unknown vertex `{key}`"))),
    }
}

fn ellipses(a: &EllipsesArgs, config: Option<&Path>, out: &mut Outputs) -> Res<()> {
    let mut cfg: EllipseConfig = load(config)?;
    if !a.vertices.is_empty() {
        cfg.vertices = a.vertices.clone();
    }
    let fit = read_fit(&a.fit)?;
    let n = fit.params.n();
    if fit.params.k() != 2 {
        return Err(CliError::config(format!(
            "ellipses need K = 2, the fit has K = {}",
            fit.params.k()
        )));
    }
    let labels = fit.labels.as_deref();
    let chosen: Vec<usize> = if cfg.vertices.is_empty() {
        (0..n.min(10)).collect()
    } else {
        cfg.vertices
            .iter()
            .map(|v| resolve_vertex(v, labels, n))
            .collect::<Res<_>>()?
    };
    let cov = PluginCovariances::new(&fit.params, Exec::Parallel)?;
    let name = |i: usize| labels.map_or_else(|| (i + 1).to_string(), |l| l[i].clone());

    #[derive(Serialize)]
    struct Entry {
        vertex: String,
        center: [f64; 2],
        shape: [[f64; 2]; 2],
        radius2: f64,
        level: f64,
    }
    let mut drawn = Vec::new();
    let mut entries = Vec::new();
    for i in chosen {
        let e = cov.ellipse(i, cfg.level)?;
        entries.push(Entry {
            vertex: name(i),
            center: e.center,
            shape: e.shape,
            radius2: e.radius2,
            level: e.level,
        });
        drawn.push((name(i), e));
    }
    out.add("ellipses.json", to_json(&entries)?);
    out.add(
        "ellipses.svg",
        crate::svg::render(&fit.params.z, &drawn, cfg.size),
    );
    Ok(())
}

fn audit(a: &AuditArgs) -> Res<()> {
    let hg = read_hypergraph(&a.input)?;
    let report = hg.audit()?;
    print!("{}", to_json(&report)?);
    Ok(())
}
