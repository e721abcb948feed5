use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use vinemix::dataio::{self, ColumnSpec, Dataset, Role, Schema};
use vinemix::mixture::{self, FitResult, ModelDocument, MixtureModel, Responsibilities};
use vinemix::selection::{self, KSearchReport};
use vinemix::simdindex::{self, DomainConfig};
use vinemix::vine::VineKind;
use vinemix::{ranking, Error};

use crate::config::RunConfig;
use crate::{CliError, Command};

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: Vec<String>,
    config: &'a RunConfig,
    outputs: &'a [String],
    timings: &'a BTreeMap<String, f64>,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Output directory plus the bookkeeping that ends up in `manifest.json`.
struct Run {
    out: PathBuf,
    outputs: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl Run {
    fn create(out: &Path, command: &str) -> CliResult<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut run = Run { out: out.to_path_buf(), outputs: Vec::new(), timings: BTreeMap::new() };
        run.timings.insert(command.to_string(), 0.0);
        Ok(run)
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> vinemix::Result<()>) -> CliResult<()> {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|e| Error::io(path.clone(), e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Document(e.to_string()))?;
            writeln!(w).map_err(|e| Error::io(name, e))
        })
    }

    fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let v = f();
        self.timings.insert(label.to_string(), start.elapsed().as_secs_f64());
        v
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, started: Instant, result: &CliResult<()>) -> CliResult<()> {
        self.timings.insert(command.to_string(), started.elapsed().as_secs_f64());
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().collect(),
            config: cfg,
            outputs: &self.outputs,
            timings: &self.timings,
            status: if result.is_ok() { "ok" } else { "error" },
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        let path = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Document(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub fn run(name: &str, command: &Command, cfg: RunConfig) -> CliResult<()> {
    let started = Instant::now();
    let mut run = Run::create(&cfg.out, name)?;
    let result = match command {
        Command::Preprocess => preprocess(&mut run, &cfg),
        Command::Fit => fit(&mut run, &cfg),
        Command::SelectK { stub_bic } => select_k(&mut run, &cfg, stub_bic.as_deref()),
        Command::Lovo => lovo(&mut run, &cfg),
        Command::Rank { .. } => rank(&mut run, &cfg),
        Command::Simulate { .. } => simulate(&mut run, &cfg),
        Command::SimdScore { .. } => simd_score(&mut run, &cfg),
        Command::ExportPlotData { .. } => export_plot_data(&mut run, &cfg),
    };
    run.finish(name, &cfg, started, &result)?;
    result
}

// Inputs.

fn first_header(path: &Path) -> CliResult<String> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let headers = rdr.headers().map_err(Error::from)?;
    headers
        .get(0)
        .map(|h| h.trim().to_string())
        .ok_or_else(|| CliError::Core(Error::MissingColumn("zone_id".into())))
}

fn load_input(cfg: &RunConfig) -> CliResult<Dataset> {
    let input = cfg.require_input()?;
    let schema = match &cfg.schema {
        Some(p) => Schema::from_path(p)?,
        None => Schema::first_column_zone(&first_header(input)?),
    };
    Ok(dataio::load_table(input, &schema)?)
}

fn complete(ds: Dataset) -> CliResult<Dataset> {
    ds.require_complete()?;
    Ok(ds)
}

fn load_model(cfg: &RunConfig) -> CliResult<ModelDocument> {
    let path = cfg.require_model()?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ModelDocument =
        serde_json::from_str(&text).map_err(|e| Error::Document(format!("{}: {e}", path.display())))?;
    doc.model()?;
    Ok(doc)
}

/// Restricts the dataset to the model's variables, in model order.
fn align(ds: &Dataset, doc: &ModelDocument) -> CliResult<Dataset> {
    let idx = doc.variables.iter().map(|v| ds.column_index(v)).collect::<vinemix::Result<Vec<_>>>()?;
    complete(ds.select_columns(&idx))
}

fn read_reference_ranks(path: &Path) -> CliResult<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let headers: Vec<String> = rdr.headers().map_err(Error::from)?.iter().map(|h| h.trim().to_string()).collect();
    let rank_col = headers
        .iter()
        .position(|h| h == "rank")
        .ok_or_else(|| CliError::Core(Error::MissingColumn(format!("rank (in {})", path.display()))))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(Error::from)?;
        let raw = rec.get(rank_col).unwrap_or("");
        let v: f64 = raw.trim().parse().map_err(|_| Error::NonNumeric {
            column: "rank".into(),
            row: i + 1,
            value: raw.to_string(),
        })?;
        out.push((rec.get(0).unwrap_or("").trim().to_string(), v));
    }
    Ok(out)
}

fn parse_stub(spec: &str) -> CliResult<BTreeMap<usize, f64>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (k, b) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("stub entry `{item}` is not K=BIC")))?;
            let k = k.trim().parse().map_err(|_| CliError::Usage(format!("bad K in `{item}`")))?;
            let b = b.trim().parse().map_err(|_| CliError::Usage(format!("bad BIC in `{item}`")))?;
            Ok((k, b))
        })
        .collect()
}

// Outputs shared by several commands.

fn write_fit(run: &mut Run, ds: &Dataset, config: &mixture::FitConfig, fit: &FitResult) -> CliResult<()> {
    let doc = ModelDocument::new(ds, config, fit);
    run.write_json("model.json", &doc)?;
    run.write("responsibilities.csv", |w| fit.responsibilities.write_csv(&ds.zone_ids, w))?;
    run.write("trace.csv", |w| write_trace(fit, w))?;
    run.timings.insert("ecm_iterations_seconds".into(), fit.trace.seconds.iter().sum());
    Ok(())
}

fn write_trace<W: Write>(fit: &FitResult, w: W) -> vinemix::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header = vec!["iteration".to_string(), "loglik".to_string()];
    header.extend((1..=fit.model.k()).map(|k| format!("weight_{k}")));
    w.write_record(&header)?;
    for (it, ll) in fit.trace.loglik.iter().enumerate() {
        let mut rec = vec![it.to_string(), ll.to_string()];
        if let Some(ws) = fit.trace.weights.get(it) {
            rec.extend(ws.iter().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

fn write_schema(run: &mut Run, name: &str, schema: &Schema) -> CliResult<()> {
    let text = toml::to_string(schema).map_err(|e| Error::Document(e.to_string()))?;
    run.write(name, |w| w.write_all(text.as_bytes()).map_err(|e| Error::io(name, e)))
}

// Commands.

fn preprocess(run: &mut Run, cfg: &RunConfig) -> CliResult<()> {
    let raw = load_input(cfg)?;
    let (screened, mut report) = dataio::screen_indicators(&raw, &cfg.screening)?;
    let (clean, removed) = dataio::drop_missing_rows(&screened)?;
    report.rows_removed_missing = removed;
    report.n_after = clean.n();
    print!("{report}");

    let mut columns = BTreeMap::new();
    columns.insert("zone_id".to_string(), ColumnSpec { role: Role::ZoneId, ..Default::default() });
    for j in 0..clean.d() {
        columns.insert(
            clean.names[j].clone(),
            ColumnSpec {
                role: Role::Indicator,
                domain: Some(clean.domains[j].clone()).filter(|d| !d.is_empty()),
                orientation: clean.orientation[j],
                pair_with: clean.pair_with[j].clone(),
            },
        );
    }
    let schema = Schema { sentinels: vec!["*".into()], include_unlisted: false, columns };

    run.write("cleaned.csv", |w| dataio::write_table(&clean, w))?;
    write_schema(run, "cleaned_schema.toml", &schema)?;
    run.write_json("preprocess_report.json", &report)
}

fn fit(run: &mut Run, cfg: &RunConfig) -> CliResult<()> {
    let ds = complete(load_input(cfg)?)?;
    let res = run.time("fit", || mixture::fit(&ds, &cfg.fit))?;
    println!(
        "K = {}: loglik {:.4}, BIC {:.4}, {} iterations{}",
        cfg.fit.k,
        res.loglik,
        res.bic,
        res.trace.iterations(),
        if res.trace.converged { "" } else { " (not converged)" }
    );
    write_fit(run, &ds, &cfg.fit, &res)
}

fn select_k(run: &mut Run, cfg: &RunConfig, stub: Option<&str>) -> CliResult<()> {
    if cfg.candidates.is_empty() {
        return Err(CliError::Usage("no candidate values of K".into()));
    }
    let report: KSearchReport = match stub {
        Some(spec) => {
            let table = parse_stub(spec)?;
            let oracle = |k: usize, _: VineKind, _| {
                table.get(&k).copied().ok_or_else(|| Error::FitFailed {
                    context: format!("K = {k}"),
                    reason: "no stubbed BIC".into(),
                })
            };
            selection::search_k_with(&oracle, &cfg.candidates, &cfg.vines, &cfg.inits)?
        }
        None => {
            let ds = complete(load_input(cfg)?)?;
            let (fit, config, report) =
                run.time("search", || selection::search_k(&ds, &cfg.fit, &cfg.candidates, &cfg.vines, &cfg.inits))?;
            write_fit(run, &ds, &config, &fit)?;
            report
        }
    };
    let c = &report.chosen;
    println!("chosen K = {} ({}, {}), BIC {:.4}", c.k, c.vine_kind, c.init, c.bic);
    run.write("ksearch.csv", |w| report.write_csv(w))?;
    run.write_json("ksearch.json", &report)
}

fn lovo(run: &mut Run, cfg: &RunConfig) -> CliResult<()> {
    let ds = complete(load_input(cfg)?)?;
    let report = run.time("lovo", || match &cfg.model {
        Some(_) => {
            let doc = load_model(cfg)?;
            let ds = align(&ds, &doc)?;
            let mut config = doc.config.clone();
            config.seed = cfg.seed;
            let full = doc.model()?.bic(&ds)?;
            selection::lovo_with_full(&ds, &config, full).map_err(CliError::from)
        }
        None => selection::lovo(&ds, &cfg.fit).map_err(CliError::from),
    })?;
    print!("{report}");
    run.write("lovo.csv", |w| report.write_csv(w))?;
    run.write_json("lovo.json", &report)
}

struct Posterior {
    ds: Dataset,
    r: Responsibilities,
    deprived: ranking::DeprivedClusterScore,
}

fn posterior(cfg: &RunConfig) -> CliResult<Posterior> {
    let doc = load_model(cfg)?;
    let ds = align(&load_input(cfg)?, &doc)?;
    let model: MixtureModel = doc.model()?;
    let r = model.e_step(&ds)?;
    let deprived = ranking::most_deprived_cluster(&r, &ds)?;
    Ok(Posterior { ds, r, deprived })
}

fn rank(run: &mut Run, cfg: &RunConfig) -> CliResult<()> {
    let p = posterior(cfg)?;
    let ranked = ranking::rank_zones(&p.r, p.deprived.k_star, &p.ds.zone_ids, cfg.tie_tolerance)?;
    println!(
        "most deprived cluster: {} of {}; {} zones share a rank",
        p.deprived.k_star + 1,
        p.r.k(),
        ranked.shared_rank_count()
    );
    run.write("ranking.csv", |w| ranked.write_csv(w))?;
    run.write_json("deprived_cluster.json", &p.deprived)?;
    if let Some(path) = &cfg.compare {
        let ours: Vec<(String, f64)> = ranked.zones.iter().map(|z| (z.zone_id.clone(), z.rank as f64)).collect();
        let cmp = ranking::compare_rankings(&ours, &read_reference_ranks(path)?)?;
        println!("spearman {:.6}, kendall {:.6}", cmp.spearman, cmp.kendall);
        run.write_json("comparison.json", &serde_json::json!({ "spearman": cmp.spearman, "kendall": cmp.kendall, "zones": cmp.pairs.len() }))?;
        run.write("rank_comparison.csv", |w| cmp.write_long_csv(["model", "reference"], w))?;
    }
    Ok(())
}

fn simulate(run: &mut Run, cfg: &RunConfig) -> CliResult<()> {
    let (model, names) = match &cfg.model {
        Some(_) => {
            let doc = load_model(cfg)?;
            (doc.model()?, doc.variables.clone())
        }
        None => {
            let m = mixture::example_model();
            let names = (1..=m.dimension()).map(|j| format!("x{j}")).collect();
            (m, names)
        }
    };
    let counts = if !cfg.counts.is_empty() {
        cfg.counts.clone()
    } else if cfg.model.is_none() {
        mixture::EXAMPLE_COUNTS.to_vec()
    } else {
        return Err(CliError::Usage("--counts is required when simulating from a fitted model".into()));
    };
    if counts.len() != model.k() {
        return Err(CliError::Usage(format!("{} counts for a {}-component model", counts.len(), model.k())));
    }
    let (columns, labels) = run.time("simulate", || model.simulate(&counts, cfg.seed))?;
    let width = labels.len().to_string().len();
    run.write("simulated.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["zone_id".to_string()];
        header.extend(names.iter().cloned());
        header.push("component".into());
        w.write_record(&header)?;
        for (i, label) in labels.iter().enumerate() {
            let mut rec = vec![format!("Z{:0width$}", i + 1)];
            rec.extend(columns.iter().map(|c| c[i].to_string()));
            rec.push((label + 1).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("simulated.csv", e))
    })?;
    let mut columns = BTreeMap::new();
    columns.insert("zone_id".to_string(), ColumnSpec { role: Role::ZoneId, ..Default::default() });
    columns.insert("component".to_string(), ColumnSpec { role: Role::Ignore, ..Default::default() });
    let schema = Schema { sentinels: vec!["*".into()], include_unlisted: true, columns };
    write_schema(run, "simulated_schema.toml", &schema)?;
    println!("simulated {} zones from {} components", labels.len(), model.k());
    Ok(())
}

fn simd_score(run: &mut Run, cfg: &RunConfig) -> CliResult<()> {
    let path = cfg.domains.as_deref().ok_or_else(|| CliError::Usage("a domain definition is required (--domains)".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let domains: DomainConfig = text.parse()?;
    let table = load_input(cfg)?;
    let results = simdindex::score_domains(&table, &domains)?;
    run.write("domain_scores.csv", |w| simdindex::write_domain_csv(&table.zone_ids, &results, w))?;
    println!("scored {} domains over {} zones", results.len(), table.n());
    Ok(())
}

fn export_plot_data(run: &mut Run, cfg: &RunConfig) -> CliResult<()> {
    let p = posterior(cfg)?;
    let labels = p.r.classify();
    run.write("plot_histogram.csv", |w| ranking::write_cluster_profiles(&p.ds, &labels, &p.ds.columns, w))?;
    let scaled = ranking::deprivation_scaled(&p.ds)?;
    run.write("plot_boxplot.csv", |w| ranking::write_cluster_profiles(&p.ds, &labels, &scaled, w))?;

    let ranked = ranking::rank_zones(&p.r, p.deprived.k_star, &p.ds.zone_ids, cfg.tie_tolerance)?;
    let mut order: Vec<&ranking::RankedZone> = ranked.zones.iter().collect();
    order.sort_by(|a, b| a.rank.cmp(&b.rank).then(a.zone_id.cmp(&b.zone_id)));
    run.write("plot_posterior_curve.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["position", "zone_id", "rank", "posterior"])?;
        for (pos, z) in order.iter().enumerate() {
            w.write_record([(pos + 1).to_string(), z.zone_id.clone(), z.rank.to_string(), z.posterior.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("plot_posterior_curve.csv", e))
    })?;

    if let Some(path) = &cfg.compare {
        let ours: Vec<(String, f64)> = ranked.zones.iter().map(|z| (z.zone_id.clone(), z.rank as f64)).collect();
        let cmp = ranking::compare_rankings(&ours, &read_reference_ranks(path)?)?;
        run.write("plot_rank_scatter.csv", |w| {
            let mut w = csv::Writer::from_writer(w);
            w.write_record(["zone_id", "model_rank", "reference_rank"])?;
            for (id, a, b) in &cmp.pairs {
                w.write_record([id.clone(), a.to_string(), b.to_string()])?;
            }
            w.flush().map_err(|e| Error::io("plot_rank_scatter.csv", e))
        })?;
    }
    if let Some(path) = &cfg.ksearch {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.clone(), e))?;
        let report: KSearchReport =
            serde_json::from_str(&text).map_err(|e| Error::Document(format!("{}: {e}", path.display())))?;
        run.write("plot_bic.csv", |w| {
            let mut w = csv::Writer::from_writer(w);
            w.write_record(["vine", "init", "k", "bic"])?;
            let mut rows: Vec<_> = report.evaluated.iter().filter(|e| e.bic.is_some()).collect();
            rows.sort_by(|a, b| {
                (a.vine_kind.to_string(), a.init.to_string(), a.k).cmp(&(b.vine_kind.to_string(), b.init.to_string(), b.k))
            });
            for e in rows {
                w.write_record([e.vine_kind.to_string(), e.init.to_string(), e.k.to_string(), e.bic.unwrap().to_string()])?;
            }
            w.flush().map_err(|e| Error::io("plot_bic.csv", e))
        })?;
    }
    println!("wrote {} plot tables", run.outputs.len());
    Ok(())
}
