use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use opingraph_core::metrics::{self, adjusted_agreement_score, agreement_score, ari, nmi};
use opingraph_core::selection::{recommend_q, sweep as run_sweep};
use opingraph_core::synthetic::{recovery_experiment, sample_graph, GeneratorSpec};
use opingraph_core::{FitOptions, InferenceError, OpinionGraph};
use opingraph_service::{StoreConfig, SurveyStore};

use crate::output::{write_all, write_atomic};
use crate::{data, runtime, CompareArgs, ConvertArgs, Failure, FitArgs, GenerateArgs, RecoveryArgs, ServeArgs, SweepArgs};

type Outcome = Result<(), Failure>;

fn fit_options(args: &FitArgs) -> FitOptions {
    FitOptions {
        degree_corrected: args.dc,
        restarts: args.restarts.max(1),
        rng_seed: args.seed,
        max_em_iters: args.max_em_iters,
        typical_threshold: args.typical_threshold,
        ..FitOptions::default()
    }
}

fn load_graph(path: &Path) -> Result<OpinionGraph, Failure> {
    OpinionGraph::load(path).map_err(|e| data(anyhow!(e).context(format!("loading {}", path.display()))))
}

pub fn serve(args: ServeArgs) -> Outcome {
    let store = SurveyStore::open(
        &args.data_dir,
        StoreConfig {
            rng_seed: args.seed,
            snapshot_every: args.snapshot_every.max(1),
        },
    )
    .map_err(|e| runtime(anyhow!(e).context(format!("opening data directory {}", args.data_dir.display()))))?;
    let runtime_handle = tokio::runtime::Runtime::new().map_err(runtime)?;
    runtime_handle.block_on(async move {
        let address = format!("{}:{}", args.bind, args.port);
        let listener = tokio::net::TcpListener::bind(&address)
            .await
            .map_err(|e| runtime(anyhow!(e).context(format!("cannot listen on {address}"))))?;
        log::info!("listening on {}", listener.local_addr().map_err(runtime)?);
        opingraph_service::http::serve(listener, Arc::new(store), shutdown_signal())
            .await
            .map_err(runtime)?;
        log::info!("stopped cleanly");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}

pub fn sweep(args: SweepArgs) -> Outcome {
    let mut graph = load_graph(&args.graph)?;
    if args.neutralize {
        graph = graph.neutralize_excess(args.fit.seed);
    }
    let graph = graph.induced_analysis_graph(args.exclude_seeds);
    log::info!("{graph}");
    if args.qmin == 0 || args.qmin > args.qmax || args.qmax > graph.n() {
        return Err(data(anyhow!(
            "q range {}..={} must satisfy 1 <= qmin <= qmax <= N = {}",
            args.qmin,
            args.qmax,
            graph.n()
        )));
    }
    let result = run_sweep(&graph, args.qmin, args.qmax, &fit_options(&args.fit)).map_err(|e| match e {
        InferenceError::NoSignedEdges | InferenceError::InvalidParams(_) => data(e),
        other => runtime(other),
    })?;

    let mut files = vec![
        ("errors.tsv".to_owned(), result.error_table().into_bytes()),
        ("flows.tsv".to_owned(), result.flow_table().into_bytes()),
    ];
    for entry in &result.entries {
        let q = entry.errors.q;
        let mut labels = Vec::new();
        let rows = graph
            .vertices()
            .iter()
            .enumerate()
            .filter(|(i, _)| graph.is_reported(*i))
            .map(|(i, v)| (v.id.as_str(), entry.fit.map_labels[i]));
        metrics::write_labels(&mut labels, rows).map_err(runtime)?;
        files.push((format!("labels_q{q}.tsv"), labels));
        let export = serde_json::to_vec_pretty(&entry.fit.export(&graph)).map_err(runtime)?;
        files.push((format!("fit_q{q}.json"), export));
    }
    if result.entries.len() >= 2 {
        let rec = recommend_q(&result);
        log::info!("candidates {:?}, suggested q = {}", rec.q_candidates, rec.q_final);
        files.push(("recommendation.json".to_owned(), serde_json::to_vec_pretty(&rec).map_err(runtime)?));
    }
    write_all(&args.out, &files).map_err(runtime)?;
    print!("{}", result.error_table());
    Ok(())
}

fn read_label_file(path: &Path) -> Result<Vec<(String, String)>, Failure> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display())).map_err(data)?;
    metrics::read_labels(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
        .map_err(data)
}

/// Group names mapped to dense indices over the graph's vertex order.
fn labels_for_graph(graph: &OpinionGraph, rows: &[(String, String)]) -> Result<Vec<usize>, Failure> {
    let lookup: BTreeMap<&str, &str> = rows.iter().map(|(id, g)| (id.as_str(), g.as_str())).collect();
    let mut names: BTreeMap<&str, usize> = BTreeMap::new();
    graph
        .vertices()
        .iter()
        .map(|v| {
            let group = lookup
                .get(v.id.as_str())
                .ok_or_else(|| data(anyhow!("label file has no entry for vertex {:?}", v.id)))?;
            let next = names.len();
            Ok(*names.entry(group).or_insert(next))
        })
        .collect()
}

pub fn compare(args: CompareArgs) -> Outcome {
    let a = read_label_file(&args.a)?;
    let b = read_label_file(&args.b)?;
    let (left, right) = metrics::join_labels(&a, &b).map_err(data)?;
    println!("nmi\t{}", nmi(&left, &right).map_err(data)?);
    println!("ari\t{}", ari(&left, &right).map_err(data)?);
    if let Some(path) = &args.graph {
        let graph = load_graph(path)?;
        for (name, rows) in [("a", &a), ("b", &b)] {
            let labels = labels_for_graph(&graph, rows)?;
            let score = agreement_score(&graph, &labels).map_err(data)?;
            let adjusted = adjusted_agreement_score(&graph, &labels, args.shuffles, args.seed).map_err(data)?;
            println!("agreement_{name}\t{score}");
            println!("adjusted_agreement_{name}\t{adjusted}");
        }
    }
    Ok(())
}

pub fn convert(args: ConvertArgs) -> Outcome {
    let open = |p: &Path| {
        File::open(p)
            .map(BufReader::new)
            .with_context(|| format!("opening {}", p.display()))
            .map_err(data)
    };
    let graph = OpinionGraph::from_edge_list(args.question, open(&args.edges)?, open(&args.vertices)?).map_err(data)?;
    write_atomic(&args.out, graph.to_json().as_bytes()).map_err(runtime)?;
    println!("{graph}");
    Ok(())
}

pub fn generate(args: GenerateArgs) -> Outcome {
    if args.q == 0 || args.n == 0 {
        return Err(data(anyhow!("n and q must be positive")));
    }
    let spec = GeneratorSpec::signed_planted(args.n, args.q, args.mean_pos, args.mean_neg, args.strength, args.seed);
    let (graph, planted) = sample_graph(&spec).map_err(data)?;
    if let Some(path) = &args.labels {
        let mut bytes = Vec::new();
        let rows = graph.vertices().iter().zip(&planted).map(|(v, &g)| (v.id.as_str(), g));
        metrics::write_labels(&mut bytes, rows).map_err(runtime)?;
        write_atomic(path, &bytes).map_err(runtime)?;
    }
    write_atomic(&args.out, graph.to_json().as_bytes()).map_err(runtime)?;
    println!("{graph}");
    Ok(())
}

pub fn recovery(args: RecoveryArgs) -> Outcome {
    if args.q == 0 || args.n == 0 || args.strengths.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(data(anyhow!("need positive n and q and strengths in [0, 1]")));
    }
    let family = |s: f64, seed: u64| GeneratorSpec::signed_planted(args.n, args.q, args.mean_pos, args.mean_neg, s, seed);
    let report = recovery_experiment(family, &args.strengths, args.trials.max(1), &fit_options(&args.fit))
        .map_err(runtime)?;
    write_atomic(&args.out, report.to_tsv().as_bytes()).map_err(runtime)?;
    for (strength, mean) in report.summary() {
        println!("{strength}\t{mean:.4}");
    }
    Ok(())
}
