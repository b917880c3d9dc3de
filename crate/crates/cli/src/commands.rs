use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use mechkb_core::embed::{FallbackEmbedder, DEFAULT_FALLBACK_DIM};
use mechkb_core::eval::{read_agreement_csv, read_label_csv, AgreementReport, RankingReport};
use mechkb_core::index::{build_index, load_index, search_threshold, write_index_dir, BuildOptions};
use mechkb_core::ingest::{open_input, read_relations, Ingestor};
use mechkb_core::normalize::NormalizationConfig;
use mechkb_core::schema::RelationQuery;
use mechkb_core::Index;
use mechkb_remote::{RemoteConfig, RemoteEmbedder};
use mechkb_service::{ResultRow, ServiceState, SharedProvider};
use tracing::{info, warn};

use crate::output::{write_json, write_results};
use crate::{
    BuildArgs, CliError, Command, EvalArgs, EvalMode, Format, IngestArgs, ProviderArgs,
    ProviderKind, SearchArgs, ServeArgs, ENDPOINT_ENV,
};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest(args) => ingest(args),
        Command::BuildIndex(args) => build(args),
        Command::Search(args) => search(args),
        Command::Eval(args) => eval(args),
        Command::Serve(args) => serve(args),
    }
}

fn stdout_error(e: io::Error) -> CliError {
    CliError::usage(format!("writing to stdout: {e}"))
}

/// Sibling temporary path renamed over the target once complete.
fn temp_path(target: &Path) -> PathBuf {
    let name = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    target.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

fn endpoint(args: &ProviderArgs) -> Result<String, CliError> {
    std::env::var(ENDPOINT_ENV)
        .ok()
        .filter(|e| !e.trim().is_empty())
        .or_else(|| args.endpoint.clone())
        .ok_or_else(|| {
            CliError::usage(format!("the remote provider needs --endpoint or {ENDPOINT_ENV}"))
        })
}

/// Provider matching `dim`, or probing the service for it when `dim` is `None`.
fn provider(args: &ProviderArgs, dim: Option<usize>) -> Result<SharedProvider, CliError> {
    match args.provider {
        ProviderKind::Fallback => Ok(Arc::new(FallbackEmbedder::new(
            dim.unwrap_or(DEFAULT_FALLBACK_DIM),
        ))),
        ProviderKind::Remote => {
            let mut config = RemoteConfig::new(endpoint(args)?);
            if let Some(dim) = dim {
                config = config.with_dim(dim);
            }
            Ok(Arc::new(RemoteEmbedder::connect(config)?))
        }
    }
}

fn build_timestamp() -> Result<u64, CliError> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("SOURCE_DATE_EPOCH `{v}` is not a Unix timestamp"))),
        Err(_) => Ok(SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())),
    }
}

fn ingest(args: IngestArgs) -> Result<(), CliError> {
    if args.out.exists() && !args.force {
        return Err(CliError::usage(format!(
            "{} already exists (use --force to overwrite)",
            args.out.display()
        )));
    }
    let mut ingestor = Ingestor::new(NormalizationConfig::default(), args.threshold)?;
    let tmp = temp_path(&args.out);
    let result = (|| {
        let file = File::create(&tmp)
            .map_err(|e| CliError::usage(format!("{}: {e}", tmp.display())))?;
        let mut out = BufWriter::new(file);
        for input in &args.input {
            ingestor.ingest_path(input, &mut out)?;
        }
        out.flush()
            .map_err(|e| CliError::data(format!("{}: {e}", tmp.display())))
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }

    let report = ingestor.into_report();
    write_json(io::stdout().lock(), &report).map_err(stdout_error)?;
    if report.records_rejected > 0 {
        for r in &report.rejections {
            warn!("{}:{}: {}", r.source, r.line, r.message);
        }
        if args.strict {
            let _ = fs::remove_file(&tmp);
            return Err(CliError::data(format!(
                "{} record(s) rejected (--strict)",
                report.records_rejected
            )));
        }
    }
    fs::rename(&tmp, &args.out)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.out.display())))?;
    info!(
        kept = report.relations_kept,
        rejected = report.records_rejected,
        "wrote {}",
        args.out.display()
    );
    Ok(())
}

fn build(args: BuildArgs) -> Result<(), CliError> {
    if args.index.exists() && !args.force {
        return Err(CliError::usage(format!(
            "{} already exists (use --force to replace it)",
            args.index.display()
        )));
    }
    let timestamp = build_timestamp()?;
    let reader = open_input(&args.input)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.input.display())))?;
    let relations = read_relations(reader)
        .map_err(|e| CliError::data(format!("{}: {e}", args.input.display())))?;
    let provider = provider(&args.provider, None)?;
    let options = BuildOptions {
        build_timestamp: timestamp,
        ..BuildOptions::default()
    };
    let index: Index = build_index(relations, &provider, &options)?;
    write_index_dir(&index, &args.index, args.force)?;
    write_json(io::stdout().lock(), index.manifest()).map_err(stdout_error)
}

fn load(index: &Path, args: &ProviderArgs) -> Result<(Index, SharedProvider), CliError> {
    let index: Index = load_index(index)?;
    let provider = provider(args, Some(index.dim()))?;
    index.check_provider(provider.as_ref())?;
    Ok((index, provider))
}

fn search(args: SearchArgs) -> Result<(), CliError> {
    let (index, provider) = load(&args.index, &args.provider)?;
    let query = RelationQuery::new(args.e1)
        .with_e2(args.e2)
        .with_class(args.class.map(Into::into))
        .with_k(args.k)
        .symmetric(args.symmetric)
        .with_min_confidence(args.threshold);
    let output = search_threshold(&query, &index, provider.as_ref())?;
    let rows: Vec<ResultRow> = output.results.into_iter().map(ResultRow::from).collect();
    write_results(io::stdout().lock(), &rows, args.format == Format::Tsv).map_err(stdout_error)
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let file = File::open(&args.input)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.input.display())))?;
    let with_path = |e: mechkb_core::eval::EvalError| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", args.input.display(), err.message);
        err
    };
    match args.mode {
        EvalMode::Ranking => {
            let queries = read_label_csv(file).map_err(with_path)?;
            let report = RankingReport::compute(&queries, args.k).map_err(with_path)?;
            if let Some(out) = &args.out {
                let f = File::create(out)
                    .map_err(|e| CliError::usage(format!("{}: {e}", out.display())))?;
                report.write_pr_csv(BufWriter::new(f))?;
            }
            write_json(io::stdout().lock(), &report).map_err(stdout_error)
        }
        EvalMode::Agreement => {
            let (a, b) = read_agreement_csv(file).map_err(with_path)?;
            let report = AgreementReport::compute(&a, &b).map_err(with_path)?;
            write_json(io::stdout().lock(), &report).map_err(stdout_error)
        }
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    {
        let term = async {
            match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
                Ok(mut s) => {
                    s.recv().await;
                }
                Err(_) => std::future::pending().await,
            }
        };
        tokio::select! {
            _ = ctrl_c => {}
            _ = term => {}
        }
    }
    #[cfg(not(unix))]
    ctrl_c.await;
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::usage(format!("starting runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .map_err(|e| CliError::usage(format!("binding {}: {e}", args.bind)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::usage(e.to_string()))?;
        let state = ServiceState::new();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(mechkb_service::serve(listener, state.clone(), async {
            let _ = stopped.await;
        }));
        info!("listening on {addr}, loading {}", args.index.display());

        let dir = args.index.clone();
        let provider_args = args.provider.clone();
        let loading = tokio::task::spawn_blocking(move || load(&dir, &provider_args));
        let signal = shutdown_signal();
        tokio::pin!(signal);
        let loaded = tokio::select! {
            joined = loading => joined.map_err(|e| CliError::usage(e.to_string())).and_then(|r| r),
            _ = &mut signal => {
                info!("interrupted while loading");
                let _ = stop.send(());
                let _ = server.await;
                return Ok(());
            }
        };
        let outcome = match loaded {
            Ok((index, provider)) => {
                state
                    .install(index, provider)
                    .map_err(|e| CliError::usage(e.to_string()))?;
                info!("ready on http://{addr}");
                signal.await;
                info!("shutting down");
                Ok(())
            }
            Err(e) => Err(e),
        };
        let _ = stop.send(());
        match server.await {
            Ok(Ok(())) => outcome,
            Ok(Err(e)) => outcome.and(Err(CliError::usage(format!("server: {e}")))),
            Err(e) => outcome.and(Err(CliError::usage(format!("server task: {e}")))),
        }
    })
}
