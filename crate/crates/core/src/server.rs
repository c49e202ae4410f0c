//! The long-running service: HTTP listener plus the QC, interval, drop
//! directory and MQTT workers, all stopped by one shutdown signal.

use std::collections::HashMap;
use std::future::Future;
use std::io;
use std::sync::Arc;
use std::time::Duration;

use fairstream_ingest::mqtt::run_mqtt;
use fairstream_ingest::{scan_dropdir, MqttBatcher};
use parking_lot::Mutex;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tracing::{info, warn};

use crate::platform::Platform;

/// How often interval-scheduled attachments are checked.
const INTERVAL_TICK: Duration = Duration::from_secs(1);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("http server failed: {0}")]
    Server(#[source] io::Error),
}

/// Resolves on SIGINT or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                warn!(error = %e, "cannot install SIGTERM handler");
                std::future::pending::<()>().await;
            }
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind {
        addr: addr.to_string(),
        source,
    })
}

/// Binds the configured address and serves until `shutdown` resolves.
pub async fn serve(
    platform: Arc<Platform>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let listener = bind(&platform.config().http_bind).await?;
    serve_on(platform, listener, shutdown).await
}

fn spawn_periodic(
    every: Duration,
    mut stop: watch::Receiver<bool>,
    platform: Arc<Platform>,
    job: impl Fn(&Platform) + Send + Sync + 'static,
) -> JoinHandle<()> {
    let job = Arc::new(job);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = tick.tick() => {
                    let (p, job) = (platform.clone(), job.clone());
                    let _ = tokio::task::spawn_blocking(move || job(&p)).await;
                }
                _ = stop.changed() => break,
            }
        }
    })
}

fn spawn_qc_worker(mut stop: watch::Receiver<bool>, platform: Arc<Platform>) -> JoinHandle<()> {
    tokio::spawn(async move {
        loop {
            tokio::select! {
                _ = platform.qc_work_queued() => {
                    let p = platform.clone();
                    let _ = tokio::task::spawn_blocking(move || p.run_pending_qc()).await;
                }
                _ = stop.changed() => break,
            }
        }
    })
}

/// Serves on an already bound listener.
pub async fn serve_on(
    platform: Arc<Platform>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let local = listener.local_addr().map_err(ServeError::Server)?;
    info!(addr = %local, "http listening");
    let (stop_tx, stop_rx) = watch::channel(false);
    let mut workers = vec![spawn_qc_worker(stop_rx.clone(), platform.clone())];

    let last_runs = Arc::new(Mutex::new(HashMap::new()));
    workers.push(spawn_periodic(INTERVAL_TICK, stop_rx.clone(), platform.clone(), move |p| {
        p.run_due_intervals(&mut last_runs.lock())
    }));

    let config = platform.config().clone();
    if let Some(dir) = config.ingest.dropdir.clone() {
        let every = Duration::from_millis(config.ingest.dropdir_scan_interval_ms.max(1));
        workers.push(spawn_periodic(every, stop_rx.clone(), platform.clone(), move |p| {
            match scan_dropdir(&dir, p) {
                Ok(report) if !report.files.is_empty() => {
                    info!(files = report.files.len(), "drop directory scanned")
                }
                Ok(_) => {}
                Err(e) => warn!(error = %e, dir = %dir.display(), "drop directory scan failed"),
            }
        }));
    }
    if config.mqtt.enabled {
        let batcher = MqttBatcher::new(platform.clone());
        workers.push(tokio::spawn(run_mqtt(config.mqtt_settings(), batcher, stop_rx.clone())));
    }

    let app = crate::http::router(platform.clone());
    let served = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    info!("http stopped, draining workers");
    let _ = stop_tx.send(true);
    for w in workers {
        let _ = w.await;
    }
    let p = platform.clone();
    let _ = tokio::task::spawn_blocking(move || p.run_pending_qc()).await;
    served.map_err(ServeError::Server)
}
