use std::net::{IpAddr, SocketAddr};
use std::process::ExitCode;

use clap::Parser;
use lsm_service::{app, ServiceConfig, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "lsm-service", version, about = "Interactive segmentation sessions over HTTP")]
struct Args {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Origin allowed to call the API from a browser; repeatable.
    #[arg(long)]
    allow_origin: Vec<String>,
    /// Largest accepted image width and height.
    #[arg(long, default_value_t = 1024)]
    max_dim: usize,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let config = ServiceConfig {
        max_width: args.max_dim,
        max_height: args.max_dim,
        allow_origins: args.allow_origin,
        ..ServiceConfig::default()
    };
    let router = match app(config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let addr = SocketAddr::new(args.host, args.port);
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {addr}: {e}");
            return ExitCode::FAILURE;
        }
    };
    eprintln!("listening on http://{addr}");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if let Err(e) = axum::serve(listener, router).with_graceful_shutdown(shutdown).await {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
