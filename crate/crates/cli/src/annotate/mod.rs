//! Human annotation service: hands out words to anonymous sessions, records
//! their answers and tallies the votes of sessions that passed their traps.
//!
//! Every answer is appended to a JSONL log and synced to disk before it is
//! acknowledged; the log is replayed on startup.

mod server;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

pub use server::{router, SharedStore};
pub use store::{
    Ack, KappaCell, Progress, Rejection, SessionCounts, SessionSettings, Store, StoreError, Tallies, Task, WordTally,
    CROWD_SOURCE,
};

pub struct ServeOptions {
    pub addr: SocketAddr,
    pub static_dir: Option<PathBuf>,
}

/// Binds `options.addr` and serves until the process receives Ctrl-C.
/// Prints the bound address to standard output once listening.
pub async fn serve(store: Store, options: ServeOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(options.addr).await?;
    let local = listener.local_addr()?;
    println!("listening on http://{local}");
    let app = router(Arc::new(Mutex::new(store)), options.static_dir);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
