//! Logger that writes to stderr and to the run's `run.log` sidecar. Only the
//! sidecar carries timestamps, so data outputs stay free of them.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{Level, LevelFilter, Log, Metadata, Record};

struct RunLogger {
    sidecar: Mutex<Option<File>>,
    stderr_level: Mutex<LevelFilter>,
}

static LOGGER: OnceLock<RunLogger> = OnceLock::new();

fn logger() -> &'static RunLogger {
    LOGGER.get_or_init(|| RunLogger {
        sidecar: Mutex::new(None),
        stderr_level: Mutex::new(LevelFilter::Info),
    })
}

impl Log for RunLogger {
    fn enabled(&self, metadata: &Metadata<'_>) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &Record<'_>) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let mut sidecar = self.sidecar.lock().expect("logger lock");
        // Silent outside a run; callers report their own errors then.
        let Some(f) = sidecar.as_mut() else { return };
        if record.level() <= *self.stderr_level.lock().expect("logger lock") {
            eprintln!("{}: {}", level_name(record.level()), record.args());
        }
        {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
            let _ = writeln!(
                f,
                "{}.{:03} {:5} {}: {}",
                now.as_secs(),
                now.subsec_millis(),
                record.level(),
                record.target(),
                record.args()
            );
        }
    }

    fn flush(&self) {
        if let Some(f) = self.sidecar.lock().expect("logger lock").as_mut() {
            let _ = f.flush();
        }
    }
}

fn level_name(level: Level) -> &'static str {
    match level {
        Level::Error => "error",
        Level::Warn => "warning",
        Level::Info => "info",
        Level::Debug => "debug",
        Level::Trace => "trace",
    }
}

/// Installs the logger once per process and points it at `dir/run.log`.
pub fn start(dir: &Path, verbosity: u8, quiet: bool) -> std::io::Result<()> {
    let l = logger();
    if log::set_logger(l).is_ok() {
        log::set_max_level(LevelFilter::Trace);
    }
    let level = match verbosity {
        0 => LevelFilter::Info,
        1 => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    log::set_max_level(level);
    *l.stderr_level.lock().expect("logger lock") = if quiet { LevelFilter::Error } else { level };
    let file = OpenOptions::new().create(true).append(true).open(dir.join(RUN_LOG))?;
    *l.sidecar.lock().expect("logger lock") = Some(file);
    Ok(())
}

/// Whether a run's sidecar is open.
pub fn active() -> bool {
    LOGGER
        .get()
        .is_some_and(|l| l.sidecar.lock().expect("logger lock").is_some())
}

pub fn stop() {
    if let Some(l) = LOGGER.get() {
        l.flush();
        *l.sidecar.lock().expect("logger lock") = None;
    }
}

pub const RUN_LOG: &str = "run.log";
