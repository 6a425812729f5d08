//! Timed execution of shell commands with an optional timeout.

use std::io::Read;
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use std::os::unix::process::CommandExt;

use wait_timeout::ChildExt;

#[derive(Debug, Clone)]
pub enum RunOutcome {
    Finished {
        elapsed: Duration,
        status: ExitStatus,
        stdout: String,
        stderr: String,
    },
    TimedOut {
        limit: Duration,
    },
}

/// Runs `command` through `sh -c`, measuring wall-clock time from spawn to
/// exit. The child leads its own process group; on timeout the group is
/// killed and the child reaped.
pub fn run_shell(command: &str, timeout: Option<Duration>, capture_stdout: bool) -> std::io::Result<RunOutcome> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::null())
        .stdout(if capture_stdout { Stdio::piped() } else { Stdio::null() })
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()?;
    let start = Instant::now();
    let stdout_reader = child.stdout.take().map(|mut out| {
        thread::spawn(move || {
            let mut s = String::new();
            let _ = out.read_to_string(&mut s);
            s
        })
    });
    let mut stderr_pipe = child.stderr.take().expect("stderr is piped");
    let stderr_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr_pipe.read_to_string(&mut s);
        s
    });

    let status = match timeout {
        Some(limit) => match child.wait_timeout(limit)? {
            Some(status) => status,
            None => {
                // Kill the whole group so grandchildren of `sh` die too.
                let _ = Command::new("kill")
                    .args(["-KILL", "--", &format!("-{}", child.id())])
                    .stderr(Stdio::null())
                    .status();
                let _ = child.kill();
                let _ = child.wait();
                return Ok(RunOutcome::TimedOut { limit });
            }
        },
        None => child.wait()?,
    };
    let elapsed = start.elapsed();
    let stdout = stdout_reader
        .map(|h| h.join().unwrap_or_default())
        .unwrap_or_default();
    let stderr = stderr_reader.join().unwrap_or_default();
    Ok(RunOutcome::Finished {
        elapsed,
        status,
        stdout,
        stderr,
    })
}
