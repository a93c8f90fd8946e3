use std::process::exit;

fn main() {
    // die quietly when the read end of a pipe closes, like any unix filter
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    exit(tve_cli::run(std::env::args_os()));
}
