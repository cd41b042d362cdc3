fn main() {
    std::process::exit(impulsolve::cli::run_command(std::env::args_os()));
}
