fn main() {
    std::process::exit(tailscope::cli::main_with_args(std::env::args_os()));
}
