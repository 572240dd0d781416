fn main() {
    std::process::exit(fedcs::harness::cli::cli_run(std::env::args_os()));
}
