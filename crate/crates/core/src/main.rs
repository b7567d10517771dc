fn main() {
    std::process::exit(ssmrf::cli::run_cli(std::env::args_os()));
}
