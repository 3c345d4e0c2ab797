fn main() {
    std::process::exit(amt_core::cli::run(std::env::args_os()));
}
