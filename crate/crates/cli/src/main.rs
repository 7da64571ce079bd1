fn main() {
    std::process::exit(mfhmc_cli::run(std::env::args_os()));
}
