fn main() {
    std::process::exit(covshift_conformal::cli::run(std::env::args_os()));
}
