fn main() {
    std::process::exit(checkout_priming::cli::cli_main(std::env::args_os()));
}
