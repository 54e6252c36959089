fn main() {
    std::process::exit(vcnn::cli::cli_main(std::env::args_os()));
}
