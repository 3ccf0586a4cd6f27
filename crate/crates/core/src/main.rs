fn main() {
    std::process::exit(est_lab::cli::run(std::env::args_os()));
}
