fn main() {
    std::process::exit(hmm_realize::cli::run(std::env::args_os()));
}
