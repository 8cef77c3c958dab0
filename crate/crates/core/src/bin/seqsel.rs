fn main() {
    std::process::exit(seqsel::cli::run_from_args(std::env::args_os()));
}
