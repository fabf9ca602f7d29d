fn main() {
    std::process::exit(qie::cli::run(std::env::args_os()));
}
