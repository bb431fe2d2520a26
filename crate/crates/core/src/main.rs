fn main() {
    std::process::exit(poscone::cli::run(std::env::args_os()));
}
