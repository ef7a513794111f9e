fn main() {
    std::process::exit(dged::cli::run(std::env::args_os()));
}
