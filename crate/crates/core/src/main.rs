fn main() {
    std::process::exit(pairre::cli::run(std::env::args_os()));
}
