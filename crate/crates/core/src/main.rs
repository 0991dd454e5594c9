fn main() {
    std::process::exit(nablavar::cli::run(std::env::args_os()));
}
