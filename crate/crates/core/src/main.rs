fn main() {
    std::process::exit(mxmclr::cli::run(std::env::args_os()));
}
