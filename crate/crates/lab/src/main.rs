fn main() {
    std::process::exit(dpfl_lab::cli::run(std::env::args_os()));
}
