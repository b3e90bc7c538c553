fn main() {
    std::process::exit(mtl_lab::cli::parse_and_dispatch(std::env::args_os()));
}
