fn main() {
    std::process::exit(tdnr::cli::dispatch(std::env::args_os()));
}
