fn main() {
    std::process::exit(vidmatte::cli::run(std::env::args_os()));
}
