fn main() {
    std::process::exit(layersynth::cli::run(std::env::args_os()));
}
