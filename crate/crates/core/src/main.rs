fn main() {
    std::process::exit(necklab::cli::main_entry());
}
