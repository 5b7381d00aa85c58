fn main() {
    std::process::exit(treelstm::cli::run());
}
