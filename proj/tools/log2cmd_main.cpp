#include "log2cmd/pipeline.hpp"

int main(int argc, char** argv) { return log2cmd::run(argc, argv); }
