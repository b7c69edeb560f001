#include "ntklev/harness.hpp"

int main(int argc, char** argv) { return ntklev::cli_main(argc, argv); }
