#include "enes/cli.hpp"

int main(int argc, char** argv) { return enes::run(argc, argv); }
