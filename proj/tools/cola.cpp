#include "cola/cli.hpp"

int main(int argc, char** argv) { return cola::run(argc, argv); }
