#include "mpcil/cli.hpp"

int main(int argc, char** argv) { return mpcil::CliMain(argc, argv); }
