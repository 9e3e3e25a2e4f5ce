#include <catch2/catch_amalgamated.hpp>

#include "support/testutil.hpp"

int main(int argc, char** argv) {
  testutil::set_exe_path(argv[0]);
  return Catch::Session().run(argc, argv);
}
