// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// nonzero if any failed. With no arguments every criterion runs; otherwise
// the arguments are criterion ids or suite names.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "kdgm/bench.hpp"

int main(int argc, char** argv) {
  using namespace kdgm;
  std::vector<int> ids;
  try {
    for (int i = 1; i < argc; ++i) {
      const std::string a = argv[i];
      if (!a.empty() && a.find_first_not_of("0123456789") == std::string::npos) {
        ids.push_back(std::stoi(a));
      } else {
        const auto it = bench::suites().find(a);
        if (it == bench::suites().end()) throw ConfigError("unknown suite '" + a + "'; available: " + bench::suite_list());
        ids.insert(ids.end(), it->second.begin(), it->second.end());
      }
    }
    if (ids.empty()) ids = bench::suites().at("all");

    bench::Context ctx({}, &std::cerr);
    bool all = true;
    for (int id : ids) {
      const auto r = bench::run({id}, ctx).front();
      std::cout << bench::format_line(r) << std::endl;
      all = all && r.passed;
    }
    return all ? EXIT_SUCCESS : EXIT_FAILURE;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_FAILURE;
  }
}
