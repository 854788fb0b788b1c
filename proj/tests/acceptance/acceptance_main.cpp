// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Optional arguments select criteria by number.

#include <cstdlib>
#include <iostream>
#include <set>
#include <thread>

#include "acceptance/criteria.hpp"

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  int failed = 0, ran = 0;
  for (const auto& c : vxsplat::acceptance::all_criteria(workers)) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto r = vxsplat::acceptance::run_criterion(c);
    std::cout << vxsplat::acceptance::format_result(r) << std::endl;
    failed += !r.pass;
    ++ran;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
