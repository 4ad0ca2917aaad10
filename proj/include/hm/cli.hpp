#pragma once

namespace hm::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Entry point shared by the hm binary and in-process tests.
int run(int argc, const char* const* argv);

}  // namespace hm::cli
