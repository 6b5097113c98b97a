#pragma once

// dlcz-lab command implementations.
//
//   dlcz-lab characterize|entangle|sweep|analyze|reproduce [--config F]
//            [--set section.key=value]... [--seed S] [--threads N] [--out DIR]
//
// Exit codes: 0 success, 1 other failure, 2 config or usage error,
// 3 estimation or fit failure, 4 unphysical inversion.

#include <iosfwd>
#include <string>
#include <vector>

namespace dlcz::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitFit = 3;
inline constexpr int kExitUnphysical = 4;

std::vector<std::string> preset_names();
/// Bundled config text for reproduce targets (table1, fig2, fig3).
std::string preset_text(const std::string& name);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dlcz::cli
