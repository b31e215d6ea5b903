#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace kfv {

// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
// Failures print one line "kfv: error: <kind>: <message>" to err.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string sha256_hex(std::string_view bytes);

}  // namespace kfv
