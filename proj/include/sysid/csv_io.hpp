// CSV contract: columns t, x1..xd; empty cells mark missing entries.  All
// writes are atomic (write-then-rename).

#pragma once

#include "sysid/discrete_model.hpp"

#include <filesystem>
#include <string>

namespace sysid {

std::string format_observations_csv(const Observations& obs);
Observations parse_observations_csv(const std::string& text);

// Full matrix in the same layout (no missing entries).
std::string format_states_csv(const Eigen::VectorXd& times, const Eigen::MatrixXd& values);

Observations read_observations_csv(const std::filesystem::path& path);
void atomic_write(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// Round-trip-exact double formatting.
std::string format_double(double v);

}  // namespace sysid
