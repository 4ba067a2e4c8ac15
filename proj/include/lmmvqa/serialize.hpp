#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lmmvqa {

// Named float64 matrix archive ("LMMVW64" magic, little-endian, row-major).
void save_named_matrices(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, const Eigen::MatrixXd*>>& entries);
std::map<std::string, Eigen::MatrixXd> load_named_matrices(const std::filesystem::path& path);

}  // namespace lmmvqa
