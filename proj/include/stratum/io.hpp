#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace stratum::io {

/// Row-major nested array.
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
/// Accepts a rectangular nested array; throws InputError otherwise.
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, std::string_view name = "matrix");
nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j, std::string_view name = "vector");

/// Locale-independent, 17 significant digits; round-trips every finite double.
std::string format_double(double v);
/// Strict parse of a full field; throws FormatError.
double parse_double(std::string_view s);

/// Splits one CSV line on commas (no quoting; our files never need it).
std::vector<std::string_view> split_csv_line(std::string_view line);

/// Plain numeric CSV matrix, one row per line, optional non-numeric header.
Eigen::MatrixXd read_csv_matrix(const std::filesystem::path& path);

/// Writes via a temporary sibling file and rename, so readers never see a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of the file contents.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view data);

}  // namespace stratum::io
