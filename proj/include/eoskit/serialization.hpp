#pragma once

#include "eoskit/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <initializer_list>
#include <string>

namespace eoskit::io {

using json = nlohmann::json;

// Raw matrix container: a single-line JSON header terminated by '\n',
// followed by rows*cols little-endian IEEE-754 doubles in row-major order.
// The header must carry "rows"/"cols" or enough fields to derive them.
void write_matrix(const std::filesystem::path& path, json header, const Mat& m);
Mat read_matrix(const std::filesystem::path& path, json* header_out = nullptr);

json to_json(const Mat& m);
json to_json(const Vec& v);
Mat mat_from_json(const json& j);
Vec vec_from_json(const json& j);

// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section);

// Finite numbers as-is; infinity as the string "inf".
json number_or_inf(double v);
double number_or_inf(const json& j);

void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

}  // namespace eoskit::io
