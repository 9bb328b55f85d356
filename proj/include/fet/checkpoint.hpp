#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fet/tensor.hpp"

namespace fet::checkpoint {

// Writes each tensor to <dir>/<name>.ften and a manifest.json mapping name -> file.
void save_tensors(const std::filesystem::path& dir, const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                  FtenDtype dtype);

// Reads manifest.json and every tensor it lists.
std::map<std::string, Tensor> load_tensors(const std::filesystem::path& dir);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace fet::checkpoint
