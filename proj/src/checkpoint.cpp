#include "fet/checkpoint.hpp"

#include <fstream>

namespace fet::checkpoint {

namespace fs = std::filesystem;

void save_tensors(const fs::path& dir, const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                  FtenDtype dtype) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [name, t] : tensors) {
    const std::string file = name + ".ften";
    write_ften(dir / file, *t, dtype);
    files[name] = file;
  }
  nlohmann::json manifest{{"format", "FTEN v1"}, {"dtype", dtype == FtenDtype::f32 ? "f32" : "f64"},
                          {"tensors", files}};
  write_json(dir / "manifest.json", manifest);
}

std::map<std::string, Tensor> load_tensors(const fs::path& dir) {
  const auto manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", std::string()) != "FTEN v1" || !manifest.contains("tensors")) {
    throw IoError(dir.string() + "/manifest.json is not an FTEN v1 manifest");
  }
  std::map<std::string, Tensor> out;
  for (const auto& [name, file] : manifest.at("tensors").items()) {
    out.emplace(name, read_ften(dir / file.get<std::string>()));
  }
  return out;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace fet::checkpoint
