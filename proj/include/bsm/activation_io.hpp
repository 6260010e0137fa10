#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsm/cka.hpp"
#include "bsm/error.hpp"

namespace bsm {

// Activation directory layout: one directory per model holding
// manifest.json plus one flat little-endian row-major binary file per layer.
//   manifest.json: { model_id, prompt_ids: [...],
//                    layers: [{ index, rows, cols, dtype, file }] }
// dtype is "float32" or "float64"; matrices are widened to double in memory.

static_assert(std::endian::native == std::endian::little,
              "activation files are little-endian; big-endian hosts are unsupported");

namespace detail {

template <typename T>
Eigen::MatrixXd read_matrix(const std::filesystem::path& file, std::int64_t rows,
                            std::int64_t cols) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open activation file '" + file.string() + "'");
  std::vector<T> buf(static_cast<std::size_t>(rows * cols));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(T)))
    throw DataError("activation file '" + file.string() + "' is shorter than " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  Eigen::MatrixXd m(rows, cols);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c)
      m(r, c) = static_cast<double>(buf[static_cast<std::size_t>(r * cols + c)]);
  return m;
}

}  // namespace detail

inline ActivationSet load_activations(const std::filesystem::path& model_dir) {
  const auto manifest_path = model_dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("cannot open activation manifest '" + manifest_path.string() + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(manifest_path.string() + ": invalid JSON");

  ActivationSet set;
  set.model_id = j.at("model_id").get<std::string>();
  set.prompt_ids = j.at("prompt_ids").get<std::vector<std::string>>();

  struct LayerEntry {
    std::int64_t index, rows, cols;
    std::string dtype, file;
  };
  std::vector<LayerEntry> entries;
  for (const auto& lj : j.at("layers")) {
    entries.push_back({lj.at("index").get<std::int64_t>(), lj.at("rows").get<std::int64_t>(),
                       lj.at("cols").get<std::int64_t>(), lj.at("dtype").get<std::string>(),
                       lj.at("file").get<std::string>()});
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.index < b.index; });

  for (const auto& e : entries) {
    const auto file = model_dir / e.file;
    if (e.dtype == "float32")
      set.layers.push_back(detail::read_matrix<float>(file, e.rows, e.cols));
    else if (e.dtype == "float64")
      set.layers.push_back(detail::read_matrix<double>(file, e.rows, e.cols));
    else
      throw DataError(manifest_path.string() + ": unsupported dtype '" + e.dtype + "'");
  }
  set.validate();
  return set;
}

inline void save_activations(const std::filesystem::path& model_dir, const ActivationSet& set) {
  set.validate();
  std::filesystem::create_directories(model_dir);
  nlohmann::json j;
  j["model_id"] = set.model_id;
  j["prompt_ids"] = set.prompt_ids;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < set.layers.size(); ++l) {
    char name[32];
    std::snprintf(name, sizeof(name), "layer_%03zu.bin", l);
    const auto& M = set.layers[l];
    layers.push_back({{"index", l},
                      {"rows", M.rows()},
                      {"cols", M.cols()},
                      {"dtype", "float64"},
                      {"file", name}});
    std::ofstream out(model_dir / name, std::ios::binary);
    if (!out) throw ConfigError("cannot write activation file '" + (model_dir / name).string() + "'");
    for (Eigen::Index r = 0; r < M.rows(); ++r)
      for (Eigen::Index c = 0; c < M.cols(); ++c) {
        const double v = M(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  }
  j["layers"] = std::move(layers);
  std::ofstream out(model_dir / "manifest.json");
  if (!out) throw ConfigError("cannot write activation manifest in '" + model_dir.string() + "'");
  out << j.dump(2) << "\n";
}

}  // namespace bsm
