#pragma once

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <string>

namespace liverdiff {

/// Self-describing binary container: an 8-byte magic, a little-endian u64
/// header length, a JSON header (metadata plus blob table), then raw float32
/// blob data in column-major order.
struct Container {
  nlohmann::json meta;
  std::map<std::string, Eigen::MatrixXf> blobs;
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace liverdiff
