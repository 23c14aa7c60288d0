#include "liverdiff/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace liverdiff {

namespace {
constexpr std::array<char, 8> kMagic{'L', 'D', 'C', 'K', 'P', 'T', '0', '1'};
}

void write_container(const std::filesystem::path& path, const Container& c) {
  nlohmann::json header;
  header["meta"] = c.meta;
  header["blobs"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : c.blobs) {
    header["blobs"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size()) * sizeof(float);
  }
  const std::string text = header.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic.data(), kMagic.size());
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : c.blobs)
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!out) throw std::runtime_error("short write to " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint not found: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (magic != kMagic) throw std::runtime_error(path.string() + " is not a checkpoint container");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);
  const auto data_start = in.tellg();

  Container c;
  c.meta = header.at("meta");
  for (const auto& b : header.at("blobs")) {
    Eigen::MatrixXf m(b.at("rows").get<Eigen::Index>(), b.at("cols").get<Eigen::Index>());
    in.seekg(data_start + static_cast<std::streamoff>(b.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated blob " + b.at("name").get<std::string>() + " in " + path.string());
    c.blobs.emplace(b.at("name").get<std::string>(), std::move(m));
  }
  return c;
}

}  // namespace liverdiff
