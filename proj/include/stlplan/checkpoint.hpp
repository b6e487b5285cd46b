#ifndef STLPLAN_CHECKPOINT_HPP
#define STLPLAN_CHECKPOINT_HPP

#include "stlplan/errors.hpp"
#include "stlplan/params.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace stlplan::ad {

// Checkpoint container: 8-byte magic, u32 JSON header length, JSON header
// (names, shapes, dtype f64, version, free-form string meta), then the raw
// array payloads little-endian in header order.
inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'L', 'P', 'C', 'K', 'P', 'T'};
inline constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

struct Checkpoint {
  // name -> matrix, in explicit order
  std::vector<std::pair<std::string, Mat>> arrays;
  std::map<std::string, std::string> meta;

  void add(const std::string& name, const Mat& m) { arrays.emplace_back(name, m); }

  const Mat* find(const std::string& name) const {
    for (const auto& [n, m] : arrays)
      if (n == name) return &m;
    return nullptr;
  }

  const Mat& require(const std::string& name) const {
    const Mat* m = find(name);
    if (!m) throw IoError("checkpoint missing array: " + name);
    return *m;
  }

  std::string meta_at(const std::string& key, const std::string& fallback = "") const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["dtype"] = "f64";
  nlohmann::json names = nlohmann::json::array();
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& [name, m] : ck.arrays) {
    names.push_back(name);
    shapes.push_back({m.rows(), m.cols()});
  }
  header["names"] = names;
  header["shapes"] = shapes;
  header["meta"] = ck.meta;
  std::string hs = header.dump();

  // temp + rename so interrupted writes never leave a truncated file
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + tmp.string());
    os.write(kCheckpointMagic, 8);
    std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    os.write(reinterpret_cast<const char*>(&hlen), 4);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, m] : ck.arrays) {
      // row-major element order
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        os.write(reinterpret_cast<const char*>(m.row(r).eval().data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.cols())));
    }
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  std::uint32_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), 4);
  std::string hs(hlen, '\0');
  is.read(hs.data(), hlen);
  if (!is) throw IoError("truncated checkpoint header: " + path.string());
  nlohmann::json header = nlohmann::json::parse(hs);
  if (header.at("version").get<int>() != kCheckpointVersion)
    throw IoError("unsupported checkpoint version");
  if (header.at("dtype").get<std::string>() != "f64") throw IoError("unsupported dtype");

  Checkpoint ck;
  if (header.contains("meta"))
    ck.meta = header["meta"].get<std::map<std::string, std::string>>();
  auto names = header.at("names");
  auto shapes = header.at("shapes");
  for (std::size_t i = 0; i < names.size(); ++i) {
    Eigen::Index rows = shapes[i][0].get<Eigen::Index>();
    Eigen::Index cols = shapes[i][1].get<Eigen::Index>();
    Mat m(rows, cols);
    std::vector<double> buf(static_cast<std::size_t>(rows * cols));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(sizeof(double) * buf.size()));
    if (!is) throw IoError("truncated checkpoint payload: " + path.string());
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        m(r, c) = buf[static_cast<std::size_t>(r * cols + c)];
    ck.arrays.emplace_back(names[i].get<std::string>(), std::move(m));
  }
  return ck;
}

// ---- ParamSet <-> checkpoint (values + Adam moments) ----

inline void pack_params(Checkpoint& ck, const ParamSet& ps, const std::string& prefix) {
  for (std::size_t i = 0; i < ps.count(); ++i)
    ck.add(prefix + ps.names()[i], ps.value_at(i));
}

inline void pack_adam(Checkpoint& ck, ParamSet& ps, const std::string& prefix) {
  for (std::size_t i = 0; i < ps.count(); ++i) {
    AdamState& st = ps.adam_at(i);
    if (st.m.size() == 0) continue;
    ck.add(prefix + ps.names()[i] + ".m", st.m);
    ck.add(prefix + ps.names()[i] + ".v", st.v);
    Mat stp(1, 1);
    stp(0, 0) = static_cast<double>(st.step);
    ck.add(prefix + ps.names()[i] + ".t", stp);
  }
}

inline void unpack_params(const Checkpoint& ck, ParamSet& ps, const std::string& prefix) {
  for (std::size_t i = 0; i < ps.count(); ++i) {
    const Mat& src = ck.require(prefix + ps.names()[i]);
    Mat& dst = ps.value_at(i);
    if (src.rows() != dst.rows() || src.cols() != dst.cols())
      throw IoError("checkpoint shape mismatch for " + ps.names()[i]);
    dst = src;
  }
}

inline void unpack_adam(const Checkpoint& ck, ParamSet& ps, const std::string& prefix) {
  for (std::size_t i = 0; i < ps.count(); ++i) {
    const Mat* m = ck.find(prefix + ps.names()[i] + ".m");
    if (!m) continue;
    AdamState& st = ps.adam_at(i);
    st.m = *m;
    st.v = ck.require(prefix + ps.names()[i] + ".v");
    st.step = static_cast<long>(ck.require(prefix + ps.names()[i] + ".t")(0, 0));
  }
}

}  // namespace stlplan::ad

#endif
