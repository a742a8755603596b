#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "svlad/errors.hpp"
#include "svlad/optimizer.hpp"
#include "svlad/params.hpp"
#include "svlad/s3c.hpp"
#include "svlad/tensor.hpp"

namespace svlad {

// Self-describing binary checkpoint: magic "SVLD", version, config hash, the
// embedded config JSON, then length-prefixed named tensor sections (params,
// Adam moments, auxiliary tensors) and the cluster states. All integers and
// IEEE doubles are little-endian; save -> load -> save is byte-identical.
struct CheckpointData {
  std::uint64_t config_hash = 0;
  std::string config_json;
  std::uint64_t epoch_next = 0;
  ModelParams params;
  AdamState adam;
  std::map<std::string, Tensor> aux;
  std::vector<ClusterState> clusters;
};

namespace detail {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}
inline void put_tensor(std::string& out, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t i = 0; i < t.rank(); ++i) put_u64(out, t.extent(i));
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
}
inline void put_section(std::string& out, const std::map<std::string, Tensor>& section) {
  put_u64(out, section.size());
  for (const auto& [name, t] : section) {
    put_str(out, name);
    put_tensor(out, t);
  }
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint8_t u8() {
    need(1);
    return byte();
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t len = u32();
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }
  Tensor tensor() {
    const std::uint32_t rank = u32();
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = u64();
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = f64();
    return t;
  }
  std::map<std::string, Tensor> section() {
    std::map<std::string, Tensor> out;
    const std::uint64_t count = u64();
    for (std::uint64_t i = 0; i < count; ++i) {
      std::string name = str();
      out.emplace(std::move(name), tensor());
    }
    return out;
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  std::uint8_t byte() { return static_cast<std::uint8_t>(bytes_[pos_++]); }
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointData& ck) {
  std::string out;
  out.append("SVLD");
  detail::put_u32(out, detail::kCheckpointVersion);
  detail::put_u64(out, ck.config_hash);
  detail::put_str(out, ck.config_json);
  detail::put_u64(out, ck.epoch_next);
  detail::put_section(out, ck.params);
  detail::put_u64(out, ck.adam.t);
  detail::put_section(out, ck.adam.m);
  detail::put_section(out, ck.adam.v);
  detail::put_section(out, ck.aux);
  detail::put_u64(out, ck.clusters.size());
  for (const ClusterState& st : ck.clusters) {
    detail::put_u64(out, st.C);
    detail::put_f64(out, st.alpha);
    out.push_back(st.active ? 1 : 0);
    out.push_back(st.Z.empty() ? 0 : 1);
    if (!st.Z.empty()) detail::put_tensor(out, st.Z);
    detail::put_u64(out, st.assignments.size());
    for (const auto& [id, idx] : st.assignments) {
      detail::put_str(out, id);
      detail::put_u64(out, idx);
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || bytes.compare(0, 4, "SVLD") != 0)
    throw IoError("not a checkpoint file: " + path.string());
  detail::Reader r(bytes.substr(4));
  const std::uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  CheckpointData ck;
  ck.config_hash = r.u64();
  ck.config_json = r.str();
  ck.epoch_next = r.u64();
  ck.params = r.section();
  ck.adam.t = r.u64();
  ck.adam.m = r.section();
  ck.adam.v = r.section();
  ck.aux = r.section();
  const std::uint64_t n_states = r.u64();
  for (std::uint64_t i = 0; i < n_states; ++i) {
    ClusterState st;
    st.C = r.u64();
    st.alpha = r.f64();
    st.active = r.u8() != 0;
    const bool has_z = r.u8() != 0;
    if (has_z) st.Z = r.tensor();
    const std::uint64_t n_assign = r.u64();
    for (std::uint64_t a = 0; a < n_assign; ++a) {
      std::string id = r.str();
      st.assignments.emplace(std::move(id), r.u64());
    }
    ck.clusters.push_back(std::move(st));
  }
  if (!r.exhausted()) throw IoError("trailing bytes in checkpoint " + path.string());
  return ck;
}

}  // namespace svlad
