#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskfuse/arch/network.hpp"
#include "taskfuse/arch/params.hpp"
#include "taskfuse/core/rng.hpp"

namespace taskfuse {

// On-disk training state: named float64 arrays plus enough metadata to refuse
// resuming under a different configuration. The encoding is explicit
// little-endian so files are portable across hosts.
struct NamedArray {
  std::vector<int> shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::string phase;  // which pipeline stage wrote this state
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::map<std::string, NamedArray> arrays;
};

namespace ckpt_detail {

constexpr char kMagic[4] = {'T', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(ckpt_detail::kMagic, 4);
  ckpt_detail::put_u32(out, ckpt_detail::kVersion);
  ckpt_detail::put_str(out, ckpt.phase);
  ckpt_detail::put_u64(out, ckpt.seed);
  ckpt_detail::put_u64(out, ckpt.config_hash);
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, arr] : ckpt.arrays) {
    ckpt_detail::put_str(out, name);
    ckpt_detail::put_u32(out, static_cast<std::uint32_t>(arr.shape.size()));
    long expect = 1;
    for (int d : arr.shape) {
      ckpt_detail::put_u32(out, static_cast<std::uint32_t>(d));
      expect *= d;
    }
    if (expect != static_cast<long>(arr.data.size()))
      throw std::invalid_argument("checkpoint array " + name + " has inconsistent shape");
    for (double v : arr.data) ckpt_detail::put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("short write to checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), ckpt_detail::kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  ckpt_detail::Reader r{buf, 4};
  const std::uint32_t version = r.u32();
  if (version != ckpt_detail::kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.phase = r.str();
  ckpt.seed = r.u64();
  ckpt.config_hash = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    NamedArray arr;
    const std::uint32_t rank = r.u32();
    long n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      arr.shape.push_back(static_cast<int>(r.u32()));
      n *= arr.shape.back();
    }
    arr.data.resize(static_cast<std::size_t>(n));
    for (double& v : arr.data) v = r.f64();
    ckpt.arrays.emplace(name, std::move(arr));
  }
  return ckpt;
}

// Resuming from state written under a different configuration is an error
// unless the caller explicitly accepts it; then it only earns a warning line.
inline void check_checkpoint_config(const Checkpoint& ckpt, std::uint64_t expected_hash,
                                    bool allow_mismatch,
                                    std::vector<std::string>* warnings = nullptr) {
  if (ckpt.config_hash == expected_hash) return;
  if (!allow_mismatch)
    throw std::runtime_error(
        "checkpoint was written under a different configuration (hash mismatch); "
        "pass the override flag to load it anyway");
  if (warnings)
    warnings->push_back("loading checkpoint despite configuration hash mismatch");
}

inline void put_params(Checkpoint& ckpt, const std::string& prefix, const ParamStore& store) {
  for (std::size_t i = 0; i < store.count(); ++i) {
    const Tensor& t = store.value(i);
    ckpt.arrays[prefix + "/" + store.names()[i]] = NamedArray{t.shape, t.v};
  }
}

inline void take_params(const Checkpoint& ckpt, const std::string& prefix, ParamStore& store) {
  for (std::size_t i = 0; i < store.count(); ++i) {
    const std::string key = prefix + "/" + store.names()[i];
    const auto it = ckpt.arrays.find(key);
    if (it == ckpt.arrays.end())
      throw std::runtime_error("checkpoint is missing array " + key);
    Tensor& t = store.value(i);
    if (it->second.shape != t.shape)
      throw std::runtime_error("checkpoint array " + key + " has the wrong shape");
    t.v = it->second.data;
  }
}

inline void put_alpha(Checkpoint& ckpt, const std::string& name,
                      const ArchitectureWeights& alpha) {
  for (std::size_t e = 0; e < alpha.logits.size(); ++e) {
    const Tensor& t = alpha.logits[e];
    ckpt.arrays[name + "/edge" + std::to_string(e)] = NamedArray{t.shape, t.v};
  }
}

inline void take_alpha(const Checkpoint& ckpt, const std::string& name,
                       ArchitectureWeights& alpha) {
  for (std::size_t e = 0; e < alpha.logits.size(); ++e) {
    const std::string key = name + "/edge" + std::to_string(e);
    const auto it = ckpt.arrays.find(key);
    if (it == ckpt.arrays.end())
      throw std::runtime_error("checkpoint is missing array " + key);
    Tensor& t = alpha.logits[e];
    if (it->second.shape != t.shape)
      throw std::runtime_error("checkpoint array " + key + " has the wrong shape");
    t.v = it->second.data;
  }
}

// Content hash of an arbitrary file, for cheap equality checks between runs.
inline std::uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a64(buf);
}

}  // namespace taskfuse
