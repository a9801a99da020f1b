// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoints. All integers and floats are little-endian:
//
//   offset  size  field
//   0       8     magic "LMNCKPT\0"
//   8       4     u32 format version (1)
//   12      4     u32 task kind (0 add, 1 s4, 2 xor)
//   16      4     i32 modulus
//   20      4     i32 digits
//   24      8     f64 train fraction
//   32      8     u64 split seed
//   40      16    i32 vocab, embed_dim, hidden, out
//   56      8     u64 training step
//   64      ...   f64 tensors: embedding, w1, b1, w2, b2, w3, b3 (row-major)

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmn/mlp.hpp"
#include "lmn/tasks.hpp"

namespace lmn {

inline constexpr std::array<char, 8> kCheckpointMagic = {'L', 'M', 'N', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TaskSpec spec;
  MlpModel model;
  std::uint64_t step = 0;
};

namespace detail {

class ByteWriter {
 public:
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> b) : bytes_(std::move(b)) {}
  void raw(char* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, std::ostream& os) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.spec.kind));
  w.i32(ck.spec.modulus);
  w.i32(ck.spec.digits);
  w.f64(ck.spec.train_fraction);
  w.u64(ck.spec.split_seed);
  const MlpShape& s = ck.model.shape;
  w.i32(s.vocab);
  w.i32(s.embed_dim);
  w.i32(s.hidden);
  w.i32(s.out);
  w.u64(ck.step);
  ck.model.params.for_each([&](std::string_view, const std::vector<double>& t, bool) {
    for (double x : t) w.f64(x);
  });
  os.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  detail::ByteReader r(std::move(bytes));
  std::array<char, 8> magic{};
  r.raw(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ck;
  const std::uint32_t kind = r.u32();
  if (kind > 2) throw std::runtime_error("checkpoint: bad task kind " + std::to_string(kind));
  ck.spec.kind = static_cast<TaskKind>(kind);
  ck.spec.modulus = r.i32();
  ck.spec.digits = r.i32();
  ck.spec.train_fraction = r.f64();
  ck.spec.split_seed = r.u64();
  MlpShape s;
  s.vocab = r.i32();
  s.embed_dim = r.i32();
  s.hidden = r.i32();
  s.out = r.i32();
  if (s.vocab < 1 || s.embed_dim < 1 || s.hidden < 1 || s.out < 1 || s.vocab > (1 << 16) || s.hidden > (1 << 16) ||
      s.embed_dim > (1 << 16) || s.out > (1 << 16))
    throw std::runtime_error("checkpoint: implausible model shape");
  ck.step = r.u64();
  ck.model = MlpModel::zeros(s);
  ck.model.params.for_each([&](std::string_view, std::vector<double>& t, bool) {
    for (double& x : t) x = r.f64();
  });
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(ck, os);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace lmn
