#include "segfuse/segstack.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "segfuse/errors.hpp"
#include "segfuse/rng.hpp"

namespace segfuse {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'T', 'K'};
constexpr std::uint32_t kVersion = 1;

// Header layout: magic[4] version[4] n_cls[4] h[4] w[4], all u32 LE.
constexpr std::size_t kHeaderSize = 20;

// Caps header fields so a corrupt file cannot request a huge allocation.
constexpr std::uint32_t kMaxClasses = 1u << 16;
constexpr std::uint32_t kMaxSide = 1u << 15;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t take_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

MaskStack MaskStack::zeros(int n_cls, int h, int w) {
  if (n_cls < 0 || h <= 0 || w <= 0) {
    throw std::invalid_argument("MaskStack::zeros: dims must be positive, got " +
                                std::to_string(n_cls) + "x" + std::to_string(h) +
                                "x" + std::to_string(w));
  }
  MaskStack s;
  s.n_cls = n_cls;
  s.h = h;
  s.w = w;
  s.bits.assign(static_cast<std::size_t>(n_cls) * s.bytes_per_class(), 0);
  return s;
}

std::size_t MaskStack::bytes_per_class() const {
  return (static_cast<std::size_t>(h) * static_cast<std::size_t>(w) + 7) / 8;
}

bool MaskStack::get(int cls, int y, int x) const {
  std::size_t px = static_cast<std::size_t>(y) * w + x;
  std::uint8_t byte = bits[cls * bytes_per_class() + px / 8];
  return (byte >> (px % 8)) & 1u;
}

void MaskStack::set(int cls, int y, int x, bool v) {
  std::size_t px = static_cast<std::size_t>(y) * w + x;
  std::uint8_t& byte = bits[cls * bytes_per_class() + px / 8];
  std::uint8_t mask = static_cast<std::uint8_t>(1u << (px % 8));
  if (v) {
    byte |= mask;
  } else {
    byte &= static_cast<std::uint8_t>(~mask);
  }
}

std::int64_t MaskStack::area(int cls) const {
  const std::size_t bpc = bytes_per_class();
  const std::size_t base = cls * bpc;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < bpc; ++i) {
    count += std::popcount(bits[base + i]);
  }
  // The final byte may hold padding bits; set() never writes them, but a
  // stack decoded from external bytes could carry junk there.
  const std::size_t rem = (static_cast<std::size_t>(h) * w) % 8;
  if (rem != 0) {
    std::uint8_t last = bits[base + bpc - 1];
    std::uint8_t pad = static_cast<std::uint8_t>(last >> rem);
    count -= std::popcount(pad);
  }
  return count;
}

int ClassTable::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

MaskStack read_segstack(std::istream& in) {
  unsigned char header[kHeaderSize];
  in.read(reinterpret_cast<char*>(header), kHeaderSize);
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got < kHeaderSize) {
    throw IoError("segstack: truncated header at byte offset " +
                  std::to_string(got));
  }
  if (std::memcmp(header, kMagic, 4) != 0) {
    throw IoError("segstack: bad magic at byte offset 0");
  }
  const std::uint32_t version = take_u32(header + 4);
  if (version != kVersion) {
    throw IoError("segstack: unsupported version " + std::to_string(version) +
                  " at byte offset 4");
  }
  const std::uint32_t n_cls = take_u32(header + 8);
  const std::uint32_t h = take_u32(header + 12);
  const std::uint32_t w = take_u32(header + 16);
  if (n_cls > kMaxClasses || h == 0 || h > kMaxSide || w == 0 || w > kMaxSide) {
    throw IoError("segstack: implausible dims " + std::to_string(n_cls) + "x" +
                  std::to_string(h) + "x" + std::to_string(w) +
                  " at byte offset 8");
  }

  MaskStack s = MaskStack::zeros(static_cast<int>(n_cls), static_cast<int>(h),
                                 static_cast<int>(w));
  in.read(reinterpret_cast<char*>(s.bits.data()),
          static_cast<std::streamsize>(s.bits.size()));
  const std::size_t payload_got = static_cast<std::size_t>(in.gcount());
  if (payload_got < s.bits.size()) {
    throw IoError("segstack: truncated payload at byte offset " +
                  std::to_string(kHeaderSize + payload_got) + " (expected " +
                  std::to_string(kHeaderSize + s.bits.size()) +
                  " bytes total)");
  }
  return s;
}

void write_segstack(const MaskStack& stack, std::ostream& out) {
  const std::size_t expect =
      static_cast<std::size_t>(stack.n_cls) * stack.bytes_per_class();
  if (stack.bits.size() != expect) {
    throw std::invalid_argument("write_segstack: payload holds " +
                                std::to_string(stack.bits.size()) +
                                " bytes, dims require " +
                                std::to_string(expect));
  }
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(stack.n_cls));
  put_u32(out, static_cast<std::uint32_t>(stack.h));
  put_u32(out, static_cast<std::uint32_t>(stack.w));
  out.write(reinterpret_cast<const char*>(stack.bits.data()),
            static_cast<std::streamsize>(stack.bits.size()));
  if (!out) {
    throw IoError("segstack: write failed");
  }
}

MaskStack load_segstack(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("segstack: cannot open " + path);
  }
  try {
    return read_segstack(in);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " [" + path + "]");
  }
}

void save_segstack(const MaskStack& stack, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("segstack: cannot open " + path + " for writing");
  }
  write_segstack(stack, out);
}

MaskStack aggregate_superclasses(const MaskStack& stack,
                                 const SuperclassMap& map) {
  if (static_cast<std::size_t>(stack.n_cls) != map.n_classes()) {
    throw std::invalid_argument(
        "aggregate_superclasses: stack has " + std::to_string(stack.n_cls) +
        " classes, map covers " + std::to_string(map.n_classes()));
  }
  MaskStack out =
      MaskStack::zeros(static_cast<int>(map.n_super()), stack.h, stack.w);
  const std::size_t bpc = stack.bytes_per_class();
  for (int c = 0; c < stack.n_cls; ++c) {
    const int s = map.class_to_super[c];
    if (s < 0 || static_cast<std::size_t>(s) >= map.n_super()) {
      throw std::invalid_argument("aggregate_superclasses: class " +
                                  std::to_string(c) + " is unmapped");
    }
    const std::size_t src = c * bpc;
    const std::size_t dst = static_cast<std::size_t>(s) * bpc;
    for (std::size_t i = 0; i < bpc; ++i) {
      out.bits[dst + i] |= stack.bits[src + i];
    }
  }
  return out;
}

std::vector<int> shuffle_permutation(int n_cls, std::uint64_t seed) {
  std::vector<std::uint32_t> p =
      Rng(seed).permutation(static_cast<std::uint32_t>(n_cls));
  return std::vector<int>(p.begin(), p.end());
}

MaskStack shuffle_classes(const MaskStack& stack, std::uint64_t seed) {
  const std::vector<int> perm = shuffle_permutation(stack.n_cls, seed);
  MaskStack out = MaskStack::zeros(stack.n_cls, stack.h, stack.w);
  const std::size_t bpc = stack.bytes_per_class();
  for (int i = 0; i < stack.n_cls; ++i) {
    const std::size_t src = static_cast<std::size_t>(perm[i]) * bpc;
    std::copy(stack.bits.begin() + src, stack.bits.begin() + src + bpc,
              out.bits.begin() + static_cast<std::size_t>(i) * bpc);
  }
  return out;
}

std::vector<ClassPresence> presence(const MaskStack& stack,
                                    double min_area_fraction) {
  if (!(min_area_fraction >= 0.0 && min_area_fraction < 1.0)) {
    throw std::invalid_argument("presence: min_area_fraction must lie in [0,1), got " +
                                std::to_string(min_area_fraction));
  }
  const double total = static_cast<double>(stack.h) * stack.w;
  std::vector<ClassPresence> out(static_cast<std::size_t>(stack.n_cls));
  for (int c = 0; c < stack.n_cls; ++c) {
    const double frac = static_cast<double>(stack.area(c)) / total;
    out[c].area_fraction = frac;
    out[c].present = frac >= min_area_fraction;
  }
  return out;
}

}  // namespace segfuse
