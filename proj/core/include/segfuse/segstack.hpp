#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace segfuse {

// A stack of binary segmentation masks, one H x W plane per class.
//
// Storage is bit-packed: within each class plane, pixels run row-major
// and fill bytes LSB-first; every plane starts on a fresh byte, so
// trailing bits of a plane's last byte are padding and always zero.
struct MaskStack {
  int n_cls = 0;
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> bits;

  static MaskStack zeros(int n_cls, int h, int w);

  std::size_t bytes_per_class() const;

  bool get(int cls, int y, int x) const;
  void set(int cls, int y, int x, bool v);

  // Number of set pixels in one class plane.
  std::int64_t area(int cls) const;
};

// Ordered list of segmentation class names, loaded from the packaged
// class table. Indices are positions in `names`.
struct ClassTable {
  std::vector<std::string> names;

  // Index of `name`, or -1 when absent.
  int index_of(const std::string& name) const;
};

// Assignment of every class index to exactly one superclass. The
// superclass order of `names` is the plane order produced by
// aggregate_superclasses.
struct SuperclassMap {
  std::vector<std::string> names;
  std::vector<int> class_to_super;

  std::size_t n_classes() const { return class_to_super.size(); }
  std::size_t n_super() const { return names.size(); }
};

MaskStack read_segstack(std::istream& in);
void write_segstack(const MaskStack& stack, std::ostream& out);
MaskStack load_segstack(const std::string& path);
void save_segstack(const MaskStack& stack, const std::string& path);

// OR-combines member planes into one plane per superclass.
MaskStack aggregate_superclasses(const MaskStack& stack, const SuperclassMap& map);

// Deterministic seeded permutation of the class axis.
std::vector<int> shuffle_permutation(int n_cls, std::uint64_t seed);
MaskStack shuffle_classes(const MaskStack& stack, std::uint64_t seed);

struct ClassPresence {
  bool present = false;
  double area_fraction = 0.0;
};

std::vector<ClassPresence> presence(const MaskStack& stack,
                                    double min_area_fraction = 0.001);

}  // namespace segfuse
