#pragma once

#include <string>
#include <vector>

#include "segfuse/segstack.hpp"

namespace segfuse {

// Directory holding the packaged JSON assets. The SEGFUSE_DATA_DIR
// environment variable overrides the baked-in default.
std::string data_dir();
std::string data_file(const std::string& name);

// Loaders accept an explicit path; with "" they read the packaged file.
ClassTable load_class_table(const std::string& path = "");
SuperclassMap load_superclass_map(const std::string& path = "");
std::vector<std::string> load_findings_prompts(const std::string& path = "");

// Finding -> segmentation class indices, in canonical finding order.
// Findings without a dedicated mask carry an empty list.
struct FindingSegmap {
  std::vector<std::vector<int>> classes;

  bool mapped(int finding) const { return !classes[finding].empty(); }
};

FindingSegmap load_finding_segmap(const std::string& path = "");

}  // namespace segfuse
