#include "segfuse/ontology.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "segfuse/ce_label.hpp"
#include "segfuse/errors.hpp"

namespace segfuse {

namespace {

using nlohmann::json;

json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open data file " + path);
  }
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

std::string resolve(const std::string& path, const char* fallback) {
  return path.empty() ? data_file(fallback) : path;
}

}  // namespace

std::string data_dir() {
  if (const char* env = std::getenv("SEGFUSE_DATA_DIR"); env && *env) {
    return env;
  }
  return SEGFUSE_DEFAULT_DATA_DIR;
}

std::string data_file(const std::string& name) {
  return data_dir() + "/" + name;
}

ClassTable load_class_table(const std::string& path) {
  const std::string file = resolve(path, "seg_classes.json");
  const json doc = parse_file(file);

  const auto& classes = doc.at("classes");
  ClassTable table;
  table.names.reserve(classes.size());
  std::set<std::string> seen;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& entry = classes.at(i);
    if (entry.at("index").get<std::size_t>() != i) {
      throw std::invalid_argument("class table " + file +
                                  ": indices not contiguous at position " +
                                  std::to_string(i));
    }
    std::string name = entry.at("name").get<std::string>();
    if (!seen.insert(name).second) {
      throw std::invalid_argument("class table " + file +
                                  ": duplicate name \"" + name + "\"");
    }
    table.names.push_back(std::move(name));
  }
  if (table.names.size() != 212) {
    throw std::invalid_argument("class table " + file + ": expected 212 classes, got " +
                                std::to_string(table.names.size()));
  }
  return table;
}

SuperclassMap load_superclass_map(const std::string& path) {
  const std::string file = resolve(path, "seg_classes.json");
  const json doc = parse_file(file);

  SuperclassMap map;
  for (const auto& name : doc.at("superclasses")) {
    map.names.push_back(name.get<std::string>());
  }
  if (map.names.size() != 20) {
    throw std::invalid_argument("superclass map " + file +
                                ": expected 20 superclasses, got " +
                                std::to_string(map.names.size()));
  }

  const auto& classes = doc.at("classes");
  map.class_to_super.resize(classes.size(), -1);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const std::string super = classes.at(i).at("superclass").get<std::string>();
    int slot = -1;
    for (std::size_t s = 0; s < map.names.size(); ++s) {
      if (map.names[s] == super) {
        slot = static_cast<int>(s);
        break;
      }
    }
    if (slot < 0) {
      throw std::invalid_argument("superclass map " + file + ": class " +
                                  std::to_string(i) +
                                  " names unknown superclass \"" + super +
                                  "\"");
    }
    map.class_to_super[i] = slot;
  }

  // The last two groups are fixed by construction: pathology covers
  // 177-189 and foreign objects covers 190-211.
  auto require_group = [&](int lo, int hi, const std::string& name) {
    for (int i = lo; i <= hi; ++i) {
      if (map.names[map.class_to_super[static_cast<std::size_t>(i)]] != name) {
        throw std::invalid_argument("superclass map " + file + ": class " +
                                    std::to_string(i) + " must belong to \"" +
                                    name + "\"");
      }
    }
  };
  if (map.class_to_super.size() == 212) {
    require_group(177, 189, "pathology");
    require_group(190, 211, "foreign objects");
  }
  return map;
}

std::vector<std::string> load_findings_prompts(const std::string& path) {
  const std::string file = resolve(path, "findings_prompts.json");
  const json doc = parse_file(file);
  std::vector<std::string> prompts;
  for (const auto& p : doc.at("prompts")) {
    prompts.push_back(p.get<std::string>());
  }
  if (prompts.empty()) {
    throw std::invalid_argument("prompt list " + file + " is empty");
  }
  return prompts;
}

FindingSegmap load_finding_segmap(const std::string& path) {
  const std::string file = resolve(path, "finding_segmap.json");
  const json doc = parse_file(file);

  FindingSegmap map;
  map.classes.resize(kFindingNames.size());
  for (std::size_t f = 0; f < kFindingNames.size(); ++f) {
    const std::string key(kFindingNames[f]);
    if (!doc.contains(key)) {
      throw std::invalid_argument("segmentation mapping " + file +
                                  ": missing finding \"" + key + "\"");
    }
    for (const auto& idx : doc.at(key)) {
      const int v = idx.get<int>();
      if (v < 0 || v >= 212) {
        throw std::invalid_argument("segmentation mapping " + file +
                                    ": class index " + std::to_string(v) +
                                    " out of range for \"" + key + "\"");
      }
      map.classes[f].push_back(v);
    }
  }
  return map;
}

}  // namespace segfuse
