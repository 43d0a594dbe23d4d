#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "czc/common.hpp"
#include "czc/image.hpp"

namespace czc {

struct ClassOrder {
  std::vector<int> permutation;
  uint64_t seed = 0;
};

enum class ProtocolKind { LFS, LFH };
enum class BudgetMode { fixed_total, per_class_growing };

struct ProtocolConfig {
  ProtocolKind kind = ProtocolKind::LFS;
  int base_classes = 1;
  int step_classes = 1;
  BudgetMode budget_mode = BudgetMode::fixed_total;
  // fixed_total: total raw-image equivalents; per_class_growing: per class.
  int budget_images = 0;
  int raw_reference_h = 32, raw_reference_w = 32;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct Task {
  std::vector<int> classes;      // original class ids, in curriculum order
  std::vector<int> sample_idx;   // indices into dataset.train
};

struct TaskSequence {
  const Dataset* dataset = nullptr;
  std::vector<Task> tasks;
  std::vector<int> test_idx;  // indices into dataset.test (all classes)
};

inline uint64_t raw_image_bits(int height, int width) {
  if (height < 1 || width < 1) throw ConfigError("raw_image_bits: dims must be >= 1");
  return static_cast<uint64_t>(height) * static_cast<uint64_t>(width) * 24u;
}

inline ClassOrder shuffle_classes(int num_classes, uint64_t seed) {
  if (num_classes < 1) throw ConfigError("shuffle_classes: empty class domain");
  ClassOrder order;
  order.seed = seed;
  order.permutation.resize(static_cast<size_t>(num_classes));
  for (int i = 0; i < num_classes; ++i) order.permutation[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order.permutation);
  return order;
}

inline TaskSequence build_task_sequence(const Dataset& dataset, const ClassOrder& order,
                                        const ProtocolConfig& config) {
  const int n = dataset.num_classes();
  if (static_cast<int>(order.permutation.size()) != n)
    throw ConfigError("class order does not cover the dataset's class set");
  {
    std::vector<bool> seen(static_cast<size_t>(n), false);
    for (int c : order.permutation) {
      if (c < 0 || c >= n || seen[static_cast<size_t>(c)])
        throw ConfigError("class order is not a permutation");
      seen[static_cast<size_t>(c)] = true;
    }
  }
  if (config.base_classes < 1 || config.step_classes < 1)
    throw ConfigError("base_classes and step_classes must be >= 1");
  if (config.base_classes > n || (n - config.base_classes) % config.step_classes != 0)
    throw ConfigError("base/step do not partition the class count exactly");

  TaskSequence seq;
  seq.dataset = &dataset;
  int cursor = 0;
  while (cursor < n) {
    Task task;
    int take = cursor == 0 ? config.base_classes : config.step_classes;
    for (int i = 0; i < take; ++i)
      task.classes.push_back(order.permutation[static_cast<size_t>(cursor + i)]);
    cursor += take;
    seq.tasks.push_back(std::move(task));
  }
  std::vector<int> task_of_class(static_cast<size_t>(n), -1);
  for (size_t t = 0; t < seq.tasks.size(); ++t)
    for (int c : seq.tasks[t].classes) task_of_class[static_cast<size_t>(c)] = static_cast<int>(t);
  for (size_t i = 0; i < dataset.train.size(); ++i) {
    int label = dataset.train[i].label;
    if (label < 0 || label >= n) throw DataError("train sample with out-of-range label");
    seq.tasks[static_cast<size_t>(task_of_class[static_cast<size_t>(label)])].sample_idx.push_back(
        static_cast<int>(i));
  }
  seq.test_idx.resize(dataset.test.size());
  for (size_t i = 0; i < dataset.test.size(); ++i) seq.test_idx[i] = static_cast<int>(i);
  return seq;
}

// ---------------------------------------------------------------------------
// Dataset ingestion. Layouts, in priority order:
//   1. root/manifest      lines: <relative path> <class name> <train|test>
//   2. root/train/<class>/*.png|jpg[, root/test/<class>/*]
//   3. root/<class>/*.png|jpg   (everything becomes the train split)
// Class names map to ids by sorted lexicographic order.

namespace detail {

inline bool has_image_ext(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline std::vector<std::string> sorted_subdirs(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

inline std::vector<std::string> sorted_images(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && has_image_ext(e.path())) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

inline void append_sample(Dataset& ds, const std::filesystem::path& file, int label, bool train,
                          int64_t& next_id) {
  LabeledImage li;
  li.image = read_image(file.string());
  if (li.image.h < 8 || li.image.w < 8)
    throw DataError("image smaller than 8x8: " + file.string());
  li.label = label;
  li.id = next_id++;
  (train ? ds.train : ds.test).push_back(std::move(li));
}

}  // namespace detail

inline Dataset load_dataset(const std::string& root_str) {
  namespace fs = std::filesystem;
  fs::path root(root_str);
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root_str);
  Dataset ds;
  int64_t next_id = 0;

  fs::path manifest = root / "manifest";
  if (fs::is_regular_file(manifest)) {
    std::ifstream in(manifest);
    std::string line;
    std::vector<std::tuple<std::string, std::string, std::string>> rows;
    std::map<std::string, int> class_ids;
    while (std::getline(in, line)) {
      std::istringstream ss(line);
      std::string rel, cls, split;
      if (!(ss >> rel >> cls >> split)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        throw DataError("malformed manifest line: " + line);
      }
      if (split != "train" && split != "test")
        throw DataError("manifest split must be train or test: " + line);
      rows.emplace_back(rel, cls, split);
      class_ids.emplace(cls, 0);
    }
    if (rows.empty()) throw DataError("manifest lists no samples");
    for (auto& [name, id] : class_ids) {
      id = ds.num_classes();
      ds.class_names.push_back(name);
    }
    for (const auto& [rel, cls, split] : rows)
      detail::append_sample(ds, root / rel, class_ids.at(cls), split == "train", next_id);
    return ds;
  }

  bool split_layout = fs::is_directory(root / "train");
  fs::path train_root = split_layout ? root / "train" : root;
  ds.class_names = detail::sorted_subdirs(train_root);
  if (split_layout && fs::is_directory(root / "test")) {
    for (const auto& name : detail::sorted_subdirs(root / "test"))
      if (!std::binary_search(ds.class_names.begin(), ds.class_names.end(), name))
        throw DataError("test split has class absent from train split: " + name);
  }
  if (ds.class_names.empty()) throw DataError("no class directories under " + root_str);
  for (int c = 0; c < ds.num_classes(); ++c) {
    fs::path cdir = train_root / ds.class_names[static_cast<size_t>(c)];
    for (const auto& f : detail::sorted_images(cdir))
      detail::append_sample(ds, cdir / f, c, true, next_id);
  }
  if (split_layout && fs::is_directory(root / "test")) {
    for (int c = 0; c < ds.num_classes(); ++c) {
      fs::path cdir = root / "test" / ds.class_names[static_cast<size_t>(c)];
      if (!fs::is_directory(cdir)) continue;
      for (const auto& f : detail::sorted_images(cdir))
        detail::append_sample(ds, cdir / f, c, false, next_id);
    }
  }
  if (ds.train.empty()) throw DataError("dataset has no training images");
  return ds;
}

}  // namespace czc
