#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace poex {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A checkpoint is a store-only zip archive: "manifest.json" plus one
// "param/<name>.f32" entry per array (row-major f32, little endian).
// Entries are emitted in sorted order with fixed timestamps, so saving the
// same state twice produces byte-identical files.
struct Checkpoint {
  std::string manifest_json;
  std::map<std::string, Eigen::MatrixXd> arrays;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace poex
